"""Compiled inner loops for tracer integration.

Evaluating ``sin(k.x + theta)`` for every mode at every step dominates the
cost.  Instead each path carries ``cos`` and ``sin`` of all its mode phases and
rotates them by the phase increment ``k . dX``.  The increment is small, so its
cosine and sine come from a short Taylor series evaluated at a quarter of the
angle followed by two angle doublings; this vectorizes over modes.  Callers
re-synchronize the carried phases from the exact positions between chunks,
which bounds round-off growth to one chunk.
"""

from __future__ import annotations

import os

import numba
import numpy as np

# the TBB layer shipped with some numba wheels is too old; workqueue is always present
if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER = "workqueue"

ESCAPE_RADIUS = 1e8

# Taylor coefficients of cos and sin up to degree 18/19
_C = (-1 / 2, 1 / 24, -1 / 720, 1 / 40320, -1 / 3628800, 1 / 479001600,
      -1 / 87178291200, 1 / 20922789888000, -1 / 6402373705728000)
_S = (-1 / 6, 1 / 120, -1 / 5040, 1 / 362880, -1 / 39916800, 1 / 6227020800,
      -1 / 1307674368000, 1 / 355687428096000, -1 / 121645100408832000)


@numba.njit(fastmath=True, cache=True, inline="always")
def _cos_sin_small(v):
    # v = u / 4, |u| rarely above 3 for dt <= 0.1
    v2 = v * v
    a = 1.0 + v2 * (_C[0] + v2 * (_C[1] + v2 * (_C[2] + v2 * (_C[3] + v2 * (
        _C[4] + v2 * (_C[5] + v2 * (_C[6] + v2 * (_C[7] + v2 * _C[8]))))))))
    b = v * (1.0 + v2 * (_S[0] + v2 * (_S[1] + v2 * (_S[2] + v2 * (_S[3] + v2 * (
        _S[4] + v2 * (_S[5] + v2 * (_S[6] + v2 * (_S[7] + v2 * _S[8])))))))))
    t = 2.0 * a * b
    a = a * a - b * b
    b = t
    t = 2.0 * a * b
    a = a * a - b * b
    return a, t


@numba.njit(fastmath=True, cache=True, parallel=True)
def advance_paths(X, C, S, kx, ky, amp, noise, eps, dt, rec_step, rec_slot, out, alive):
    """Advance every path in the batch by ``noise.shape[1]`` Euler-Maruyama steps.

    X: (B, 2) positions, updated in place.  C, S: (B, m) carried cos/sin of
    mode phases.  noise: (B, n, 2) standard normals.  rec_step/rec_slot: local
    step counts (after which to record) and output slots; out: (B, R, 2).
    alive: (B,) flags; a path that leaves ESCAPE_RADIUS or turns non-finite is
    frozen and flagged.
    """
    B, m = C.shape
    nst = noise.shape[1]
    nrec = rec_step.shape[0]
    sq = np.sqrt(2.0 * dt)
    edt = eps * dt
    for p in numba.prange(B):
        if not alive[p]:
            continue
        x = X[p, 0]
        y = X[p, 1]
        c = C[p]
        s = S[p]
        r = 0
        while r < nrec and rec_step[r] == 0:
            out[p, rec_slot[r], 0] = x
            out[p, rec_slot[r], 1] = y
            r += 1
        for n in range(nst):
            # b = J grad psi = sum_j a_j sin(phase_j) (ky_j, -kx_j)
            bx = 0.0
            by = 0.0
            for j in range(m):
                w = amp[j] * s[j]
                bx += w * ky[j]
                by -= w * kx[j]
            dx = edt * bx + sq * noise[p, n, 0]
            dy = edt * by + sq * noise[p, n, 1]
            x += dx
            y += dy
            for j in range(m):
                a, t = _cos_sin_small(0.25 * (kx[j] * dx + ky[j] * dy))
                cn = c[j] * a - s[j] * t
                s[j] = s[j] * a + c[j] * t
                c[j] = cn
            if not (abs(x) < ESCAPE_RADIUS and abs(y) < ESCAPE_RADIUS):
                alive[p] = False
                break
            while r < nrec and rec_step[r] == n + 1:
                out[p, rec_slot[r], 0] = x
                out[p, rec_slot[r], 1] = y
                r += 1
        X[p, 0] = x
        X[p, 1] = y
