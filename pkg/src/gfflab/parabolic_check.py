"""Energy representation of the tracer MSD on a periodized field.

On a torus of side ``B`` with a divergence-free drift the uniform measure is
invariant, and for tracers started uniformly

    1/2 mean (xi . (X_T - X_0))^2 = T + 1/2 mean v(T)^2 + int_0^T mean |grad v|^2

holds for every field realization, where ``v`` solves

    d_t v - Lap v + eps b . (xi + grad v) = 0,   v(0) = 0.

The field uses wavevectors on the dual lattice ``(2 pi / B) Z^2`` so that it is
exactly periodic; ``v`` is advanced pseudo-spectrally with the diffusion
handled by an integrating factor, which makes the transport term exactly
skew-symmetric and the diffusion unconditionally stable.

The factor 1/2 on ``v(T)^2`` follows from testing the equation with ``v``:
``d/dt (mean v^2 / 2) + mean |grad v|^2 = -eps mean (xi . b) v``.
:meth:`ParabolicSolution.rhs_without_half` keeps the variant with weight one
for comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .sde_engine import integrate_paths
from .spectral_field import FieldRealization, Scheme, SpectralBand


@dataclass(frozen=True, eq=False)
class PeriodicFieldSlice:
    """Lattice-mode field on the torus ``[0, box)^2`` together with its grid samples."""

    box: float
    grid: int
    field: FieldRealization
    psi: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)      # (2, N, N)

    @property
    def spacing(self) -> float:
        return self.box / self.grid

    @property
    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        return _wavenumbers(self.box, self.grid)

    def divergence(self) -> np.ndarray:
        """Spectral divergence of the sampled drift (zero up to round-off)."""
        kx, ky = self.wavenumbers
        bh = np.fft.rfft2(self.b, axes=(1, 2))
        return np.fft.irfft2(1j * (kx * bh[0] + ky * bh[1]), s=(self.grid, self.grid))


def _wavenumbers(box: float, n: int):
    k = 2 * math.pi * np.fft.fftfreq(n, d=box / n)
    kr = 2 * math.pi * np.fft.rfftfreq(n, d=box / n)
    return k[:, None] * np.ones_like(kr)[None, :], np.ones_like(k)[:, None] * kr[None, :]


def lattice_modes(L: float, box: float) -> np.ndarray:
    """Integer lattice vectors ``n`` (one per ``+-n`` pair) with ``1/L <= |2 pi n / box| <= 1``."""
    nmax = int(math.floor(box / (2 * math.pi))) + 1
    i = np.arange(-nmax, nmax + 1)
    nx, ny = np.meshgrid(i, i, indexing="ij")
    nx, ny = nx.ravel(), ny.ravel()
    half = (nx > 0) | ((nx == 0) & (ny > 0))
    kk = 2 * math.pi / box * np.hypot(nx, ny)
    sel = half & (kk >= 1.0 / L * (1 - 1e-12)) & (kk <= 1.0 + 1e-12)
    return np.stack([nx[sel], ny[sel]], axis=-1)


def periodic_slice(L: float, box_mult: float = 4.0, grid: int = 512, seed: int = 0,
                   field_index: int = 0, psi: FieldRealization | None = None) -> PeriodicFieldSlice:
    """Sample a periodic band-limited free field on a box of side ``box_mult * 2 pi L``.

    Each lattice pair carries a Rayleigh amplitude with ``E a^2 / 2`` equal to
    the spectral mass ``2 (dk)^2 / (2 pi |k|^2)`` of the pair, so the law is
    exactly Gaussian with the lattice-discretized spectrum.  ``psi`` overrides
    the random draw (used for single-mode checks); its wavevectors must be on
    the lattice.
    """
    box = box_mult * 2 * math.pi * L
    if box / grid > 0.25 + 1e-12:
        raise ValueError(f"grid spacing {box / grid:.3f} does not resolve the unit UV scale (need <= 1/4)")
    dk = 2 * math.pi / box
    if psi is None:
        n = lattice_modes(L, box)
        kx, ky = dk * n[:, 0], dk * n[:, 1]
        gen = rng.stream(seed, rng.TAG_PERIODIC, field_index)
        var = 2 * dk * dk / (2 * math.pi * (kx * kx + ky * ky))
        amp = np.sqrt(var) * np.hypot(gen.standard_normal(kx.size), gen.standard_normal(kx.size))
        theta = gen.random(kx.size) * 2 * math.pi
        psi = FieldRealization(SpectralBand.from_scale(L), kx, ky, amp, theta, seed=seed,
                               scheme=Scheme.STRATIFIED, meta={"lattice": True, "box": box})
    nvec = np.stack([psi.kx, psi.ky], -1) / dk
    if psi.num_modes and np.max(np.abs(nvec - np.rint(nvec))) > 1e-8:
        raise ValueError("field wavevectors are not on the box's dual lattice")
    nvec = np.rint(nvec).astype(int)
    if psi.num_modes and np.max(np.abs(nvec)) >= grid // 2:
        raise ValueError("grid too coarse for the field's wavevectors")
    F = np.zeros((grid, grid), dtype=complex)
    c = 0.5 * grid * grid * psi.amp * np.exp(1j * psi.phase)
    np.add.at(F, (nvec[:, 0] % grid, nvec[:, 1] % grid), c)
    np.add.at(F, (-nvec[:, 0] % grid, -nvec[:, 1] % grid), np.conj(c))
    values = np.fft.ifft2(F).real
    kx_full = 2 * math.pi * np.fft.fftfreq(grid, d=box / grid)
    KX, KY = kx_full[:, None], kx_full[None, :]
    gx = np.fft.ifft2(1j * KX * F).real
    gy = np.fft.ifft2(1j * KY * F).real
    b = np.stack([-gy, gx])
    return PeriodicFieldSlice(box, grid, psi, values, b)


# --------------------------------------------------------------------------
# the parabolic solve
# --------------------------------------------------------------------------

@dataclass
class ParabolicSolution:
    times: np.ndarray
    mean_v2: np.ndarray           # mean v(t)^2 over the torus
    grad_energy: np.ndarray       # int_0^t mean |grad v|^2 (trapezoid)
    mean_v: np.ndarray            # spatial mean of v (stays 0)
    v: np.ndarray = field(repr=False)   # final state on the grid

    def rhs(self) -> np.ndarray:
        """``t + mean v^2 / 2 + int mean |grad v|^2`` at every step."""
        return self.times + 0.5 * self.mean_v2 + self.grad_energy

    def rhs_without_half(self) -> np.ndarray:
        return self.times + self.mean_v2 + self.grad_energy


class StabilityError(RuntimeError):
    pass


def _parseval_weights(n: int) -> np.ndarray:
    w = np.full(n // 2 + 1, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return w[None, :]


def solve_parabolic(slice_: PeriodicFieldSlice, epsilon: float, xi, dt: float, T: float,
                    blowup: float = 1e8) -> ParabolicSolution:
    """Integrating-factor RK4 for ``d_t v = Lap v - eps b . (xi + grad v)``."""
    xi = np.asarray(xi, dtype=float)
    if abs(np.hypot(*xi) - 1) > 1e-12:
        raise ValueError("xi must be a unit vector")
    N = slice_.grid
    kx, ky = slice_.wavenumbers
    k2 = kx * kx + ky * ky
    steps = int(round(T / dt))
    if steps < 1 or abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("T must be a positive multiple of dt")
    bmax = float(np.max(np.hypot(slice_.b[0], slice_.b[1]))) * abs(epsilon)
    kmax = math.pi / slice_.spacing
    if dt * bmax * kmax > 2.5:
        raise StabilityError(f"advective CFL number {dt * bmax * kmax:.2f} exceeds the RK4 limit")
    bx, by = slice_.b
    forcing = -epsilon * (bx * xi[0] + by * xi[1])
    w = _parseval_weights(N) / float(N) ** 4

    def rhs(vh):
        gx = np.fft.irfft2(1j * kx * vh, s=(N, N))
        gy = np.fft.irfft2(1j * ky * vh, s=(N, N))
        return np.fft.rfft2(forcing - epsilon * (bx * gx + by * gy))

    E1 = np.exp(-k2 * dt / 2)
    E2 = E1 * E1
    vh = np.zeros((N, N // 2 + 1), dtype=complex)
    mv2 = [0.0]
    g2 = [0.0]
    mv = [0.0]
    for _ in range(steps):
        if epsilon == 0:
            break
        k1 = rhs(vh)
        a = E1 * (vh + 0.5 * dt * k1)
        k2_ = rhs(a)
        b = E1 * vh + 0.5 * dt * k2_
        k3 = rhs(b)
        c = E2 * vh + dt * E1 * k3
        k4 = rhs(c)
        vh = E2 * vh + dt / 6 * (E2 * k1 + 2 * E1 * (k2_ + k3) + k4)
        e = float(np.sum(w * np.abs(vh) ** 2))
        if not math.isfinite(e) or e > blowup:
            raise StabilityError(f"energy blow-up ({e}) at t={len(mv2) * dt}")
        mv2.append(e)
        g2.append(float(np.sum(w * k2 * np.abs(vh) ** 2)))
        mv.append(float(vh[0, 0].real) / N**2)
    n = len(mv2)
    if n < steps + 1:
        # zero forcing: v stays identically zero
        mv2 += [0.0] * (steps + 1 - n)
        g2 += [0.0] * (steps + 1 - n)
        mv += [0.0] * (steps + 1 - n)
    g2 = np.asarray(g2)
    integral = np.concatenate([[0.0], np.cumsum(0.5 * dt * (g2[1:] + g2[:-1]))])
    return ParabolicSolution(dt * np.arange(steps + 1), np.asarray(mv2), integral,
                             np.asarray(mv), np.fft.irfft2(vh, s=(N, N)))


def single_mode_response(amp: float, k, xi, epsilon: float, t) -> dict:
    """Closed form for ``psi = a cos(k.x + theta)``.

    ``b . grad v`` vanishes for ``v`` a function of the phase, so
    ``v = g(t) sin(k.x + theta)`` with ``g' = -|k|^2 g + eps a (J k . xi)``.
    """
    k = np.asarray(k, dtype=float)
    xi = np.asarray(xi, dtype=float)
    k2 = float(k @ k)
    Jk_xi = -k[1] * xi[0] + k[0] * xi[1]
    t = np.asarray(t, dtype=float)
    g_inf = epsilon * amp * Jk_xi / k2
    g = g_inf * (1 - np.exp(-k2 * t))
    # int_0^t g^2 ds
    ig2 = g_inf**2 * (t - 2 * (1 - np.exp(-k2 * t)) / k2 + (1 - np.exp(-2 * k2 * t)) / (2 * k2))
    return {"g": g, "g_inf": g_inf, "mean_v2": g**2 / 2, "grad_energy": k2 * ig2 / 2}


# --------------------------------------------------------------------------
# the representation identity
# --------------------------------------------------------------------------

@dataclass
class RepresentationReport:
    epsilon2: float
    L: float
    T: float
    box: float
    grid: int
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    ratio: float
    ratio_se: float
    ratio_without_half: float
    per_field: list
    lhs_curve: list
    rhs_curve: list
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("epsilon2", "L", "T", "box", "grid", "lhs", "lhs_se", "rhs", "rhs_se", "ratio",
                 "ratio_se", "ratio_without_half", "per_field", "lhs_curve", "rhs_curve", "meta")}


def representation_identity_check(epsilon2: float, L: float, T: float, *, n_fields: int = 2,
                                  n_paths: int = 20000, grid: int = 512, box_mult: float = 4.0,
                                  dt_pde: float = 0.05, dt_sde: float = 0.01, seed: int = 0,
                                  directions=((1.0, 0.0), (0.0, 1.0)),
                                  record_times=None) -> RepresentationReport:
    """Quenched comparison of both sides, averaged over fields and directions.

    For each field the particle side uses ``n_paths`` tracers started uniformly
    on the torus; ``lhs_se`` is the Monte Carlo error of that average.  The
    PDE side has no sampling error given the field, so ``rhs_se`` reports the
    field-to-field spread of the right-hand side (zero for one field) and the
    ratio's error comes from the particles alone.
    """
    eps = math.sqrt(epsilon2)
    if record_times is None:
        record_times = [T / 4, T / 2, 3 * T / 4, T]
    record_times = sorted(set(float(t) for t in record_times) | {float(T)})
    rec_steps = np.rint(np.asarray(record_times) / dt_sde).astype(np.int64)
    pde_idx = np.rint(np.asarray(record_times) / dt_pde).astype(int)
    lhs_f, lhs_var, rhs_f, rhs1_f, curves_l, curves_r, per_field = [], [], [], [], [], [], []
    for f in range(n_fields):
        sl = periodic_slice(L, box_mult, grid, seed, f)
        starts = rng.stream(seed, rng.TAG_PATH_START, 10**6 + f).random((n_paths, 2)) * sl.box
        pos, alive = integrate_paths(sl.field, eps, dt_sde, int(rec_steps[-1]), starts, seed,
                                     10**6 + f, np.arange(n_paths), rec_steps)
        if not alive.all():
            raise RuntimeError("tracer left the domain in the periodic check")
        disp = pos - starts[:, None, :]
        l_parts, r_parts, r1_parts = [], [], []
        for xi in directions:
            xi = np.asarray(xi, dtype=float)
            l_parts.append(0.5 * (disp @ xi) ** 2)               # (P, R)
            sol = solve_parabolic(sl, eps, xi, dt_pde, T)
            r_parts.append(sol.rhs()[pde_idx])
            r1_parts.append(sol.rhs_without_half()[-1])
        lpath = np.mean(l_parts, axis=0)                          # average over directions per path
        lmean = lpath.mean(axis=0)
        lse = lpath.std(axis=0, ddof=1) / math.sqrt(n_paths)
        rcurve = np.mean(r_parts, axis=0)
        lhs_f.append(lmean[-1])
        lhs_var.append(lse[-1] ** 2)
        rhs_f.append(rcurve[-1])
        rhs1_f.append(float(np.mean(r1_parts)))
        curves_l.append(lmean)
        curves_r.append(rcurve)
        per_field.append({"field": f, "lhs": float(lmean[-1]), "lhs_se": float(lse[-1]),
                          "rhs": float(rcurve[-1]), "num_modes": sl.field.num_modes})
    F = n_fields
    lhs = math.fsum(lhs_f) / F
    lhs_se = math.sqrt(math.fsum(lhs_var)) / F
    rhs = math.fsum(rhs_f) / F
    rhs_se = float(np.std(rhs_f, ddof=1) / math.sqrt(F)) if F > 1 else 0.0
    ratio = lhs / rhs
    return RepresentationReport(
        epsilon2, L, T, box_mult * 2 * math.pi * L, grid, lhs, lhs_se, rhs, rhs_se, ratio,
        lhs_se / rhs, lhs / (math.fsum(rhs1_f) / F), per_field,
        [list(map(float, t)) for t in zip(record_times, np.mean(curves_l, axis=0))],
        [list(map(float, t)) for t in zip(record_times, np.mean(curves_r, axis=0))],
        meta={"dt_pde": dt_pde, "dt_sde": dt_sde, "n_paths": n_paths, "n_fields": n_fields,
              "box_mult": box_mult, "seed": seed})


def grid_refinement_check(L: float, T: float, epsilon2: float, grid: int = 512,
                          box_mult: float = 4.0, dt: float = 0.05, seed: int = 0,
                          xi=(1.0, 0.0)) -> dict:
    """Right-hand side for one field under refinement.

    ``dt_halved`` keeps the grid; ``fine`` halves the spacing and the step
    together, since the advective CFL number scales with ``dt / h``.
    """
    eps = math.sqrt(epsilon2)

    def rhs(n, step):
        sl = periodic_slice(L, box_mult, n, seed, 0)
        return float(solve_parabolic(sl, eps, xi, step, T).rhs()[-1])

    coarse, half, fine = rhs(grid, dt), rhs(grid, dt / 2), rhs(2 * grid, dt / 2)
    return {"coarse": coarse, "dt_halved": half, "fine": fine,
            "dt_difference": half - coarse, "difference": fine - coarse}


def box_doubling_check(L: float, T: float, epsilon2: float, box_mult: float = 4.0,
                       **kwargs) -> dict:
    """Representation check at ``box_mult`` and ``2 * box_mult`` with the same spacing."""
    grid = kwargs.pop("grid", 512)
    a = representation_identity_check(epsilon2, L, T, box_mult=box_mult, grid=grid, **kwargs)
    b = representation_identity_check(epsilon2, L, T, box_mult=2 * box_mult, grid=2 * grid, **kwargs)
    return {"small": a.to_dict(), "large": b.to_dict(),
            "lhs_change": b.lhs - a.lhs, "lhs_change_se": math.hypot(a.lhs_se, b.lhs_se),
            "rhs_change": b.rhs - a.rhs, "rhs_change_se": math.hypot(a.rhs_se, b.rhs_se)}
