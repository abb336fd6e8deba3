"""Discrete renormalization of the effective diffusivity and the RG exponent flow.

The ladder ``L = M^n`` carries ``lam_{L+} = lam_L (1 + eps^2 ln M / (2 lam_L^2))``
from ``lam_1 = 1``.  Squaring gives the exact step identity

    lam_{L+}^2 - eps^2 ln L+ = lam_L^2 - eps^2 ln L + (eps^2 ln M / (2 lam_L))^2,

so the gap ``lam_L^2 - (1 + eps^2 ln L)`` is a sum of non-negative squares that
is dominated by a harmonic-type sum and, in turn, by an integral.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RenormState:
    epsilon2: float
    M: float
    steps: int
    L: np.ndarray
    lam: np.ndarray
    identity_residual: np.ndarray = field(repr=False)

    @property
    def ladder(self) -> list[tuple[float, float]]:
        return list(zip(self.L.tolist(), self.lam.tolist()))

    def rows(self) -> list[dict]:
        e2 = self.epsilon2
        return [{"n": n, "L": float(L), "lambda_tilde": float(lam),
                 "lambda_tilde_sq": float(lam * lam),
                 "gff_law": 1.0 + e2 * n * math.log(self.M),
                 "variance_step_difference": float(d)}
                for n, (L, lam, d) in enumerate(zip(self.L, self.lam, self.heuristic_difference()))]

    def heuristic_difference(self) -> np.ndarray:
        """Difference between the variance-based iterate and this one.

        The variance-based step feeds ``E psi_{L+}^2 - E psi_L^2``, obtained by
        spectral quadrature, where this ladder uses ``ln M``.  For the free
        field the two agree, so the difference measures quadrature error only.
        """
        from .spectral_field import SpectralBand, spectral_integral

        lam = 1.0
        out = [0.0]
        for n, lam_n in enumerate(self.lam[1:]):
            band = SpectralBand.from_scale(self.M**n, self.M ** (n + 1))
            var_increment = spectral_integral(band, "variance_psi")
            lam = lam * (1.0 + self.epsilon2 * var_increment / (2.0 * lam * lam))
            out.append(lam - lam_n)
        return np.asarray(out)


def lambda_step(lam: float, epsilon2: float, M: float) -> float:
    return lam * (1.0 + epsilon2 * math.log(M) / (2.0 * lam * lam))


def iterate_lambda(epsilon2: float, M: float, n: int) -> RenormState:
    if not M > 1:
        raise ValueError(f"M must exceed 1, got {M}")
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if not epsilon2 >= 0:
        raise ValueError(f"epsilon2 must be >= 0, got {epsilon2}")
    lnM = math.log(M)
    lam = np.empty(n + 1)
    res = np.zeros(n + 1)
    lam[0] = 1.0
    for i in range(n):
        lam[i + 1] = lambda_step(lam[i], epsilon2, M)
        lhs = lam[i + 1] ** 2 - epsilon2 * (i + 1) * lnM
        rhs = lam[i] ** 2 - epsilon2 * i * lnM + (epsilon2 * lnM / (2 * lam[i])) ** 2
        res[i + 1] = (lhs - rhs) / max(1.0, lam[i + 1] ** 2)
    L = np.asarray([M**i for i in range(n + 1)], dtype=float)
    return RenormState(float(epsilon2), float(M), int(n), L, lam, res)


@dataclass(frozen=True)
class BoundCertificate:
    L: float
    lower_gap: float
    upper_sum: float
    upper_integral: float

    @property
    def holds(self) -> bool:
        return 0.0 <= self.lower_gap <= self.upper_sum <= self.upper_integral

    def to_dict(self) -> dict:
        return {"L": self.L, "lower_gap": self.lower_gap, "upper_sum": self.upper_sum,
                "upper_integral": self.upper_integral, "holds": self.holds}


class SandwichViolation(AssertionError):
    pass


# slack for round-off in comparing tiny non-negative quantities
_ROUND = 1e-12


def certify_bounds(state: RenormState) -> list[BoundCertificate]:
    """Check ``0 <= gap <= sum <= integral`` at every rung.

    ``sum`` is ``sum_{m<n} e lnM * e lnM / (1 + m e lnM)`` (``e = eps^2``),
    ``integral`` is ``e lnM (e lnM + ln(1 + e ln L))``.
    """
    e, lnM = state.epsilon2, math.log(state.M)
    a = e * lnM
    certs = []
    terms = []
    for n, lam in enumerate(state.lam):
        lnL = n * lnM
        gap = lam * lam - (1.0 + e * lnL)
        upper_sum = math.fsum(terms)
        upper_int = a * (a + math.log1p(e * lnL))
        tol = _ROUND * max(1.0, lam * lam)
        c = BoundCertificate(float(state.L[n]), gap, upper_sum, upper_int)
        if not (-tol <= gap <= upper_sum + tol and upper_sum <= upper_int + tol):
            raise SandwichViolation(f"sandwich fails at n={n}: {c.to_dict()}")
        certs.append(c)
        terms.append(a * a / (1.0 + n * a))
    return certs


# --------------------------------------------------------------------------
# RG ODE for the scaling exponent
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RgState:
    """Trajectory of ``dz/ds = (2 - z)^2`` with ``s = ln t``.

    ``log_time`` holds ``ln(t/tau)``; ``log_msd`` holds ``ln(MSD/ell^2)`` from
    integrating ``d ln MSD / d ln t = 2 / z``.  ``noise_level`` is the lumped
    product of the kernel multiple and the unidentified universal constant;
    it only sets the units of ``tau`` and is carried, not used.
    """

    z: np.ndarray
    log_time: np.ndarray
    tau: float = 1.0
    ell: float = 1.0
    noise_level: float | None = None
    log_msd: np.ndarray | None = None

    def closed_form_z(self) -> np.ndarray:
        return rg_closed_form(self.log_time)

    def closed_form_log_msd(self) -> np.ndarray:
        return rg_msd_closed_form(self.log_time)


class BasinExit(RuntimeError):
    pass


def rg_closed_form(log_time) -> np.ndarray:
    u = np.asarray(log_time, dtype=float)
    return 2.0 - 1.0 / u


def rg_msd_closed_form(log_time) -> np.ndarray:
    """``ln(MSD / ell^2)`` for ``MSD = ell^2 (t/tau) sqrt(u - 1/2)``, ``u = ln(t/tau)``.

    Integrating ``2/z = 1 + 1/(2u - 1)`` gives ``u + ln(u - 1/2)/2`` up to the
    additive constant absorbed into ``ell``; asymptotically this is the
    ``t sqrt(ln t)`` law.
    """
    u = np.asarray(log_time, dtype=float)
    return u + 0.5 * np.log(u - 0.5)


def _rhs(y):
    z = y[0]
    return np.array([(2.0 - z) ** 2, 2.0 / z])


def rg_ode_integrate(z0: float, span: float, step: float = 1e-3, log_msd0: float | None = None,
                     noise_level: float | None = None) -> RgState:
    """Classical RK4 in ``s = ln t`` over ``[s0, s0 + span]``.

    The time origin is normalised so that ``ln(t0/tau) = 1/(2 - z0)``; the
    fixed point ``z0 = 2`` stays put and is reported with ``log_time`` counted
    from zero.
    """
    if not z0 <= 2.0:
        raise BasinExit(f"z0={z0} lies outside the basin z < 2")
    if not z0 > 0.0:
        # 2/z is singular at z = 0, equivalently ln(t/tau) = 1/2
        raise ValueError(f"z0 must be positive, got {z0}")
    if span <= 0 or step <= 0:
        raise ValueError("span and step must be positive")
    n = int(round(span / step))
    h = span / n
    fixed = z0 == 2.0
    s0 = 0.0 if fixed else 1.0 / (2.0 - z0)
    if log_msd0 is None:
        log_msd0 = 0.0 if fixed else float(rg_msd_closed_form(s0))
    s = s0 + h * np.arange(n + 1)
    out = np.empty((n + 1, 2))
    y = np.array([z0, log_msd0], dtype=float)
    out[0] = y
    for i in range(n):
        k1 = _rhs(y)
        k2 = _rhs(y + 0.5 * h * k1)
        k3 = _rhs(y + 0.5 * h * k2)
        k4 = _rhs(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if y[0] > 2.0 or (not fixed and y[0] >= 2.0):
            raise BasinExit(f"z reached {y[0]} at ln(t/tau)={s[i + 1]}")
        out[i + 1] = y
    return RgState(z=out[:, 0], log_time=s, noise_level=noise_level, log_msd=out[:, 1])


# --------------------------------------------------------------------------
# recursion versus simulation
# --------------------------------------------------------------------------

def compare_recursion_vs_simulation(state: RenormState, estimates) -> list[dict]:
    """Tabulate ``lambda_hat`` against the ladder value and ``sqrt(1 + eps^2 ln L)``.

    Each estimate must sit on a rung of the ladder and share its ``epsilon2``.
    """
    rows = []
    for est in estimates:
        if abs(est.epsilon2 - state.epsilon2) > 1e-12:
            raise ValueError(f"estimate at epsilon2={est.epsilon2} does not match {state.epsilon2}")
        n = math.log(est.L) / math.log(state.M)
        k = int(round(n))
        if abs(n - k) > 1e-9 or k > state.steps:
            raise ValueError(f"L={est.L} is not on the ladder M^n, n <= {state.steps}")
        lt = float(state.lam[k])
        law = math.sqrt(1.0 + state.epsilon2 * math.log(est.L))
        rows.append({"L": est.L, "lambda_hat": est.lambda_hat, "half_width": est.half_width,
                     "lambda_tilde": lt, "sqrt_law": law,
                     "hat_over_tilde": est.lambda_hat / lt, "hat_over_law": est.lambda_hat / law,
                     "tilde_sq_over_law_sq": lt * lt / (law * law)})
    return rows
