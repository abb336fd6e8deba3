"""Band-limited 2D Gaussian free field as an exact finite sum of Fourier modes.

The stream function is

    psi(x) = sum_j a_j cos(k_j . x + theta_j)

with wavevectors confined to an annulus ``k_min <= |k| <= k_max`` and the drift
is its rotated gradient ``b = J grad(psi)``.  The spectral density of the GFF
is ``|k|^-2`` with respect to ``dk / (2 pi)``, so drawing ``ln|k|`` uniformly
is exact importance sampling: every mode carries the same share of the
variance ``ln(k_max / k_min) / N``.  Amplitudes are Rayleigh distributed with
uniform phases, which makes each mode (and, conditional on the wavevectors,
the whole field) exactly Gaussian.

All evaluators broadcast: mode arrays have shape ``(..., m)`` and positions
``(..., 2)``; the mode axis is summed out.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import rng

#: Rotation by 90 degrees; ``div(J grad f) = 0`` for every smooth ``f``.
J = np.array([[0.0, -1.0], [1.0, 0.0]])

DEFAULT_MODES_PER_OCTAVE = 2048


class Scheme(str, Enum):
    STRATIFIED = "stratified-annulus"
    IMPORTANCE = "importance-sampled-modes"


@dataclass(frozen=True)
class SpectralBand:
    """Annulus of wavenumbers ``k_min <= |k| <= k_max`` (UV scale is 1)."""

    k_min: float
    k_max: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.k_min) and math.isfinite(self.k_max)):
            raise ValueError(f"band edges must be finite, got [{self.k_min}, {self.k_max}]")
        if self.k_min <= 0:
            raise ValueError(f"k_min must be positive, got {self.k_min}")
        if self.k_min > self.k_max:
            raise ValueError(f"k_min={self.k_min} exceeds k_max={self.k_max}")
        if self.k_max > 1.0 + 1e-12:
            raise ValueError(f"k_max={self.k_max} exceeds the UV cutoff 1")

    @classmethod
    def from_scale(cls, L: float, L_plus: float | None = None) -> "SpectralBand":
        """Band ``[1/L, 1]``, or the increment band ``[1/L_plus, 1/L]``."""
        if L < 1:
            raise ValueError(f"scale L must be >= 1, got {L}")
        if L_plus is None:
            return cls(1.0 / L, 1.0)
        if L_plus < L:
            raise ValueError(f"L_plus={L_plus} is smaller than L={L}")
        return cls(1.0 / L_plus, 1.0 / L)

    @property
    def L(self) -> float:
        return 1.0 / self.k_min

    @property
    def log_width(self) -> float:
        return math.log(self.k_max / self.k_min)

    @property
    def octaves(self) -> float:
        return self.log_width / math.log(2.0)

    @property
    def empty(self) -> bool:
        return self.k_min == self.k_max

    def to_dict(self) -> dict:
        return {"k_min": self.k_min, "k_max": self.k_max}


def default_num_modes(band: SpectralBand, per_octave: int = DEFAULT_MODES_PER_OCTAVE) -> int:
    return max(1, int(math.ceil(per_octave * band.octaves)))


@dataclass(frozen=True, eq=False)
class FieldRealization:
    """A sampled field; arrays have shape ``(m,)`` or ``(n_realizations, m)``."""

    band: SpectralBand
    kx: np.ndarray
    ky: np.ndarray
    amp: np.ndarray
    phase: np.ndarray
    seed: int = 0
    scheme: Scheme = Scheme.STRATIFIED
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = {a.shape for a in (self.kx, self.ky, self.amp, self.phase)}
        if len(shapes) != 1:
            raise ValueError(f"mode arrays disagree in shape: {shapes}")
        for a in (self.kx, self.ky, self.amp, self.phase):
            a.flags.writeable = False

    @classmethod
    def empty(cls, band: SpectralBand) -> "FieldRealization":
        z = np.zeros(0)
        return cls(band, z, z.copy(), z.copy(), z.copy())

    @property
    def num_modes(self) -> int:
        return self.kx.shape[-1]

    @property
    def wavenumbers(self) -> np.ndarray:
        return np.hypot(self.kx, self.ky)

    def with_modes(self, amp=None, phase=None, **meta) -> "FieldRealization":
        """Same wavevectors, new amplitudes/phases (derived fields)."""
        return FieldRealization(
            self.band, self.kx, self.ky,
            self.amp if amp is None else np.asarray(amp, dtype=float),
            self.phase if phase is None else np.asarray(phase, dtype=float),
            self.seed, self.scheme, {**self.meta, **meta},
        )

    def __add__(self, other: "FieldRealization") -> "FieldRealization":
        """Superpose two fields (concatenate their modes)."""
        band = SpectralBand(min(self.band.k_min, other.band.k_min),
                            max(self.band.k_max, other.band.k_max))
        if self.kx.shape[:-1] != other.kx.shape[:-1]:
            raise ValueError("cannot superpose fields with different batch shapes")
        cat = lambda a, b: np.concatenate([a, b], axis=-1)
        return FieldRealization(band, cat(self.kx, other.kx), cat(self.ky, other.ky),
                                cat(self.amp, other.amp), cat(self.phase, other.phase),
                                self.seed, self.scheme, {"superposition": True})

    def manifest(self) -> dict:
        amp = np.asarray(self.amp)
        return {
            "band": self.band.to_dict(),
            "seed": self.seed,
            "scheme": self.scheme.value,
            "num_modes": self.num_modes,
            "amplitude_stats": {
                "mean": float(amp.mean()) if amp.size else 0.0,
                "rms": float(np.sqrt(np.mean(amp**2))) if amp.size else 0.0,
                "max": float(np.abs(amp).max()) if amp.size else 0.0,
                "mean_realized_variance": float(np.mean(np.sum(amp**2, -1) / 2)) if amp.size else 0.0,
            },
        }

    def dump_modes(self, path: str | Path) -> None:
        """Write ``(k_x, k_y, a, theta)`` rows as little-endian float64."""
        rows = np.stack([self.kx, self.ky, self.amp, self.phase], axis=-1).reshape(-1, 4)
        np.ascontiguousarray(rows, dtype="<f8").tofile(path)

    @classmethod
    def load_modes(cls, path: str | Path, band: SpectralBand, seed: int = 0,
                   scheme: Scheme = Scheme.STRATIFIED) -> "FieldRealization":
        rows = np.fromfile(path, dtype="<f8").reshape(-1, 4)
        return cls(band, *(rows[:, i].copy() for i in range(4)), seed=seed, scheme=Scheme(scheme))

    def save_manifest(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.manifest(), indent=2))


def _draw_modes(gen: np.random.Generator, band: SpectralBand, num_modes: int,
                scheme: Scheme, size: tuple) -> tuple:
    shape = size + (num_modes,)
    log_lo = math.log(band.k_min)
    width = band.log_width
    if scheme is Scheme.STRATIFIED:
        # Latin-hypercube strata in (ln|k|, angle) plus a global rotation, which
        # keeps every marginal exact and the joint law rotation invariant.
        j = np.arange(num_modes)
        s = log_lo + (j + gen.random(shape)) * (width / num_modes)
        perm = np.argsort(gen.random(shape), axis=-1)
        rot = gen.random(size + (1,)) * math.pi
        alpha = (perm + gen.random(shape)) * (math.pi / num_modes) + rot
    else:
        s = log_lo + gen.random(shape) * width
        alpha = gen.random(shape) * math.pi
    r = np.clip(np.exp(s), band.k_min, band.k_max)
    var_share = width / num_modes
    amp = np.sqrt(var_share) * np.hypot(gen.standard_normal(shape), gen.standard_normal(shape))
    theta = gen.random(shape) * (2.0 * math.pi)
    return r * np.cos(alpha), r * np.sin(alpha), amp, theta


def sample_field(band: SpectralBand, num_modes: int, seed: int,
                 scheme: Scheme | str = Scheme.STRATIFIED,
                 n_realizations: int | None = None) -> FieldRealization:
    """Draw a band-limited GFF realization (or a batch of independent ones).

    Deterministic in ``(band, num_modes, seed, scheme, n_realizations)``.
    """
    if not isinstance(band, SpectralBand):
        raise TypeError("band must be a SpectralBand")
    if num_modes < 1:
        raise ValueError(f"num_modes must be >= 1, got {num_modes}")
    scheme = Scheme(scheme)
    gen = rng.stream(seed, rng.TAG_FIELD, 0 if scheme is Scheme.STRATIFIED else 1)
    size = () if n_realizations is None else (int(n_realizations),)
    kx, ky, amp, theta = _draw_modes(gen, band, int(num_modes), scheme, size)
    return FieldRealization(band, kx, ky, amp, theta, seed=rng.check_seed(seed), scheme=scheme)


def _phase(f: FieldRealization, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[..., 0, None] * f.kx + x[..., 1, None] * f.ky + f.phase


def eval_psi(f: FieldRealization, x) -> np.ndarray:
    """psi(x); cost O(num_modes) per point."""
    if f.num_modes == 0:
        return np.zeros(np.shape(x)[:-1])
    return np.sum(f.amp * np.cos(_phase(f, x)), axis=-1)


def eval_grad_psi(f: FieldRealization, x) -> np.ndarray:
    if f.num_modes == 0:
        return np.zeros(np.shape(x))
    w = -f.amp * np.sin(_phase(f, x))
    return np.stack([np.sum(w * f.kx, -1), np.sum(w * f.ky, -1)], axis=-1)


def eval_b(f: FieldRealization, x) -> np.ndarray:
    """Drift ``b = J grad(psi) = (-d2 psi, d1 psi)``; divergence-free mode by mode."""
    g = eval_grad_psi(f, x)
    return np.stack([-g[..., 1], g[..., 0]], axis=-1)


def eval_hessian_psi(f: FieldRealization, x) -> np.ndarray:
    if f.num_modes == 0:
        return np.zeros(np.shape(x) + (2,))
    w = -f.amp * np.cos(_phase(f, x))
    hxx = np.sum(w * f.kx * f.kx, -1)
    hxy = np.sum(w * f.kx * f.ky, -1)
    hyy = np.sum(w * f.ky * f.ky, -1)
    return np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2)


def eval_all(f: FieldRealization, x) -> tuple:
    """Value, gradient and Hessian from one trigonometric evaluation."""
    if f.num_modes == 0:
        shp = np.shape(x)[:-1]
        return np.zeros(shp), np.zeros(shp + (2,)), np.zeros(shp + (2, 2))
    ph = _phase(f, x)
    c = f.amp * np.cos(ph)
    s = f.amp * np.sin(ph)
    val = c.sum(-1)
    grad = -np.stack([(s * f.kx).sum(-1), (s * f.ky).sum(-1)], -1)
    hxx = -(c * f.kx * f.kx).sum(-1)
    hxy = -(c * f.kx * f.ky).sum(-1)
    hyy = -(c * f.ky * f.ky).sum(-1)
    hess = np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2)
    return val, grad, hess


# --------------------------------------------------------------------------
# quadrature oracle for integrals of the form  int_band f(k) dk / (2 pi)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectralQuadrature:
    radial_nodes: int = 512
    angular_nodes: int = 256
    rule: str = "midpoint"

    def __post_init__(self):
        if self.radial_nodes < 4 or self.angular_nodes < 4:
            raise ValueError("quadrature node counts must be >= 4")
        if self.rule not in ("midpoint", "gauss"):
            raise ValueError(f"unknown quadrature rule {self.rule!r}")

    def nodes(self, band: SpectralBand):
        """Nodes ``(kx, ky)`` and weights for ``int dk/(2 pi)`` over the annulus."""
        lo, width = math.log(band.k_min), band.log_width
        if self.rule == "midpoint":
            u = (np.arange(self.radial_nodes) + 0.5) / self.radial_nodes
            wu = np.full(self.radial_nodes, 1.0 / self.radial_nodes)
        else:
            g, wg = np.polynomial.legendre.leggauss(self.radial_nodes)
            u, wu = 0.5 * (g + 1.0), 0.5 * wg
        s = lo + width * u
        r = np.exp(s)
        # angle integral is periodic, so the equispaced rule is spectrally exact
        alpha = (np.arange(self.angular_nodes) + 0.5) * (2 * math.pi / self.angular_nodes)
        R, A = np.meshgrid(r, alpha, indexing="ij")
        # dk/(2pi) = r^2 ds dalpha/(2pi)
        W = (width * wu)[:, None] * r[:, None] ** 2 / self.angular_nodes * np.ones_like(A)
        return R * np.cos(A), R * np.sin(A), W


def _unit(xi) -> np.ndarray:
    if xi is None:
        raise ValueError("this integrand needs a unit vector xi")
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (2,) or abs(np.hypot(*xi) - 1.0) > 1e-12:
        raise ValueError(f"xi must be a unit 2-vector, got {xi}")
    return xi


def _integrand(name: str, kx, ky, xi, lambda_tilde, x):
    k2 = kx * kx + ky * ky
    if name == "variance_psi":
        return 1.0 / k2
    if name in ("variance_b", "variance_grad_psi"):
        return np.ones_like(k2)
    if name == "covariance_psi":
        x = np.asarray(x, dtype=float)
        return np.cos(kx * x[0] + ky * x[1]) / k2
    xi = _unit(xi)
    kJxi = kx * (-xi[1]) + ky * xi[0]   # k . J xi
    kxi = kx * xi[0] + ky * xi[1]
    lam2 = lambda_tilde**2
    table = {
        "corrector_variance": kJxi**2 / k2**3 / lam2,
        "corrector_grad_variance": kJxi**2 / k2**2 / lam2,
        "corrector_hessian_variance": kJxi**2 / k2 / lam2,
        "flux_corrector_variance": kxi**2 / k2**3,
        "flux_corrector_grad_variance": kxi**2 / k2**2,
        "mixed_flux": kJxi**2 / k2**2 / lambda_tilde,
    }
    if name not in table:
        raise ValueError(f"unknown integrand {name!r}")
    return table[name]


INTEGRANDS = (
    "variance_psi", "variance_b", "variance_grad_psi", "covariance_psi",
    "corrector_variance", "corrector_grad_variance", "corrector_hessian_variance",
    "flux_corrector_variance", "flux_corrector_grad_variance", "mixed_flux",
)


def spectral_integral(band: SpectralBand, integrand: str,
                      quad: SpectralQuadrature | None = None, *, xi=None,
                      lambda_tilde: float = 1.0, x=None) -> float:
    """``int_{k_min<=|k|<=k_max} F(k) dk/(2 pi)`` for one of :data:`INTEGRANDS`.

    The corrector integrands are the spectral densities of the incremental
    correctors built over ``band`` with direction ``xi`` and scalar
    ``lambda_tilde``; ``mixed_flux`` is ``E psi' (J grad phi') . xi``.
    """
    quad = quad or SpectralQuadrature()
    if band.empty:
        return 0.0
    kx, ky, w = quad.nodes(band)
    vals = _integrand(integrand, kx, ky, xi, lambda_tilde, x)
    return math.fsum((vals * w).ravel())
