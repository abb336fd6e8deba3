"""Monte Carlo ensembles for ``dX = eps b_L(X) dt + sqrt(2) dW``.

Expectations are over the field law and the Brownian noise.  Each field
realization ``f`` and path ``p`` owns its own keyed random streams, so results
do not depend on batching or on the number of worker threads.  Paths start at
independent uniform points of a large square; by stationarity this leaves the
law of the displacement unchanged while decorrelating paths that share a field.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng
from ._kernels import advance_paths
from .spectral_field import FieldRealization, Scheme, SpectralBand, sample_field

#: normals are pulled from keyed blocks of this many 2-vectors
DRAW_BLOCK = 4096
BATCH = 64
MAX_ABORT_FRACTION = 1e-3


@dataclass(frozen=True)
class SimConfig:
    epsilon2: float
    L: float
    dt: float = 0.02
    t_max: float = 100.0
    n_paths: int = 4096
    n_fields: int = 16
    seed: int = 0
    record_times: tuple = ()
    modes_per_octave: int = 32
    scheme: str = Scheme.STRATIFIED.value
    noise_refinement: int = 1
    start_spread: float | None = None

    def __post_init__(self):
        if not self.epsilon2 >= 0 or not math.isfinite(self.epsilon2):
            raise ValueError(f"epsilon2 must be finite and >= 0, got {self.epsilon2}")
        if self.L < 1:
            raise ValueError(f"L must be >= 1, got {self.L}")
        if not 0 < self.dt <= 0.1:
            raise ValueError(f"dt must lie in (0, 0.1] to resolve the unit UV scale, got {self.dt}")
        if self.n_paths < 1 or self.n_fields < 1:
            raise ValueError("n_paths and n_fields must be >= 1")
        if self.modes_per_octave < 1:
            raise ValueError("modes_per_octave must be >= 1")
        r = self.noise_refinement
        if r < 1 or DRAW_BLOCK % r or r & (r - 1):
            raise ValueError(f"noise_refinement must be a power of two dividing {DRAW_BLOCK}")
        rec = tuple(float(t) for t in self.record_times)
        if any(b <= a for a, b in zip(rec, rec[1:])):
            raise ValueError("record_times must be strictly increasing")
        if rec and (rec[0] < 0 or rec[-1] > self.t_max + 1e-9):
            raise ValueError("record_times must lie in [0, t_max]")
        object.__setattr__(self, "record_times", rec)
        rng.check_seed(self.seed)

    @property
    def epsilon(self) -> float:
        return math.sqrt(self.epsilon2)

    @property
    def band(self) -> SpectralBand:
        return SpectralBand.from_scale(self.L)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    @property
    def num_modes(self) -> int:
        return max(1, int(math.ceil(self.modes_per_octave * self.band.octaves)))

    @property
    def spread(self) -> float:
        return self.start_spread if self.start_spread is not None else 8 * math.pi * self.L

    def record_steps(self) -> np.ndarray:
        steps = np.rint(np.asarray(self.record_times) / self.dt).astype(np.int64)
        if np.any(np.diff(steps) <= 0):
            raise ValueError("record_times collapse onto the same step; refine dt")
        return steps

    def to_dict(self) -> dict:
        d = asdict(self)
        d["record_times"] = list(self.record_times)
        return d


@dataclass
class EnsembleResult:
    """Displacement statistics of an ensemble.

    ``displacements`` has shape (n_fields, n_paths, n_times, 2) and holds
    ``X_t - X_0``; aborted paths are NaN.  Standard errors are cluster errors
    over field realizations (paths sharing a field are not independent).
    """

    config: SimConfig
    times: np.ndarray
    displacements: np.ndarray
    n_aborted: int
    meta: dict = field(default_factory=dict)

    @property
    def n_effective(self) -> int:
        return int(np.sum(np.all(np.isfinite(self.displacements[..., -1, :]), -1))) if self.times.size else 0

    def squared(self, direction=None) -> np.ndarray:
        """(xi . dX)^2 per path and time; ``None`` averages e1 and e2."""
        d = self.displacements
        if direction is None:
            return 0.5 * np.sum(d * d, axis=-1)
        xi = np.asarray(direction, dtype=float)
        return (d @ xi) ** 2

    def field_means(self, q: np.ndarray) -> np.ndarray:
        """Compensated per-field path means of a (F, P, T) array."""
        F, _, T = q.shape
        out = np.empty((F, T))
        for f in range(F):
            for t in range(T):
                col = q[f, :, t]
                col = col[np.isfinite(col)]
                out[f, t] = math.fsum(col) / max(1, col.size)
        return out

    def mean_se(self, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        fm = self.field_means(q)
        F = fm.shape[0]
        mean = np.array([math.fsum(c) / F for c in fm.T])
        if F >= 2:
            se = fm.std(axis=0, ddof=1) / math.sqrt(F)
        else:
            flat = q.reshape(-1, q.shape[-1])
            n = np.sum(np.isfinite(flat), axis=0)
            se = np.nanstd(flat, axis=0, ddof=1) / np.sqrt(n)
        return mean, se

    @property
    def msd_directional(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean and SE of (e1 . dX)^2."""
        return self.mean_se(self.squared((1.0, 0.0)))

    @property
    def msd_total(self) -> tuple[np.ndarray, np.ndarray]:
        return self.mean_se(2.0 * self.squared(None))

    def table(self) -> list[dict]:
        m, se = self.mean_se(self.squared(None))
        mt, st = self.msd_total
        e2 = self.config.epsilon2
        rows = []
        for t, a, b, c, d in zip(self.times, m, se, mt, st):
            norm = 2 * t * math.sqrt(1 + 0.5 * e2 * math.log(t)) if t >= 1 else float("nan")
            rows.append({"t": float(t), "msd_dir_mean": float(a), "msd_dir_se": float(b),
                         "msd_total_mean": float(c), "msd_total_se": float(d),
                         "ratio": float(a / norm) if t >= 1 else float("nan"),
                         "ratio_se": float(b / norm) if t >= 1 else float("nan")})
        return rows


def _path_noise(seed: int, f: int, p: int, block: int) -> np.ndarray:
    return rng.stream(seed, rng.TAG_PATH_NOISE, f, p, block).standard_normal((DRAW_BLOCK, 2))


def path_starts(seed: int, f: int, paths, spread: float) -> np.ndarray:
    return np.array([rng.stream(seed, rng.TAG_PATH_START, f, int(p)).random(2) * spread
                     for p in paths]).reshape(-1, 2)


def integrate_paths(field_: FieldRealization, epsilon: float, dt: float, n_steps: int,
                    starts: np.ndarray, seed: int, field_index: int, path_indices,
                    record_steps: np.ndarray, refinement: int = 1):
    """Integrate paths in one quenched field; returns positions at record steps.

    The normals for path ``p`` come from blocks keyed ``(seed, field_index, p,
    block)``; one coarse step consumes ``refinement`` consecutive normals
    (summed and rescaled), so runs at ``dt`` with refinement ``2r`` and at
    ``dt/2`` with refinement ``r`` see the same Brownian path.
    """
    kx = np.ascontiguousarray(field_.kx, dtype=float)
    ky = np.ascontiguousarray(field_.ky, dtype=float)
    amp = np.ascontiguousarray(field_.amp, dtype=float)
    th = np.ascontiguousarray(field_.phase, dtype=float)
    path_indices = np.asarray(path_indices, dtype=np.int64)
    P = len(path_indices)
    record_steps = np.asarray(record_steps, dtype=np.int64)
    out = np.full((P, record_steps.size, 2), np.nan)
    alive_all = np.ones(P, dtype=bool)
    chunk = DRAW_BLOCK // refinement
    for b0 in range(0, P, BATCH):
        sl = slice(b0, min(P, b0 + BATCH))
        pidx = path_indices[sl]
        X = np.array(starts[sl], dtype=float)
        alive = np.ones(len(pidx), dtype=bool)
        rec = np.full((len(pidx), record_steps.size, 2), np.nan)
        for c0 in range(0, max(n_steps, 1), chunk):
            n = min(chunk, n_steps - c0)
            ph = X[:, 0, None] * kx + X[:, 1, None] * ky + th
            C = np.cos(ph)
            S = np.sin(ph)
            block = c0 // chunk
            raw = np.stack([_path_noise(seed, field_index, int(p), block) for p in pidx])
            noise = raw[:, : n * refinement].reshape(len(pidx), n, refinement, 2).sum(axis=2)
            noise /= math.sqrt(refinement)
            sel = (record_steps >= c0) & (record_steps <= c0 + n)
            if c0 > 0:
                sel &= record_steps > c0
            slots = np.nonzero(sel)[0].astype(np.int64)
            local = (record_steps[slots] - c0).astype(np.int64)
            if n > 0:
                advance_paths(X, C, S, kx, ky, amp, np.ascontiguousarray(noise), epsilon, dt,
                              local, slots, rec, alive)
            elif slots.size:
                rec[:, slots] = X[:, None, :]
        rec[~alive] = np.nan
        out[sl] = rec
        alive_all[sl] = alive
    return out, alive_all


def simulate_ensemble(config: SimConfig, progress=None) -> EnsembleResult:
    """Euler-Maruyama over ``n_fields`` independent fields x ``n_paths`` paths."""
    F, P = config.n_fields, config.n_paths
    rec_steps = config.record_steps()
    times = rec_steps * config.dt
    disp = np.full((F, P, rec_steps.size, 2), np.nan)
    aborted = 0
    paths = np.arange(P)
    for f in range(F):
        fld = sample_field(config.band, config.num_modes,
                           rng.stream(config.seed, rng.TAG_FIELD, f).integers(2**63),
                           scheme=config.scheme)
        starts = path_starts(config.seed, f, paths, config.spread)
        pos, alive = integrate_paths(fld, config.epsilon, config.dt, config.n_steps, starts,
                                     config.seed, f, paths, rec_steps, config.noise_refinement)
        disp[f] = pos - starts[:, None, :]
        aborted += int(np.sum(~alive))
        if progress:
            progress(f + 1, F)
    frac = aborted / (F * P)
    if frac > MAX_ABORT_FRACTION:
        raise RuntimeError(f"{aborted} of {F * P} paths left the domain; dt={config.dt} is too coarse")
    return EnsembleResult(config, times.astype(float), disp, aborted,
                          meta={"abort_fraction": frac, "num_modes": config.num_modes})


# --------------------------------------------------------------------------
# effective diffusivity
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DiffusivityEstimate:
    L: float
    lambda_hat: float
    half_width: float
    window: tuple
    epsilon2: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def homogenization_window(L: float, epsilon2: float, start: float = 2.0, stop: float = 10.0) -> tuple:
    """Default fit window ``[start, stop] * L^2 / lambda_ref`` in the diffusive regime."""
    lam = math.sqrt(1.0 + epsilon2 * math.log(L))
    return (start * L * L / lam, stop * L * L / lam)


def _slope(t: np.ndarray, y: np.ndarray) -> float:
    tc = t - t.mean()
    return float(np.dot(tc, y - y.mean()) / np.dot(tc, tc))


def estimate_lambda(result: EnsembleResult, window: tuple, direction=None, n_boot: int = 400,
                    guard: float = 0.5, confidence: float = 0.95) -> DiffusivityEstimate:
    """Least-squares slope of MSD/2 over ``window`` with a field-cluster bootstrap CI.

    The window must sit in the homogenized regime of the cutoff process:
    ``t1 * lambda_hat >= guard * L^2``.
    """
    t1, t2 = window
    cfg = result.config
    t = result.times
    sel = (t >= t1 - 1e-9) & (t <= t2 + 1e-9)
    if np.count_nonzero(sel) < 2:
        raise ValueError(f"window [{t1}, {t2}] contains fewer than two record times")
    q = result.squared(direction)[:, :, sel]
    fm = result.field_means(q)
    ts = t[sel]
    lam = _slope(ts, fm.mean(axis=0)) / 2.0
    if cfg.band.empty is False and t1 * max(lam, 1e-12) < guard * cfg.L**2 * (1 - 1e-9):
        raise ValueError(
            f"window start t1={t1} is not in the diffusive regime of L={cfg.L}: "
            f"need t1*lambda >= {guard}*L^2 (lambda_hat={lam:.3f})")
    gen = rng.stream(cfg.seed, rng.TAG_BOOTSTRAP)
    F = fm.shape[0]
    if F >= 4:
        units = fm
    else:
        # too few fields for a cluster bootstrap: fall back to path groups
        flat = q.reshape(-1, q.shape[-1])
        flat = flat[np.all(np.isfinite(flat), axis=1)]
        groups = np.array_split(flat, min(32, len(flat)))
        units = np.stack([g.mean(axis=0) for g in groups])
    idx = gen.integers(0, len(units), size=(n_boot, len(units)))
    boots = np.array([_slope(ts, units[i].mean(axis=0)) / 2.0 for i in idx])
    z = _normal_quantile(0.5 + confidence / 2)
    return DiffusivityEstimate(cfg.L, lam, float(z * boots.std(ddof=1)), (float(t1), float(t2)),
                               cfg.epsilon2)


def direction_difference(result: EnsembleResult, window: tuple, d1=(1.0, 0.0), d2=(0.0, 1.0),
                         n_boot: int = 400, confidence: float = 0.95) -> tuple[float, float]:
    """``lambda_hat(d1) - lambda_hat(d2)`` with a paired field-cluster bootstrap half-width.

    Both directions come from the same paths, so their errors are correlated;
    resampling fields jointly keeps that correlation in the interval.
    """
    t = result.times
    sel = (t >= window[0] - 1e-9) & (t <= window[1] + 1e-9)
    ts = t[sel]
    u = (result.field_means(result.squared(d1)[:, :, sel])
         - result.field_means(result.squared(d2)[:, :, sel]))
    diff = _slope(ts, u.mean(axis=0)) / 2.0
    gen = rng.stream(result.config.seed, rng.TAG_BOOTSTRAP, 1)
    idx = gen.integers(0, len(u), size=(n_boot, len(u)))
    boots = np.array([_slope(ts, u[i].mean(axis=0)) / 2.0 for i in idx])
    return diff, float(_normal_quantile(0.5 + confidence / 2) * boots.std(ddof=1))


def _normal_quantile(p: float) -> float:
    from statistics import NormalDist
    return NormalDist().inv_cdf(p)


# --------------------------------------------------------------------------
# superdiffusion at fixed large cutoff
# --------------------------------------------------------------------------

def superdiffusion_experiment(epsilon2: float, t_grid, n_fields: int, n_paths: int, *,
                              L: float | None = None, dt: float = 0.05, seed: int = 0,
                              safety: float = 10.0, modes_per_octave: int = 32,
                              result: EnsembleResult | None = None) -> dict:
    """Ratio table ``E(xi.X_t)^2 / (2t sqrt(1 + eps^2 ln(t) / 2))`` over ``t_grid``.

    ``L`` must keep the infrared cutoff invisible over the horizon:
    ``L >= safety * sqrt(t_max * lambda_expected)``.
    """
    t_grid = np.asarray(sorted(float(t) for t in t_grid))
    if t_grid[0] < 1:
        raise ValueError("t_grid must start at t >= 1")
    t_max = float(t_grid[-1])
    lam_expected = math.sqrt(1 + 0.5 * epsilon2 * math.log(t_max))
    need = safety * math.sqrt(t_max * lam_expected)
    if L is None:
        L = 10 ** math.ceil(math.log10(need))
    if L < need:
        raise ValueError(f"L={L} is too small for horizon t_max={t_max}: need L >= {need:.1f}")
    if result is None:
        cfg = SimConfig(epsilon2=epsilon2, L=L, dt=dt, t_max=t_max, n_paths=n_paths,
                        n_fields=n_fields, seed=seed, record_times=tuple(t_grid),
                        modes_per_octave=modes_per_octave)
        result = simulate_ensemble(cfg)
    m, se = result.mean_se(result.squared(None))
    t = result.times
    norm = 2 * t * np.sqrt(1 + 0.5 * epsilon2 * np.log(t))
    wrong = 2 * t * (1 + 0.5 * epsilon2 * np.log(t))
    ratio, ratio_se = m / norm, se / norm
    mis, mis_se = m / wrong, se / wrong
    return {
        "epsilon2": epsilon2, "L": L, "times": t.tolist(),
        "msd": m.tolist(), "msd_se": se.tolist(),
        "ratio": ratio.tolist(), "ratio_se": ratio_se.tolist(),
        "misnormalized_ratio": mis.tolist(), "misnormalized_se": mis_se.tolist(),
        "flatness": float(ratio.max() / ratio.min()),
        "misnormalized_drift": float(abs(mis[-1] / mis[0] - 1.0)),
        "misnormalized_monotone": bool(np.all(np.diff(mis) < 0) or np.all(np.diff(mis) > 0)),
        "result": result,
    }
