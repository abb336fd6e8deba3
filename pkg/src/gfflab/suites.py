"""Named experiment suites with versioned presets and tolerance profiles.

A suite runs one experiment family and returns a :class:`SuiteResult` holding
metrics, tables and one :class:`Check` per gate.  The harness persists these;
the acceptance tests assert the checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import corrector_lab as cl
from . import parabolic_check as pc
from . import renorm_flow as rf
from . import rng
from . import sde_engine as sde
from .spectral_field import (DEFAULT_MODES_PER_OCTAVE, SpectralBand, SpectralQuadrature,
                             default_num_modes, eval_all, eval_b, eval_grad_psi,
                             eval_hessian_psi, eval_psi, sample_field, spectral_integral)

TOLERANCE_VERSION = 1
SUITES = ("theorem1", "theorem2", "monotonicity", "lemma51", "lemma61", "lemma71", "lemma91",
          "rg-appendix")


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "detail": self.detail}


@dataclass
class SuiteResult:
    name: str
    preset: str
    params: dict
    metrics: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def add(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append(Check(name, bool(passed), detail))


# --------------------------------------------------------------------------
# presets: every tunable of every suite, with its type
# --------------------------------------------------------------------------

PRESETS = {
    "theorem1": {
        "quick": dict(epsilon2=0.5, L=1000.0, t_min=10.0, t_max=1000.0, n_times=9, n_fields=16,
                      n_paths=512, dt=0.05, modes_per_octave=32, seed=1, band_lo=0.7, band_hi=1.4),
        "paper": dict(epsilon2=0.5, L=1000.0, t_min=10.0, t_max=1000.0, n_times=13, n_fields=32,
                      n_paths=1024, dt=0.05, modes_per_octave=32, seed=1, band_lo=0.7, band_hi=1.4),
    },
    "theorem2": {
        "quick": dict(epsilon2=0.5, L=[4.0, 16.0], n_fields=16, n_paths=4096, dt=0.05,
                      modes_per_octave=32, window_start=1.0, window_stop=3.0, n_times=16, M=4.0,
                      seed=2, gate_lo=0.5, gate_hi=2.0, dt_check_L=4.0),
        "paper": dict(epsilon2=0.5, L=[4.0, 16.0, 64.0], n_fields=16, n_paths=4096, dt=0.05,
                      modes_per_octave=32, window_start=1.0, window_stop=3.0, n_times=16, M=4.0,
                      seed=2, gate_lo=0.67, gate_hi=1.5, dt_check_L=4.0),
    },
    "monotonicity": {
        "quick": dict(epsilon2=[0.25, 0.5, 1.0], L=16.0, n_fields=16, n_paths=512, dt=0.05,
                      modes_per_octave=32, window_start=1.0, window_stop=3.0, n_times=16, seed=3),
        "paper": dict(epsilon2=[0.25, 0.5, 1.0], L=16.0, n_fields=16, n_paths=4096, dt=0.05,
                      modes_per_octave=32, window_start=1.0, window_stop=3.0, n_times=16, seed=3),
    },
    "lemma51": {
        "quick": dict(variance_L=[2.0, 8.0, 32.0], cutoff_L=[2.0, 8.0], realizations=4000,
                      modes_per_octave=DEFAULT_MODES_PER_OCTAVE, mc_samples=20000,
                      prime_cases=[[1.0, 2.0, 1.0], [2.0, 4.0, 1.3], [16.0, 4.0, 2.0]],
                      fd_points=100, seed=4),
        "paper": dict(variance_L=[2.0, 8.0, 32.0], cutoff_L=[2.0, 8.0], realizations=16000,
                      modes_per_octave=DEFAULT_MODES_PER_OCTAVE, mc_samples=100000,
                      prime_cases=[[1.0, 2.0, 1.0], [2.0, 4.0, 1.3], [16.0, 4.0, 2.0]],
                      fd_points=100, seed=4),
    },
    "lemma61": {
        "quick": dict(epsilon2=0.5, M=4.0, levels=5, samples=20000, modes_per_level=64,
                      fd_points=100, seed=5),
        "paper": dict(epsilon2=0.5, M=4.0, levels=5, samples=100000, modes_per_level=64,
                      fd_points=100, seed=5),
    },
    "lemma71": {
        "quick": dict(epsilon2=0.5, M=4.0, levels=5, samples=20000, modes_per_level=64, seed=5),
        "paper": dict(epsilon2=0.5, M=4.0, levels=5, samples=100000, modes_per_level=64, seed=5),
    },
    "lemma91": {
        "quick": dict(epsilon2=0.5, L=4.0, T=16.0, n_fields=2, n_paths=20000, grid=512,
                      box_mult=4.0, dt_pde=0.05, dt_sde=0.01, tolerance=0.05, seed=6,
                      refine_grid=True),
        "paper": dict(epsilon2=0.5, L=4.0, T=16.0, n_fields=4, n_paths=40000, grid=512,
                      box_mult=4.0, dt_pde=0.05, dt_sde=0.01, tolerance=0.05, seed=6,
                      refine_grid=True),
    },
    "rg-appendix": {
        "quick": dict(z0=1.0, z0_asymptotic=1.995, decades=3.0, step=1e-3,
                      epsilon2=[0.0, 0.1, 0.5, 1.0, 4.0], M=[2.0, 4.0, 16.0], steps=40),
        "paper": dict(z0=1.0, z0_asymptotic=1.995, decades=3.0, step=1e-3,
                      epsilon2=[0.0, 0.1, 0.5, 1.0, 4.0], M=[2.0, 4.0, 16.0], steps=40),
    },
}


def defaults(name: str, preset: str = "quick") -> dict:
    if name not in PRESETS:
        raise KeyError(f"unknown suite {name!r}; known: {', '.join(SUITES)}")
    if preset not in PRESETS[name]:
        raise KeyError(f"unknown preset {preset!r} for {name}")
    return {k: (list(v) if isinstance(v, list) else v) for k, v in PRESETS[name][preset].items()}


def _fmt(x, nd=4) -> str:
    return f"{x:.{nd}g}"


# --------------------------------------------------------------------------
# spectral field and incremental correctors
# --------------------------------------------------------------------------

def field_moment(band: SpectralBand, num_modes: int, realizations: int, seed: int, fn,
                 chunk: int = 250) -> tuple[float, float]:
    """Mean and SE of ``fn(field, points)`` over independent realizations.

    Realizations are drawn in chunks with their own keyed seeds, each read at
    an independent uniform point.
    """
    vals = []
    for c0 in range(0, realizations, chunk):
        n = min(chunk, realizations - c0)
        s = rng.stream(seed, rng.TAG_FIELD, 7, c0).integers(2**63)
        f = sample_field(band, num_modes, s, n_realizations=n)
        x = rng.stream(seed, rng.TAG_PATH_START, 7, c0).random((n, 2)) * 1e4 / band.k_min
        vals.append(np.asarray(fn(f, x), dtype=float).reshape(n))
    v = np.concatenate(vals)
    return math.fsum(v) / v.size, float(v.std(ddof=1) / math.sqrt(v.size))


def cutoff_difference_moment(L: float, realizations: int, per_octave: int, seed: int,
                             ir_scale: float = 1e6) -> tuple[float, float]:
    """``E|b - b_L|^2`` with ``b`` over ``[1/(ir L), 1]`` assembled from independent bands."""
    low = SpectralBand(1.0 / (ir_scale * L), 1.0 / L)
    high = SpectralBand.from_scale(L)
    n_low = default_num_modes(low, per_octave)
    n_high = default_num_modes(high, per_octave)
    vals = []
    chunk = 100
    for c0 in range(0, realizations, chunk):
        n = min(chunk, realizations - c0)
        g = rng.stream(seed, rng.TAG_FIELD, 8, c0)
        fl = sample_field(low, n_low, g.integers(2**63), n_realizations=n)
        fh = sample_field(high, n_high, g.integers(2**63), n_realizations=n)
        x = rng.stream(seed, rng.TAG_PATH_START, 8, c0).random((n, 2)) * 1e3 * L
        b_full = eval_b(fl + fh, x)
        b_L = eval_b(fh, x)
        vals.append(np.sum((b_full - b_L) ** 2, -1))
    v = np.concatenate(vals)
    return math.fsum(v) / v.size, float(v.std(ddof=1) / math.sqrt(v.size))


def fd_mode_sum_check(n_points: int, seed: int, h: float = 1e-5) -> dict:
    """Central differences of psi and grad psi against the analytic mode sums.

    The allowance is the truncation bound ``h^2/6 sum |a||k|^3`` (one power of
    ``k`` higher for the Hessian) plus a round-off term of order ``ulp/h``.
    """
    band = SpectralBand.from_scale(8.0)
    f = sample_field(band, 256, seed)
    x = rng.stream(seed, rng.TAG_PATH_START, 9).random((n_points, 2)) * 100
    a = np.abs(f.amp)
    k = f.wavenumbers
    ulp = 4 * np.finfo(float).eps
    allow_g = h * h / 6 * np.sum(a * k**3) + ulp * np.sum(a) / h
    allow_h = h * h / 6 * np.sum(a * k**4) + ulp * np.sum(a * k) / h
    g = eval_grad_psi(f, x)
    H = eval_hessian_psi(f, x)
    _, g2, H2 = eval_all(f, x)
    err_g = err_h = 0.0
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (eval_psi(f, x + e) - eval_psi(f, x - e)) / (2 * h)
        err_g = max(err_g, float(np.max(np.abs(fd - g[:, i]))))
        fdh = (eval_grad_psi(f, x + e) - eval_grad_psi(f, x - e)) / (2 * h)
        err_h = max(err_h, float(np.max(np.abs(fdh - H[:, :, i]))))
    sym = float(np.max(np.abs(H - np.swapaxes(H, -1, -2))))
    agree = float(max(np.max(np.abs(g - g2)), np.max(np.abs(H - H2))))
    return {"grad_error": err_g, "grad_allowance": float(allow_g), "hess_error": err_h,
            "hess_allowance": float(allow_h), "hessian_asymmetry": sym,
            "eval_all_mismatch": agree,
            "pass": err_g <= allow_g and err_h <= allow_h and sym == 0.0
            and agree <= 1e-12}


def run_lemma51(p: dict) -> SuiteResult:
    res = SuiteResult("lemma51", p.get("preset", "quick"), p)
    seed, S = p["seed"], p["realizations"]
    quad = SpectralQuadrature(radial_nodes=64, angular_nodes=64, rule="gauss")
    rows = []
    ok_var = True
    for L in p["variance_L"]:
        band = SpectralBand.from_scale(L)
        m, se = field_moment(band, default_num_modes(band, p["modes_per_octave"]), S, seed,
                             lambda f, x: eval_psi(f, x) ** 2)
        q = spectral_integral(band, "variance_psi")
        q_mid = spectral_integral(band, "variance_psi", SpectralQuadrature())
        ok = abs(m - math.log(L)) <= 3 * se and abs(q - math.log(L)) <= 1e-6 \
            and abs(q_mid - math.log(L)) <= 1e-6
        ok_var &= ok
        rows.append({"L": L, "mc_mean": m, "mc_se": se, "ln_L": math.log(L), "quadrature": q,
                     "quadrature_midpoint": q_mid, "pass": ok})
    res.tables["gff_variance"] = rows
    res.add("gff_variance", ok_var, "; ".join(
        f"L={r['L']:g}: {r['mc_mean']:.4f}+-{r['mc_se']:.4f} vs lnL={r['ln_L']:.4f}, "
        f"quad err {abs(r['quadrature'] - r['ln_L']):.1e}" for r in rows))

    rows = []
    ok_cut = True
    for L in p["cutoff_L"]:
        m, se = cutoff_difference_moment(L, S, p["modes_per_octave"] // 8, seed)
        exact = 1 / (2 * L * L)
        ok = abs(m - exact) <= 3 * se
        ok_cut &= ok
        rows.append({"L": L, "mc_mean": m, "mc_se": se, "exact": exact, "pass": ok})
    res.tables["cutoff_error"] = rows
    res.add("cutoff_error", ok_cut, "; ".join(
        f"L={r['L']:g}: {r['mc_mean']:.5f}+-{r['mc_se']:.5f} vs {r['exact']:.5f}" for r in rows))

    rows = []
    for i, (L, M, lam) in enumerate(p["prime_cases"]):
        for r in cl.verify_lemma_prime(L, M, lam, quad, p["mc_samples"], seed=seed + i):
            rows.append({"L": L, "M": M, "lambda_tilde": lam, **r})
    res.tables["lemma51"] = rows
    worst = max(r.get("quadrature_error", 0.0) for r in rows)
    res.add("lemma51_identities", all(r["pass"] for r in rows),
            f"{len(rows)} quantities over {len(p['prime_cases'])} cases; "
            f"max closed-form error {worst:.1e}; "
            f"max |mc-quad|/se {max(abs(r['mc_mean'] - r['quadrature']) / r['mc_se'] for r in rows):.2f}")
    inc = cl.build_incremental(2.0, 4.0, 1.3, (0.6, 0.8), seed)
    x = rng.stream(seed, rng.TAG_PROXY, 9).random((100, 2)) * 50
    resid = float(np.max(np.abs(inc.residual(x))))
    res.metrics["incremental_residual"] = resid
    res.add("incremental_identity", resid <= 1e-12, f"max residual {resid:.1e}")
    fd = fd_mode_sum_check(p["fd_points"], seed)
    res.metrics["fd_mode_sum"] = fd
    res.add("fd_mode_sums", fd["pass"],
            f"grad err {fd['grad_error']:.1e} <= {fd['grad_allowance']:.1e}; "
            f"hess err {fd['hess_error']:.1e} <= {fd['hess_allowance']:.1e}")
    return res


# --------------------------------------------------------------------------
# renormalization ladder and RG ODE
# --------------------------------------------------------------------------

def run_rg_appendix(p: dict) -> SuiteResult:
    res = SuiteResult("rg-appendix", p.get("preset", "quick"), p)
    worst_res = 0.0
    ok = True
    grid_rows = []
    for e2 in p["epsilon2"]:
        for M in p["M"]:
            st = rf.iterate_lambda(e2, M, p["steps"])
            try:
                certs = rf.certify_bounds(st)
                held = all(c.lower_gap >= -1e-12 and
                           c.lower_gap <= c.upper_integral * (1 + 1e-12) + 1e-12 for c in certs)
            except rf.SandwichViolation as exc:
                held, certs = False, []
                grid_rows.append({"epsilon2": e2, "M": M, "error": str(exc)})
            worst_res = max(worst_res, float(np.max(np.abs(st.identity_residual))))
            mono = bool(np.all(np.diff(st.lam) > 0)) if e2 > 0 else bool(np.all(st.lam == 1))
            ok &= held and mono
            if certs:
                c = certs[-1]
                grid_rows.append({"epsilon2": e2, "M": M, "L": c.L, "gap": c.lower_gap,
                                  "upper_sum": c.upper_sum, "upper_integral": c.upper_integral,
                                  "monotone": mono})
    res.tables["sandwich"] = grid_rows
    res.metrics["identity_residual_max"] = worst_res
    ok &= worst_res <= 4 * np.finfo(float).eps
    n_cases = len(p["epsilon2"]) * len(p["M"]) * (p["steps"] + 1)
    res.add("recursion_sandwich", ok,
            f"{n_cases} rungs; step identity residual {worst_res:.1e}")

    span = p["decades"] * math.log(10)
    tr = rf.rg_ode_integrate(p["z0"], span, p["step"])
    z_err = float(np.max(np.abs(tr.z - tr.closed_form_z())))
    msd_err = float(np.max(np.abs(np.expm1(tr.log_msd - tr.closed_form_log_msd()))))
    # asymptotic law ell^2 (t/tau) sqrt(ln(t/tau)), with ell fitted, for t >> tau
    ta = rf.rg_ode_integrate(p["z0_asymptotic"], span, p["step"])
    d = ta.log_msd - (ta.log_time + 0.5 * np.log(ta.log_time))
    asym_err = float(np.max(np.abs(np.expm1(d - 0.5 * (d.max() + d.min())))))
    d1 = tr.log_msd - (tr.log_time + 0.5 * np.log(tr.log_time))
    asym_err_early = float(np.max(np.abs(np.expm1(d1 - 0.5 * (d1.max() + d1.min())))))
    fixed = rf.rg_ode_integrate(2.0, 1.0, p["step"])
    res.metrics.update({"z_error": z_err, "msd_closed_form_error": msd_err,
                        "msd_asymptotic_error": asym_err,
                        "msd_asymptotic_error_from_z0": asym_err_early,
                        "z_at_u2": float(np.interp(2.0, tr.log_time, tr.z)), "fixed_point_drift": float(np.max(np.abs(fixed.z - 2)))})
    res.tables["rg_ode"] = [{"log_time": float(u), "z": float(z), "z_closed": float(zc),
                             "log_msd": float(m)}
                            for u, z, zc, m in list(zip(tr.log_time, tr.z, tr.closed_form_z(),
                                                        tr.log_msd))[:: max(1, len(tr.z) // 200)]]
    res.add("rg_ode", z_err <= 1e-6 and msd_err <= 1e-4 and asym_err <= 1e-4
            and abs(res.metrics["z_at_u2"] - 1.5) <= 1e-6 and res.metrics["fixed_point_drift"] == 0.0,
            f"z err {z_err:.1e}; MSD vs integrated law {msd_err:.1e}; "
            f"MSD vs l^2 (t/tau) sqrt(ln) for ln(t/tau)>={1 / (2 - p['z0_asymptotic']):.0f}: {asym_err:.1e} "
            f"(from ln(t/tau)=1: {asym_err_early:.1e})")
    return res


# --------------------------------------------------------------------------
# tracer experiments
# --------------------------------------------------------------------------

def _window_times(L, e2, start, stop, n):
    lo, hi = sde.homogenization_window(L, e2, start, stop)
    return lo, hi, tuple(np.round(np.linspace(lo, hi, n), 6))


def _snap(times, dt):
    return tuple(sorted(set(float(round(t / dt) * dt) for t in times)))


def lambda_at(L, e2, p, n_fields, n_paths, seed, dt=None, refinement=1, directions=(None,)):
    dt = dt or p["dt"]
    lo, hi, ts = _window_times(L, e2, p["window_start"], p["window_stop"], p["n_times"])
    # record on the preset grid so runs at dt and dt/2 share their times
    ts = _snap(ts, p["dt"])
    cfg = sde.SimConfig(epsilon2=e2, L=L, dt=dt, t_max=ts[-1], n_paths=n_paths, n_fields=n_fields,
                        seed=seed, record_times=ts, modes_per_octave=p["modes_per_octave"],
                        noise_refinement=refinement)
    r = sde.simulate_ensemble(cfg)
    ests = [sde.estimate_lambda(r, (ts[0], ts[-1]), direction=d) for d in directions]
    return r, ests


def run_theorem2(p: dict) -> SuiteResult:
    res = SuiteResult("theorem2", p.get("preset", "quick"), p)
    e2 = p["epsilon2"]
    if not p["L"]:
        raise ValueError("empty L grid")
    ests, rows = [], []
    for L in p["L"]:
        r, (e, e1, e2d) = lambda_at(L, e2, p, p["n_fields"], p["n_paths"], p["seed"],
                                   directions=(None, (1.0, 0.0), (0.0, 1.0)))
        ests.append(e)
        aniso, aniso_hw = sde.direction_difference(r, e.window)
        law = 1 + e2 * math.log(L)
        rows.append({"L": L, "lambda_hat": e.lambda_hat, "half_width": e.half_width,
                     "ratio_sq": e.lambda_hat**2 / law, "lambda_e1": e1.lambda_hat,
                     "lambda_e2": e2d.lambda_hat, "hw_e1": e1.half_width, "hw_e2": e2d.half_width,
                     "window": list(e.window), "aborted": r.n_aborted,
                     "e1_minus_e2": aniso, "e1_minus_e2_hw": aniso_hw})
    res.tables["lambda"] = rows
    ratios = [r["ratio_sq"] for r in rows]
    lam = [r["lambda_hat"] for r in rows]
    in_gate = all(p["gate_lo"] <= q <= p["gate_hi"] for q in ratios)
    mono = all(b >= a for a, b in zip(lam, lam[1:]))
    res.add("theorem2", in_gate and mono,
            ", ".join(f"L={r['L']:g}: lam={r['lambda_hat']:.3f}+-{r['half_width']:.3f} "
                      f"ratio^2={r['ratio_sq']:.3f}" for r in rows)
            + f"; gate [{p['gate_lo']}, {p['gate_hi']}]; monotone={mono}")
    # paired interval: both directions share paths and fields
    iso = all(abs(r["e1_minus_e2"]) <= r["e1_minus_e2_hw"] for r in rows)
    res.add("isotropy", iso, "; ".join(
        f"L={r['L']:g}: e1 {r['lambda_e1']:.3f} e2 {r['lambda_e2']:.3f} "
        f"diff {r['e1_minus_e2']:+.3f}+-{r['e1_minus_e2_hw']:.3f}" for r in rows))
    n = int(round(math.log(max(p["L"])) / math.log(p["M"])))
    ladder = rf.iterate_lambda(e2, p["M"], n)
    cmp_rows = rf.compare_recursion_vs_simulation(ladder, ests)
    res.tables["recursion_vs_simulation"] = cmp_rows
    res.tables["ladder"] = ladder.rows()
    res.add("recursion_vs_simulation", all(abs(r["hat_over_tilde"] - 1) <= 0.25 for r in cmp_rows),
            "; ".join(f"L={r['L']:g}: hat/tilde={r['hat_over_tilde']:.3f}" for r in cmp_rows))
    # time-step halving on the same Brownian paths
    Lc = p["dt_check_L"]
    _, (coarse,) = lambda_at(Lc, e2, p, p["n_fields"], p["n_paths"], p["seed"] + 1,
                             dt=p["dt"], refinement=2)
    _, (fine,) = lambda_at(Lc, e2, p, p["n_fields"], p["n_paths"], p["seed"] + 1,
                           dt=p["dt"] / 2, refinement=1)
    diff = fine.lambda_hat - coarse.lambda_hat
    res.metrics["dt_halving"] = {"L": Lc, "coarse": coarse.lambda_hat, "fine": fine.lambda_hat,
                                 "difference": diff, "ci_half_width": coarse.half_width}
    res.add("dt_halving", abs(diff) < min(coarse.half_width, fine.half_width),
            f"L={Lc:g}: dt={p['dt']} -> {coarse.lambda_hat:.4f}, dt={p['dt'] / 2} -> "
            f"{fine.lambda_hat:.4f}, |diff|={abs(diff):.4f} vs CI {min(coarse.half_width, fine.half_width):.4f}")
    return res


def run_monotonicity(p: dict) -> SuiteResult:
    res = SuiteResult("monotonicity", p.get("preset", "quick"), p)
    rows = []
    for e2 in sorted(p["epsilon2"]):
        _, (e,) = lambda_at(p["L"], e2, p, p["n_fields"], p["n_paths"], p["seed"])
        rows.append({"epsilon2": e2, "lambda_hat": e.lambda_hat, "half_width": e.half_width,
                     "window": list(e.window)})
    res.tables["lambda"] = rows
    ok = all(b["lambda_hat"] >= a["lambda_hat"] - (a["half_width"] + b["half_width"])
             for a, b in zip(rows, rows[1:]))
    res.add("monotonicity", ok, ", ".join(
        f"eps2={r['epsilon2']:g}: {r['lambda_hat']:.3f}+-{r['half_width']:.3f}" for r in rows))
    return res


def run_theorem1(p: dict) -> SuiteResult:
    res = SuiteResult("theorem1", p.get("preset", "quick"), p)
    ts = _snap(np.geomspace(p["t_min"], p["t_max"], p["n_times"]), p["dt"])
    out = sde.superdiffusion_experiment(p["epsilon2"], ts, p["n_fields"], p["n_paths"], L=p["L"],
                                        dt=p["dt"], seed=p["seed"],
                                        modes_per_octave=p["modes_per_octave"])
    r = out.pop("result")
    res.tables["msd"] = r.table()
    res.tables["ratio"] = [{"t": t, "ratio": q, "ratio_se": s, "misnormalized": m,
                            "misnormalized_se": ms}
                           for t, q, s, m, ms in zip(out["times"], out["ratio"], out["ratio_se"],
                                                     out["misnormalized_ratio"],
                                                     out["misnormalized_se"])]
    res.metrics.update({k: v for k, v in out.items() if not isinstance(v, list)})
    res.metrics["aborted"] = r.n_aborted
    ok_band = all(p["band_lo"] <= q <= p["band_hi"] for q in out["ratio"])
    ok_drift = out["misnormalized_drift"] > 0.2
    res.add("theorem1", ok_band and ok_drift,
            f"ratio in [{min(out['ratio']):.3f}, {max(out['ratio']):.3f}] (gate "
            f"[{p['band_lo']}, {p['band_hi']}]), flatness {out['flatness']:.3f}; "
            f"mis-normalized drift {out['misnormalized_drift']:.3f} (> 0.2)")
    return res


# --------------------------------------------------------------------------
# proxy hierarchy
# --------------------------------------------------------------------------

def _proxy(p):
    return cl.build_proxy(p["levels"], math.sqrt(p["epsilon2"]), p["M"], p["seed"],
                          num_modes=p["modes_per_level"], n_realizations=p["samples"])


def proxy_fd_check(n_points: int, seed: int, h: float = 1e-3) -> dict:
    """Chain-rule gradients of the proxies against central differences at h and h/2."""
    node = cl.build_proxy(3, math.sqrt(0.5), 4.0, seed, num_modes=32)
    x = rng.stream(seed, rng.TAG_PROXY, 10).random((n_points, 2)) * 100
    v = node.evaluate(x)
    errs = {}
    for hh in (h, h / 2):
        eg = es = 0.0
        for i in range(2):
            e = np.zeros(2)
            e[i] = hh
            vp, vm = node.evaluate(x + e), node.evaluate(x - e)
            eg = max(eg, float(np.max(np.abs((vp.phi - vm.phi) / (2 * hh) - v.grad_phi[..., i]))))
            es = max(es, float(np.max(np.abs((vp.sigma - vm.sigma) / (2 * hh) - v.grad_sigma[..., i]))))
        errs[hh] = (eg, es)
    scale = float(np.max(np.abs(v.grad_phi))) + float(np.max(np.abs(v.grad_sigma)))
    order_phi = math.log2(errs[h][0] / errs[h / 2][0])
    order_sig = math.log2(errs[h][1] / errs[h / 2][1])
    ok = min(order_phi, order_sig) >= 1.8 and max(errs[h]) <= 1e-4 * scale
    return {"error_h": errs[h], "error_h2": errs[h / 2], "order_phi": order_phi,
            "order_sigma": order_sig, "scale": scale, "pass": ok}


def run_lemma61(p: dict, node=None) -> SuiteResult:
    res = SuiteResult("lemma61", p.get("preset", "quick"), p)
    node = node or _proxy(p)
    rep = cl.verify_proxy_moments(node, seed=p["seed"])
    rows = []
    for r, cen, agree in zip(rep["rows"], rep["centered"], rep["oracle_agreement"]):
        rows.append({"level": r["level"], "L": r["L"], "lambda_tilde": r["lambda_tilde"],
                     "E_phi_1": r["E phi_1"], "E_phi_2": r["E phi_2"],
                     "E_sigma_1": r["E sigma_1"], "E_sigma_2": r["E sigma_2"],
                     "E_phi1_phi2": r["E phi_1 phi_2"],
                     "second": r["lam2 E phi^2 / (eps2 L^2)"],
                     "second_oracle": r["oracle lam2 E phi^2 / (eps2 L^2)"],
                     "second_with_sigma": r["(lam2 E phi^2 + E sigma^2) / (eps2 L^2)"],
                     "fourth": r["lam4 E phi^4 / (eps4 L^4)"], "oracle_agreement": bool(agree)})
    res.tables["moments"] = rows

    def z(t):
        return abs(t[0]) <= 3 * t[1] or t == (0.0, 0.0)

    centered = all(z(r[k]) for r in rows for k in ("E_phi_1", "E_phi_2", "E_sigma_1", "E_sigma_2"))
    orth = all(z(r["E_phi1_phi2"]) for r in rows)
    sec, fou = rep["second"], rep["fourth"]
    res.add("proxy_centered", centered, "E phi, E sigma within 3 SE of 0 at levels 0-%d" % node.level)
    res.add("proxy_orthogonal", orth, "E phi_1 phi_2 within 3 SE of 0")
    res.add("proxy_second_moment", all(sec["ok"]) and all(r["oracle_agreement"] for r in rows),
            "lam^2 E phi^2/(eps^2 L^2): " + ", ".join(_fmt(r["second"][0], 3) for r in rows)
            + f"; C_fit={sec['c_fit']:.3f}; exact recursion matched within 3 SE")
    res.add("proxy_fourth_moment", all(fou["ok"]),
            "lam^4 E phi^4/(eps^4 L^4): " + ", ".join(_fmt(r["fourth"][0], 3) for r in rows)
            + f"; C_fit={fou['c_fit']:.3f}")
    cross = rep["band_cross_covariance"]
    res.tables["band_cross"] = cross
    res.add("band_independence", all(c["pass"] for c in cross),
            f"{len(cross)} consecutive band pairs")
    zero = cl.build_proxy(node.level, 0.0, node.M, p["seed"], num_modes=8, n_realizations=64)
    zv = zero.evaluate(np.zeros((64, 2)), levels=True)
    base = node.evaluate(np.zeros((1, 2)), levels=True)[0]
    exact0 = all(not np.any(getattr(v, a)) for v in zv for a in ("phi", "grad_phi", "sigma", "grad_sigma", "f"))
    exact0 &= all(not np.any(getattr(base, a)) for a in ("phi", "grad_phi", "sigma", "grad_sigma", "f"))
    res.add("proxy_exact_zeros", exact0, "eps=0 at every level and level 0 vanish identically")
    iso = {d: cl.isotropy_transform_check(node, d, seed=p["seed"]) for d in (0, 90, 180)}
    res.metrics["isotropy"] = {str(d): r["pass"] for d, r in iso.items()}
    res.add("proxy_isotropy", all(r["pass"] for r in iso.values()), "rotations 0, 90, 180")
    fd = proxy_fd_check(p["fd_points"], p["seed"])
    res.metrics["fd_proxy"] = fd
    res.add("fd_proxy_chain_rule", fd["pass"],
            f"observed order phi {fd['order_phi']:.2f}, sigma {fd['order_sigma']:.2f}")
    return res


def run_lemma71(p: dict, node=None) -> SuiteResult:
    res = SuiteResult("lemma71", p.get("preset", "quick"), p)
    node = node or _proxy(p)
    rep = cl.verify_proxy_moments(node, seed=p["seed"])
    samples = cl.sample_error_field(node, seed=p["seed"])
    rows = []
    for s, r in zip(samples, rep["rows"]):
        rows.append({"level": s.level, "E_f": s.mean.tolist(), "E_f_se": s.mean_se.tolist(),
                     "E_f2": s.second_moment, "E_f2_over_lambda": r["E|f|^2 / lam"],
                     "normalized_by_bound_shape": s.normalized,
                     "recursion_mismatch": s.recursion_mismatch})
    res.tables["error_field"] = rows
    src = rep.get("flux_source")
    if src:
        res.tables["flux_source"] = [{"step": n, "mean": m, "se": se, "ok": ok}
                                     for n, ((m, se), ok) in enumerate(zip(src["normalized_source"], src["ok"]))]
    mism = max(s.recursion_mismatch for s in samples)
    res.metrics["recursion_mismatch"] = mism
    res.add("error_recursion_consistent", mism <= 1e-10, f"max |f_rec - f_direct| = {mism:.1e}")
    mean_ok = all(np.all(np.abs(s.mean) <= 3 * s.mean_se) or not np.any(s.mean_se) for s in samples)
    res.add("error_centered", mean_ok, "E f within 3 SE of 0 at every level")
    raw = [r["E_f2_over_lambda"][0] for r in rows]
    bounded = bool(src) and all(src["ok"])
    res.add("error_bounded", bounded,
            "E|f|^2/lam: " + ", ".join(_fmt(x, 3) for x in raw)
            + (f"; per-level source / (eps^4 ln^2 M / lam^2): "
               + ", ".join(_fmt(m, 3) for m, _ in src["normalized_source"])
               + f"; C_fit={src['c_fit']:.3f}" if src else ""))
    zero = cl.build_proxy(node.level, 0.0, node.M, p["seed"], num_modes=8, n_realizations=16)
    zs = cl.sample_error_field(zero, seed=p["seed"])
    res.add("error_exact_zeros", all(s.second_moment[0] == 0 for s in zs) and samples[0].second_moment[0] == 0,
            "eps=0 and level 0 give f = 0")
    return res


# --------------------------------------------------------------------------
# representation identity
# --------------------------------------------------------------------------

def run_lemma91(p: dict) -> SuiteResult:
    res = SuiteResult("lemma91", p.get("preset", "quick"), p)
    kw = dict(n_fields=p["n_fields"], n_paths=p["n_paths"], grid=p["grid"], box_mult=p["box_mult"],
              dt_pde=p["dt_pde"], dt_sde=p["dt_sde"], seed=p["seed"])
    rep = pc.representation_identity_check(p["epsilon2"], p["L"], p["T"], **kw)
    res.metrics["representation"] = rep.to_dict()
    dev = abs(rep.ratio - 1)
    res.add("representation", dev <= p["tolerance"],
            f"LHS {rep.lhs:.3f}+-{rep.lhs_se:.3f}, RHS {rep.rhs:.3f}+-{rep.rhs_se:.3f}, "
            f"ratio {rep.ratio:.4f}+-{rep.ratio_se:.4f} (|ratio-1| <= {p['tolerance']}); "
            f"with weight one on v(T)^2: {rep.ratio_without_half:.4f}")
    mono_l = all(b[1] >= a[1] for a, b in zip(rep.lhs_curve, rep.lhs_curve[1:]))
    mono_r = all(b[1] >= a[1] for a, b in zip(rep.rhs_curve, rep.rhs_curve[1:]))
    res.add("representation_monotone_in_T", mono_l and mono_r, "both ledgers non-decreasing in T")
    zkw = dict(kw, n_paths=min(4000, p["n_paths"]), n_fields=1)
    z = pc.representation_identity_check(0.0, p["L"], p["T"], **zkw)
    res.metrics["zero_drift"] = z.to_dict()
    res.add("representation_zero_drift", z.rhs == p["T"] and abs(z.lhs - p["T"]) <= 3 * z.lhs_se,
            f"RHS {z.rhs:.6f}, LHS {z.lhs:.3f}+-{z.lhs_se:.3f}, T={p['T']}")
    if p.get("refine_grid", True):
        g = pc.grid_refinement_check(p["L"], p["T"], p["epsilon2"], p["grid"], p["box_mult"],
                                     p["dt_pde"], p["seed"])
        hw = 1.96 * rep.ratio_se * rep.rhs
        res.metrics["grid_refinement"] = {**g, "ci_half_width": hw}
        res.add("pde_dt_halving", abs(g["dt_difference"]) < hw,
                f"dt {p['dt_pde']} -> {p['dt_pde'] / 2}: RHS change {g['dt_difference']:.2e} vs CI {hw:.3f}")
        res.add("grid_halving", abs(g["difference"]) < hw,
                f"grid {p['grid']} -> {2 * p['grid']} (dt halved with it): "
                f"RHS change {g['difference']:.2e} vs CI {hw:.3f}")
    return res


RUNNERS = {
    "theorem1": run_theorem1, "theorem2": run_theorem2, "monotonicity": run_monotonicity,
    "lemma51": run_lemma51, "lemma61": run_lemma61, "lemma71": run_lemma71,
    "lemma91": run_lemma91, "rg-appendix": run_rg_appendix,
}


def run(name: str, params: dict) -> SuiteResult:
    if name not in RUNNERS:
        raise KeyError(f"unknown suite {name!r}")
    return RUNNERS[name](params)
