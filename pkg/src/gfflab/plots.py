"""Self-contained SVG figures from run manifests."""

from __future__ import annotations

import logging
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .harness import RunManifest, read_csv  # noqa: E402

log = logging.getLogger(__name__)

# fixed salt and no timestamp so identical data gives identical bytes
_RC = {"svg.hashsalt": "gfflab", "svg.fonttype": "path"}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _table(run_dir: Path, man: RunManifest, name: str):
    fname = f"{name}.csv"
    if fname not in man.outputs or not (run_dir / fname).exists():
        log.warning("manifest %s has no %s table; skipping", run_dir, name)
        return None
    return read_csv(run_dir / fname)


def msd_ratio_plot(rows, epsilon2: float, band=(0.7, 1.4), out: Path = Path("msd_ratio.svg")) -> Path:
    t = [r["t"] for r in rows]
    u = [math.log(x) for x in t]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.axhspan(*band, color="0.9", label="acceptance band")
        ax.errorbar(u, [r["ratio"] for r in rows], yerr=[2 * r["ratio_se"] for r in rows],
                    marker="o", label=r"$E(\xi\cdot X_t)^2 / (2t\sqrt{1+\varepsilon^2\ln t/2})$")
        ax.errorbar(u, [r["misnormalized"] for r in rows],
                    yerr=[2 * r["misnormalized_se"] for r in rows], marker="s", ls="--",
                    label=r"$\ln t$ in place of $\sqrt{\ln t}$")
        ax.set_xlabel(r"$\ln t$")
        ax.set_ylabel("ratio")
        ax.set_title(rf"$\varepsilon^2={epsilon2:g}$")
        ax.legend(fontsize=8)
        return _save(fig, out)


def lambda_plot(rows, epsilon2: float, M: float, ladder=None,
                out: Path = Path("lambda_vs_lnL.svg")) -> Path:
    e, a = epsilon2, epsilon2 * math.log(M)
    Ls = [r["L"] for r in rows]
    x = [1 + e * math.log(L) for L in Ls]
    top = max(Ls + [r["L"] for r in ladder or []])
    grid = [1 + e * math.log(1 + (top - 1) * i / 200) for i in range(201)]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.fill_between(grid, grid, [g + a * (a + math.log(g)) for g in grid], color="0.9",
                        label="recursion envelope")
        if ladder:
            ax.plot([1 + e * math.log(r["L"]) for r in ladder],
                    [r["lambda_tilde_sq"] for r in ladder], "k.", label=r"$\tilde\lambda^2$ ladder")
        y = [r["lambda_hat"] ** 2 for r in rows]
        yerr = [2 * r["lambda_hat"] * r["half_width"] for r in rows]
        ax.errorbar(x, y, yerr=yerr, fmt="o", label=r"$\hat\lambda^2$")
        lo, hi = min(grid), max(grid)
        ax.plot([lo, hi], [lo, hi], "k:", lw=0.8)
        ax.set_xlabel(r"$1+\varepsilon^2\ln L$")
        ax.set_ylabel(r"$\lambda^2$")
        ax.legend(fontsize=8)
        return _save(fig, out)


def lemma51_plot(rows, out: Path = Path("lemma51_quadrature_vs_mc.svg")) -> Path:
    rows = [r for r in rows if r.get("quadrature")]
    labels = [f"{r['quantity']}\nL={r['L']:g}, M={r['M']:g}" for r in rows]
    idx = list(range(len(rows)))
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(max(6, 0.6 * len(rows)), 4.5))
        w = 0.4
        ax.bar([i - w / 2 for i in idx], [1.0] * len(rows), w, label="quadrature")
        ax.bar([i + w / 2 for i in idx], [r["mc_mean"] / r["quadrature"] for r in rows], w,
               yerr=[2 * r["mc_se"] / abs(r["quadrature"]) for r in rows], label="Monte Carlo")
        ax.set_xticks(idx)
        ax.set_xticklabels(labels, rotation=75, fontsize=6)
        ax.set_ylabel("value / quadrature")
        ax.legend(fontsize=8)
        fig.tight_layout()
        return _save(fig, out)


def emit_plots(manifest_path: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Figures available for the manifest's tables; missing tables are skipped."""
    manifest_path = Path(manifest_path)
    run_dir = manifest_path.parent
    out_dir = Path(out_dir) if out_dir else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    man = RunManifest.load(manifest_path)
    params = man.config.get("params", {})
    made = []
    if man.suite == "theorem1":
        rows = _table(run_dir, man, "ratio")
        if rows:
            made.append(msd_ratio_plot(rows, params["epsilon2"],
                                       (params.get("band_lo", 0.7), params.get("band_hi", 1.4)),
                                       out_dir / "msd_ratio.svg"))
    elif man.suite == "theorem2":
        rows = _table(run_dir, man, "lambda")
        if rows:
            ladder = _table(run_dir, man, "ladder")
            made.append(lambda_plot(rows, params["epsilon2"], params.get("M", 4.0), ladder,
                                    out_dir / "lambda_vs_lnL.svg"))
    elif man.suite == "lemma51":
        rows = _table(run_dir, man, "lemma51")
        if rows:
            made.append(lemma51_plot(rows, out_dir / "lemma51_quadrature_vs_mc.svg"))
    else:
        log.warning("no figure defined for suite %s", man.suite)
    return made
