import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gfflab import sde_engine as sde
from gfflab.spectral_field import SpectralBand, eval_b, sample_field


def naive_paths(f, eps, dt, n_steps, starts, seed, field_index, paths, refinement=1):
    """Plain Euler-Maruyama with the drift re-evaluated from scratch each step."""
    out = []
    for p, x0 in zip(paths, starts):
        x = np.array(x0, dtype=float)
        step = 0
        block = 0
        while step < n_steps:
            raw = sde._path_noise(seed, field_index, int(p), block)
            for j in range(sde.DRAW_BLOCK // refinement):
                if step == n_steps:
                    break
                z = raw[j * refinement:(j + 1) * refinement].sum(0) / math.sqrt(refinement)
                x = x + eps * eval_b(f, x) * dt + math.sqrt(2 * dt) * z
                step += 1
            block += 1
        out.append(x)
    return np.array(out)


def small_config(**kw):
    base = dict(epsilon2=0.5, L=4.0, dt=0.05, t_max=5.0, n_paths=8, n_fields=2, seed=1,
                record_times=(1.0, 2.5, 5.0), modes_per_octave=16)
    base.update(kw)
    return sde.SimConfig(**base)


def test_kernel_matches_naive_integration():
    f = sample_field(SpectralBand.from_scale(8.0), 40, 3)
    starts = np.random.default_rng(0).random((5, 2)) * 50
    n = 5000   # crosses a draw-block boundary
    pos, alive = sde.integrate_paths(f, 0.8, 0.02, n, starts, 9, 2, np.arange(5), np.array([n]))
    ref = naive_paths(f, 0.8, 0.02, n, starts, 9, 2, np.arange(5))
    assert alive.all()
    assert np.max(np.abs(pos[:, 0] - ref)) < 1e-9


def test_refinement_reproduces_the_fine_brownian_path():
    f = sample_field(SpectralBand.from_scale(4.0), 20, 4)
    starts = np.zeros((3, 2))
    coarse, _ = sde.integrate_paths(f, 0.0, 0.05, 400, starts, 2, 0, np.arange(3), np.array([400]),
                                    refinement=2)
    fine, _ = sde.integrate_paths(f, 0.0, 0.025, 800, starts, 2, 0, np.arange(3), np.array([800]))
    assert np.allclose(coarse, fine, atol=1e-12, rtol=0)


def test_zero_drift_gives_scaled_noise_sum():
    cfg = small_config(epsilon2=0.0, n_fields=1, n_paths=3)
    r = sde.simulate_ensemble(cfg)
    raw = sde._path_noise(cfg.seed, 0, 1, 0)
    expect = math.sqrt(2 * cfg.dt) * raw[:100].sum(0)
    assert np.allclose(r.displacements[0, 1, -1], expect, atol=1e-12)


def test_simulation_is_deterministic_and_path_prefix_stable():
    a = sde.simulate_ensemble(small_config())
    b = sde.simulate_ensemble(small_config())
    c = sde.simulate_ensemble(small_config(n_paths=12))
    assert np.array_equal(a.displacements, b.displacements)
    assert np.array_equal(a.displacements, c.displacements[:, :8])


@given(st.integers(0, 2**32), st.floats(0.0, 2.0))
def test_displacement_is_finite_and_starts_at_zero(seed, e2):
    cfg = small_config(seed=seed, epsilon2=e2, record_times=(0.0, 1.0), t_max=1.0, n_paths=4,
                       n_fields=1)
    r = sde.simulate_ensemble(cfg)
    assert np.all(r.displacements[..., 0, :] == 0)
    assert np.all(np.isfinite(r.displacements))


def test_free_diffusion_msd_is_2t():
    cfg = small_config(epsilon2=0.0, n_paths=2048, n_fields=4, t_max=4.0, record_times=(1.0, 2.0, 4.0))
    r = sde.simulate_ensemble(cfg)
    # paths are independent without drift; (e1.dX)^2 ~ 2t chi^2_1 has SD 2t sqrt(2)
    n = cfg.n_fields * cfg.n_paths
    m, _ = r.msd_directional
    assert np.all(np.abs(m - 2 * r.times) <= 3 * 2 * r.times * math.sqrt(2 / n))
    mt, _ = r.msd_total
    assert np.all(np.abs(mt - 4 * r.times) <= 3 * 4 * r.times / math.sqrt(n))


def test_free_diffusion_lambda_is_one():
    cfg = small_config(epsilon2=0.0, L=1.0, n_paths=2048, n_fields=4, t_max=8.0,
                       record_times=tuple(np.arange(1.0, 9.0)))
    est = sde.estimate_lambda(sde.simulate_ensemble(cfg), (1.0, 8.0))
    assert abs(est.lambda_hat - 1.0) <= est.half_width
    assert est.half_width > 0


def test_direction_difference_is_the_difference_of_slopes():
    cfg = small_config(epsilon2=0.0, L=1.0, n_paths=256, n_fields=6, t_max=8.0,
                       record_times=tuple(np.arange(1.0, 9.0)))
    r = sde.simulate_ensemble(cfg)
    a = sde.estimate_lambda(r, (1.0, 8.0), direction=(1.0, 0.0))
    b = sde.estimate_lambda(r, (1.0, 8.0), direction=(0.0, 1.0))
    d, hw = sde.direction_difference(r, (1.0, 8.0))
    assert d == pytest.approx(a.lambda_hat - b.lambda_hat, abs=1e-12)
    assert hw > 0
    back, hw_back = sde.direction_difference(r, (1.0, 8.0), (0.0, 1.0), (1.0, 0.0))
    assert back == pytest.approx(-d, abs=1e-12) and hw_back == pytest.approx(hw)
    # a direction against itself has no spread at all
    assert sde.direction_difference(r, (1.0, 8.0), (1.0, 0.0), (1.0, 0.0)) == (0.0, 0.0)


def test_estimate_lambda_window_guards():
    r = sde.simulate_ensemble(small_config(L=16.0))
    with pytest.raises(ValueError, match="diffusive regime"):
        sde.estimate_lambda(r, (1.0, 5.0))
    with pytest.raises(ValueError, match="fewer than two"):
        sde.estimate_lambda(r, (4.0, 4.5))


def test_homogenization_window():
    lo, hi = sde.homogenization_window(16.0, 0.5, 1.0, 3.0)
    lam = math.sqrt(1 + 0.5 * math.log(16.0))
    assert lo == pytest.approx(256 / lam) and hi == pytest.approx(768 / lam)


@pytest.mark.parametrize("kw", [dict(dt=0.2), dict(dt=0.0), dict(L=0.5), dict(epsilon2=-1.0),
                                dict(noise_refinement=3), dict(record_times=(2.0, 1.0)),
                                dict(record_times=(1.0, 9.0)), dict(n_paths=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        small_config(**kw)


def test_config_properties():
    cfg = small_config(L=16.0, modes_per_octave=10)
    assert cfg.num_modes == 40
    assert cfg.n_steps == 100
    assert cfg.spread == pytest.approx(8 * math.pi * 16)
    assert cfg.to_dict()["record_times"] == [1.0, 2.5, 5.0]


def test_table_columns():
    rows = sde.simulate_ensemble(small_config()).table()
    assert set(rows[0]) == {"t", "msd_dir_mean", "msd_dir_se", "msd_total_mean", "msd_total_se",
                            "ratio", "ratio_se"}
    assert len(rows) == 3


def test_cluster_standard_error_uses_fields():
    r = sde.simulate_ensemble(small_config(n_fields=3))
    q = r.squared((1.0, 0.0))
    m, se = r.mean_se(q)
    fm = np.array([[q[f, :, t].mean() for t in range(q.shape[2])] for f in range(3)])
    assert np.allclose(m, fm.mean(0), rtol=1e-13)
    assert np.allclose(se, fm.std(0, ddof=1) / math.sqrt(3), rtol=1e-12)


def test_superdiffusion_rejects_small_cutoff():
    with pytest.raises(ValueError, match="too small"):
        sde.superdiffusion_experiment(0.5, [10.0, 100.0], 1, 1, L=10.0)


def test_superdiffusion_normalizations():
    cfg = small_config(L=64.0, t_max=4.0, record_times=(1.0, 2.0, 4.0))
    r = sde.simulate_ensemble(cfg)
    out = sde.superdiffusion_experiment(0.5, [1.0, 2.0, 4.0], 2, 8, L=64.0, result=r)
    t = np.array(out["times"])
    m = np.array(out["msd"])
    assert np.allclose(out["ratio"], m / (2 * t * np.sqrt(1 + 0.25 * np.log(t))))
    assert np.allclose(out["misnormalized_ratio"], m / (2 * t * (1 + 0.25 * np.log(t))))
