import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, special

from gfflab import suites
from gfflab.spectral_field import (INTEGRANDS, FieldRealization, Scheme, SpectralBand,
                                   SpectralQuadrature, default_num_modes, eval_all, eval_b,
                                   eval_grad_psi, eval_hessian_psi, eval_psi, sample_field,
                                   spectral_integral)

GAUSS = SpectralQuadrature(radial_nodes=64, angular_nodes=64, rule="gauss")
scales = st.floats(1.0, 1e3)
ratios = st.floats(1.01, 64.0)


def closed_form(name, a, b, lam=1.0):
    """Annulus integrals over a <= |k| <= b, averaged over angle by hand."""
    return {
        "variance_psi": math.log(b / a),
        "variance_b": (b * b - a * a) / 2,
        "variance_grad_psi": (b * b - a * a) / 2,
        "corrector_variance": (a**-2 - b**-2) / (4 * lam * lam),
        "corrector_grad_variance": math.log(b / a) / (2 * lam * lam),
        "corrector_hessian_variance": (b * b - a * a) / (4 * lam * lam),
        "flux_corrector_variance": (a**-2 - b**-2) / 4,
        "flux_corrector_grad_variance": math.log(b / a) / 2,
        "mixed_flux": math.log(b / a) / (2 * lam),
    }[name]


# --------------------------------------------------------------------------
# bands
# --------------------------------------------------------------------------

def test_from_scale_bands():
    assert SpectralBand.from_scale(8.0) == SpectralBand(0.125, 1.0)
    assert SpectralBand.from_scale(2.0, 8.0) == SpectralBand(0.125, 0.5)
    assert SpectralBand.from_scale(1.0).empty


@pytest.mark.parametrize("lo, hi", [(0.0, 1.0), (0.5, 0.25), (0.5, 2.0), (math.nan, 1.0)])
def test_invalid_band(lo, hi):
    with pytest.raises(ValueError):
        SpectralBand(lo, hi)


def test_scale_below_one_rejected():
    with pytest.raises(ValueError):
        SpectralBand.from_scale(0.5)


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------

def test_sampling_is_deterministic_and_seed_sensitive():
    band = SpectralBand.from_scale(16.0)
    a, b = sample_field(band, 50, 3), sample_field(band, 50, 3)
    c = sample_field(band, 50, 4)
    assert np.array_equal(a.amp, b.amp) and np.array_equal(a.kx, b.kx)
    assert not np.array_equal(a.kx, c.kx)


@given(scales.filter(lambda L: L > 1.01), st.integers(1, 400),
       st.sampled_from(list(Scheme)), st.integers(0, 2**63))
def test_modes_lie_in_band(L, m, scheme, seed):
    band = SpectralBand.from_scale(L)
    f = sample_field(band, m, seed, scheme=scheme)
    k = f.wavenumbers
    assert f.num_modes == m
    assert np.all(k >= band.k_min * (1 - 1e-12)) and np.all(k <= band.k_max * (1 + 1e-12))
    assert np.all(f.amp >= 0) and np.all((f.phase >= 0) & (f.phase < 2 * math.pi))


@given(scales.filter(lambda L: L > 1.01), st.integers(2, 300), st.integers(0, 2**63))
def test_stratified_scheme_has_one_mode_per_log_stratum(L, m, seed):
    band = SpectralBand.from_scale(L)
    f = sample_field(band, m, seed)
    u = (np.log(f.wavenumbers) - math.log(band.k_min)) / band.log_width * m
    strata = np.clip(np.floor(u), 0, m - 1).astype(int)
    assert np.array_equal(np.sort(strata), np.arange(m))


@given(st.floats(1.5, 200.0), st.integers(0, 2**63))
def test_expected_realized_variance_is_log_L(L, seed):
    # E a^2 / 2 per mode times the mode count is ln L exactly; the realized
    # mean over 4000 draws sits within 5 SE of it
    band = SpectralBand.from_scale(L)
    f = sample_field(band, 32, seed, n_realizations=4000)
    v = np.sum(f.amp**2, -1) / 2
    se = v.std(ddof=1) / math.sqrt(v.size)
    assert abs(v.mean() - math.log(L)) <= 5 * se


def test_batched_sampling_shape():
    f = sample_field(SpectralBand.from_scale(4.0), 10, 0, n_realizations=7)
    assert f.kx.shape == (7, 10)
    x = np.zeros((7, 2))
    assert eval_psi(f, x).shape == (7,)
    assert eval_hessian_psi(f, x).shape == (7, 2, 2)


def test_mode_arrays_are_read_only():
    f = sample_field(SpectralBand.from_scale(4.0), 10, 0)
    with pytest.raises(ValueError):
        f.amp[0] = 1.0


def test_num_modes_rejects_zero():
    with pytest.raises(ValueError):
        sample_field(SpectralBand.from_scale(4.0), 0, 0)


def test_default_num_modes_scales_with_octaves():
    assert default_num_modes(SpectralBand.from_scale(8.0), 10) == 30
    assert default_num_modes(SpectralBand.from_scale(1.0), 10) == 1


def test_dump_and_load_modes_roundtrip(tmp_path):
    band = SpectralBand.from_scale(32.0)
    f = sample_field(band, 17, 11)
    p = tmp_path / "modes.bin"
    f.dump_modes(p)
    g = FieldRealization.load_modes(p, band, seed=11)
    x = np.random.default_rng(0).random((20, 2)) * 50
    assert np.array_equal(eval_psi(f, x), eval_psi(g, x))
    assert p.stat().st_size == 17 * 4 * 8


def test_manifest_fields(tmp_path):
    f = sample_field(SpectralBand.from_scale(8.0), 12, 2)
    m = f.manifest()
    assert m["num_modes"] == 12 and m["seed"] == 2 and m["scheme"] == Scheme.STRATIFIED.value
    f.save_manifest(tmp_path / "m.json")
    assert (tmp_path / "m.json").read_text().startswith("{")


def test_superposition_adds_values():
    a = sample_field(SpectralBand.from_scale(2.0, 8.0), 9, 1)
    b = sample_field(SpectralBand.from_scale(8.0), 9, 2)
    x = np.random.default_rng(1).random((10, 2)) * 30
    s = a + b
    assert s.band == SpectralBand(1 / 8.0, 1.0)
    assert np.allclose(eval_psi(s, x), eval_psi(a, x) + eval_psi(b, x), atol=1e-13)


def test_empty_field_evaluates_to_zero():
    f = FieldRealization.empty(SpectralBand.from_scale(1.0))
    x = np.ones((3, 2))
    assert not eval_psi(f, x).any() and not eval_b(f, x).any()
    v, g, h = eval_all(f, x)
    assert v.shape == (3,) and g.shape == (3, 2) and h.shape == (3, 2, 2)


# --------------------------------------------------------------------------
# derivatives
# --------------------------------------------------------------------------

@given(st.integers(0, 2**63))
def test_drift_is_divergence_free_and_matches_rotated_gradient(seed):
    f = sample_field(SpectralBand.from_scale(8.0), 40, seed)
    x = np.random.default_rng(seed % 2**32).random((25, 2)) * 100
    H = eval_hessian_psi(f, x)
    # div b = -d1 d2 psi + d2 d1 psi
    assert np.array_equal(H[:, 0, 1], H[:, 1, 0])
    g = eval_grad_psi(f, x)
    b = eval_b(f, x)
    assert np.array_equal(b, np.stack([-g[:, 1], g[:, 0]], -1))


def test_eval_all_matches_separate_evaluators():
    f = sample_field(SpectralBand.from_scale(8.0), 64, 5)
    x = np.random.default_rng(2).random((30, 2)) * 40
    v, g, h = eval_all(f, x)
    assert np.allclose(v, eval_psi(f, x), atol=1e-13, rtol=0)
    assert np.allclose(g, eval_grad_psi(f, x), atol=1e-13, rtol=0)
    assert np.allclose(h, eval_hessian_psi(f, x), atol=1e-13, rtol=0)


def test_finite_difference_mode_sums():
    r = suites.fd_mode_sum_check(100, seed=0)
    assert r["pass"], r


def test_finite_difference_order_is_two():
    f = sample_field(SpectralBand.from_scale(8.0), 64, 9)
    x = np.random.default_rng(3).random((100, 2)) * 60
    g = eval_grad_psi(f, x)
    errs = []
    for h in (1e-2, 5e-3):
        e = np.array([h, 0.0])
        fd = (eval_psi(f, x + e) - eval_psi(f, x - e)) / (2 * h)
        errs.append(np.max(np.abs(fd - g[:, 0])))
    assert 1.9 <= math.log2(errs[0] / errs[1]) <= 2.1


# --------------------------------------------------------------------------
# quadrature oracle
# --------------------------------------------------------------------------

@given(scales, ratios, st.sampled_from([n for n in INTEGRANDS if n != "covariance_psi"]),
       st.floats(1.0, 10.0))
def test_quadrature_matches_closed_forms(L, M, name, lam):
    band = SpectralBand.from_scale(L, M * L)
    q = spectral_integral(band, name, GAUSS, xi=(0.6, 0.8), lambda_tilde=lam)
    exact = closed_form(name, band.k_min, band.k_max, lam)
    assert q == pytest.approx(exact, rel=1e-10, abs=1e-14)


@pytest.mark.parametrize("L", [2.0, 8.0, 32.0, 1e4])
def test_variance_is_log_L_for_both_rules(L):
    band = SpectralBand.from_scale(L)
    for quad in (SpectralQuadrature(), GAUSS):
        assert abs(spectral_integral(band, "variance_psi", quad) - math.log(L)) <= 1e-10


@pytest.mark.parametrize("r", [0.5, 3.0, 10.0])
def test_covariance_matches_bessel_integral(r):
    band = SpectralBand.from_scale(8.0)
    exact, _ = integrate.quad(lambda k: special.j0(k * r) / k, band.k_min, band.k_max,
                              epsabs=1e-13, limit=200)
    q = spectral_integral(band, "covariance_psi", SpectralQuadrature(256, 256, "gauss"), x=(r, 0.0))
    assert q == pytest.approx(exact, abs=1e-9)


def test_covariance_monte_carlo_matches_quadrature():
    band = SpectralBand.from_scale(8.0)
    x = np.array([3.0, 1.0])
    q = spectral_integral(band, "covariance_psi", x=x)
    m, se = suites.field_moment(band, 96, 4000, 1,
                                lambda f, p: eval_psi(f, p) * eval_psi(f, p + x))
    assert abs(m - q) <= 3 * se


def test_empty_band_integrates_to_zero():
    assert spectral_integral(SpectralBand(1.0, 1.0), "variance_psi") == 0.0


def test_unknown_integrand_and_bad_xi():
    band = SpectralBand.from_scale(4.0)
    with pytest.raises(ValueError):
        spectral_integral(band, "nope", xi=(1.0, 0.0))
    with pytest.raises(ValueError):
        spectral_integral(band, "corrector_variance", xi=(1.0, 1.0))
    with pytest.raises(ValueError):
        SpectralQuadrature(rule="simpson")
