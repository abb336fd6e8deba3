import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gfflab import corrector_lab as cl
from gfflab.spectral_field import J, SpectralBand, eval_psi, sample_field

angles = st.floats(0.0, 2 * math.pi)


@given(st.floats(1.0, 5.0), angles, st.integers(0, 2**32))
def test_incremental_identity_holds_pointwise(lam, ang, seed):
    xi = (math.cos(ang), math.sin(ang))
    inc = cl.build_incremental(2.0, 4.0, lam, xi, seed, num_modes=32)
    x = np.random.default_rng(seed).random((20, 2)) * 100
    assert np.max(np.abs(inc.residual(x))) < 1e-12


def test_corrector_fields_agree_with_band_evaluation():
    inc = cl.build_incremental(1.0, 4.0, 1.3, (0.6, 0.8), 3, num_modes=48)
    x = np.random.default_rng(1).random((30, 2)) * 40
    v = inc.evaluate(x)
    assert np.allclose(eval_psi(inc.phi, x), v["phi"], atol=1e-13)
    assert np.allclose(eval_psi(inc.sigma, x), v["sigma"], atol=1e-13)


def test_incremental_validation():
    with pytest.raises(ValueError):
        cl.build_incremental(1.0, 2.0, 0.5, (1.0, 0.0), 0)
    with pytest.raises(ValueError):
        cl.build_incremental(1.0, 2.0, 1.0, (1.0, 1.0), 0)
    outside = sample_field(SpectralBand.from_scale(8.0), 16, 0)
    with pytest.raises(AssertionError):
        cl.build_incremental(1.0, 2.0, 1.0, (1.0, 0.0), 0, psi_prime=outside)


def test_verify_lemma_prime_rows_pass():
    rows = cl.verify_lemma_prime(1.0, 2.0, 1.0, mc_samples=4000, seed=2)
    names = [r["quantity"] for r in rows]
    assert "E psi'^2" in names and "lam^2 E phi'^2" in names
    assert all(r["pass"] for r in rows), [r for r in rows if not r["pass"]]
    by = {r["quantity"]: r for r in rows}
    assert by["lam^2 E|grad phi'|^2"]["exact"] == pytest.approx(0.5 * math.log(2))
    assert by["lam^2 E phi'^2"]["quadrature"] <= by["lam^2 E phi'^2"]["bound"]


# --------------------------------------------------------------------------
# proxy hierarchy
# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def node():
    return cl.build_proxy(3, math.sqrt(0.5), 4.0, 7, num_modes=32, n_realizations=4000)


def test_zero_amplitude_and_level_zero_vanish():
    z = cl.build_proxy(3, 0.0, 4.0, 0, num_modes=8)
    x = np.random.default_rng(0).random((10, 2)) * 50
    for v in z.evaluate(x, levels=True):
        assert not np.any(v.phi) and not np.any(v.sigma) and not np.any(v.f)
    v0 = cl.build_proxy(0, 0.7, 4.0, 0).evaluate(x)
    assert not np.any(v0.phi) and not np.any(v0.grad_sigma)


def test_recursion_and_direct_error_agree(node):
    x = np.random.default_rng(5).random((4000, 2)) * 1e3
    for v in node.evaluate(x, levels=True):
        assert np.max(np.abs(v.f - cl.direct_error(v, node.epsilon))) < 1e-11


def test_single_level_proxy_is_the_incremental_corrector():
    eps = 0.6
    p = cl.build_proxy(1, eps, 4.0, 11, num_modes=24)
    inc = cl.build_incremental(1.0, 4.0, 1.0, (1.0, 0.0), 0, psi_prime=p.bands[0])
    x = np.random.default_rng(2).random((15, 2)) * 30
    v = p.evaluate(x)
    assert np.allclose(v.phi[0], eps * inc.evaluate(x)["phi"], atol=1e-13)
    assert v.lambda_tilde == pytest.approx(1 + eps * eps * math.log(4) / 2)


def test_along_is_linear_in_direction(node):
    x = np.random.default_rng(3).random((4000, 2)) * 100
    v = node.evaluate(x)
    a = v.along((0.6, 0.8))
    assert np.allclose(a["phi"], 0.6 * v.phi[0] + 0.8 * v.phi[1])


def test_variance_oracle_matches_monte_carlo(node):
    rep = cl.verify_proxy_moments(node, seed=1)
    assert all(rep["oracle_agreement"])
    assert all(rep["centered"])


def test_variance_oracle_zero_amplitude():
    assert not cl.proxy_variance_oracle(0.0, 4.0, 5).any()


def test_child_drops_the_top_level(node):
    c = node.child
    assert c.level == 2 and c.L == 16.0
    assert cl.build_proxy(0, 0.5, 4.0, 0).child is None


def test_budget_guard():
    with pytest.raises(cl.BudgetExceeded):
        cl.build_proxy(9, 0.5, 4.0, 0)
    with pytest.raises(ValueError):
        cl.build_proxy(2, 0.5, 1.0, 0)


def test_error_samples(node):
    samples = cl.sample_error_field(node, xi=(0.0, 1.0), seed=3)
    assert [s.level for s in samples] == [0, 1, 2, 3]
    assert samples[0].second_moment[0] == 0.0
    assert max(s.recursion_mismatch for s in samples) < 1e-11
    for s in samples[1:]:
        assert np.all(np.abs(s.mean) <= 4 * s.mean_se)


@pytest.mark.parametrize("deg", sorted(cl.ROTATIONS))
def test_isotropy(node, deg):
    assert cl.isotropy_transform_check(node, deg, seed=1)["pass"]


def test_isotropy_on_incremental_corrector():
    inc = cl.build_incremental(1.0, 4.0, 1.0, (1.0, 0.0), 5, num_modes=32, n_realizations=4000)
    assert cl.isotropy_transform_check(inc, 180, seed=2)["pass"]
    with pytest.raises(ValueError):
        cl.isotropy_transform_check(inc, 45)


def test_corrector_coefficients_solve_the_band_equations():
    kx, ky = np.array([0.3, -0.1]), np.array([0.2, 0.5])
    xi = np.array([0.6, 0.8])
    c, d = cl.corrector_coefficients(kx, ky, 2.0, xi)
    k = np.stack([kx, ky], -1)
    # per mode: J xi splits along k and J k as lam c k + d J k
    res = 2.0 * c[:, None] * k + d[:, None] * (k @ J.T) - (J @ xi)[None, :]
    assert np.allclose(res, 0, atol=1e-14)
