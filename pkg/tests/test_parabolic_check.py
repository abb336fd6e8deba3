import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from gfflab import parabolic_check as pc
from gfflab.spectral_field import FieldRealization, SpectralBand


def one_mode_slice(n=(3, 2), amp=0.7, theta=0.4, L=4.0, grid=128, box_mult=1.0):
    box = box_mult * 2 * math.pi * L
    dk = 2 * math.pi / box
    f = FieldRealization(SpectralBand.from_scale(L), np.array([n[0] * dk]), np.array([n[1] * dk]),
                         np.array([amp]), np.array([theta]))
    return pc.periodic_slice(L, box_mult, grid, psi=f)


def test_lattice_modes_half_plane_and_band():
    L, box = 4.0, 4 * 2 * math.pi * 4.0
    n = pc.lattice_modes(L, box)
    k = 2 * math.pi / box * np.hypot(n[:, 0], n[:, 1])
    assert np.all((k >= 1 / L - 1e-12) & (k <= 1 + 1e-12))
    keys = {tuple(v) for v in n}
    assert not any((-a, -b) in keys for a, b in keys)


def test_lattice_variance_approximates_log_L():
    L = 4.0
    box = 4 * 2 * math.pi * L
    n = pc.lattice_modes(L, box)
    dk = 2 * math.pi / box
    var = np.sum(2 * dk * dk / (2 * math.pi * dk * dk * (n**2).sum(1)))
    assert var == pytest.approx(math.log(L), rel=0.05)


def test_grid_values_match_mode_sum():
    sl = one_mode_slice()
    h = sl.spacing
    x = np.arange(sl.grid) * h
    X, Y = np.meshgrid(x, x, indexing="ij")
    f = sl.field
    exact = 0.7 * np.cos(f.kx[0] * X + f.ky[0] * Y + 0.4)
    assert np.max(np.abs(sl.psi - exact)) < 1e-12


@given(st.integers(0, 2**32))
def test_periodic_drift_is_divergence_free(seed):
    sl = pc.periodic_slice(2.0, 2.0, 128, seed)
    assert np.max(np.abs(sl.divergence())) < 1e-12


def test_slice_validation():
    with pytest.raises(ValueError, match="resolve"):
        pc.periodic_slice(4.0, 4.0, 128)
    f = FieldRealization(SpectralBand.from_scale(4.0), np.array([0.3]), np.array([0.0]),
                         np.array([1.0]), np.array([0.0]))
    with pytest.raises(ValueError, match="lattice"):
        pc.periodic_slice(4.0, 1.0, 128, psi=f)


def test_single_mode_solution_matches_closed_form():
    sl = one_mode_slice()
    k = np.array([sl.field.kx[0], sl.field.ky[0]])
    eps, xi, T, dt = 0.9, np.array([1.0, 0.0]), 6.0, 0.01
    sol = pc.solve_parabolic(sl, eps, xi, dt, T)
    ref = pc.single_mode_response(0.7, k, xi, eps, sol.times)
    assert np.max(np.abs(sol.mean_v2 - ref["mean_v2"])) < 1e-9
    assert np.max(np.abs(sol.grad_energy - ref["grad_energy"])) < 1e-6
    assert np.max(np.abs(sol.mean_v)) < 1e-14


def test_single_mode_closed_form_against_quadrature():
    k, xi, eps, amp = np.array([0.4, 0.3]), np.array([0.0, 1.0]), 0.8, 1.1
    t = 3.0
    r = pc.single_mode_response(amp, k, xi, eps, t)
    g = lambda s: pc.single_mode_response(amp, k, xi, eps, s)["g"]
    ig2, _ = integrate.quad(lambda s: g(s) ** 2, 0, t, epsabs=1e-14)
    # mean |grad v|^2 = |k|^2 g^2 / 2 for v = g sin(phase)
    assert r["grad_energy"] == pytest.approx((k @ k) * ig2 / 2, rel=1e-10)
    # g solves g' = -|k|^2 g + eps a (J k . xi)
    h = 1e-5
    dg = (g(t + h) - g(t - h)) / (2 * h)
    jk_xi = -k[1] * xi[0] + k[0] * xi[1]
    assert dg == pytest.approx(-(k @ k) * g(t) + eps * amp * jk_xi, abs=1e-8)


def test_zero_amplitude_gives_rhs_equal_to_time():
    sl = pc.periodic_slice(2.0, 2.0, 128, 0)
    sol = pc.solve_parabolic(sl, 0.0, (1.0, 0.0), 0.1, 2.0)
    assert np.array_equal(sol.rhs(), sol.times)
    assert not sol.v.any()


def test_rhs_weights():
    sl = pc.periodic_slice(2.0, 2.0, 128, 1)
    sol = pc.solve_parabolic(sl, 1.0, (0.0, 1.0), 0.05, 1.0)
    assert np.allclose(sol.rhs_without_half() - sol.rhs(), 0.5 * sol.mean_v2)


def test_stability_guards():
    sl = pc.periodic_slice(2.0, 2.0, 128, 0)
    with pytest.raises(pc.StabilityError):
        pc.solve_parabolic(sl, 20.0, (1.0, 0.0), 0.5, 1.0)
    with pytest.raises(ValueError):
        pc.solve_parabolic(sl, 1.0, (1.0, 0.0), 0.3, 1.0)
    with pytest.raises(ValueError):
        pc.solve_parabolic(sl, 1.0, (1.0, 1.0), 0.1, 1.0)


def test_representation_identity_small_case():
    rep = pc.representation_identity_check(2.0, 2.0, 4.0, n_fields=1, n_paths=8000, grid=256,
                                           box_mult=4.0, dt_pde=0.05, dt_sde=0.01, seed=3)
    assert abs(rep.lhs - rep.rhs) <= 3 * rep.lhs_se + 0.01 * rep.rhs
    assert rep.rhs > 4.0
    assert [t for t, _ in rep.lhs_curve] == [1.0, 2.0, 3.0, 4.0]
    d = rep.to_dict()
    assert d["ratio"] == rep.ratio and d["meta"]["n_paths"] == 8000
