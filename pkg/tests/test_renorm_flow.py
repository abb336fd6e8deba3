import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from gfflab import renorm_flow as rf
from gfflab.sde_engine import DiffusivityEstimate

e2s = st.floats(0.0, 8.0)
Ms = st.floats(1.1, 64.0)


def decimal_ladder(e2, M, n, digits=60):
    """Independent high-precision iterate."""
    getcontext().prec = digits
    e2, lnM = Decimal(e2), Decimal(M).ln()
    lam = [Decimal(1)]
    for _ in range(n):
        lam.append(lam[-1] * (1 + e2 * lnM / (2 * lam[-1] ** 2)))
    return lam


def test_zero_amplitude_keeps_lambda_at_one():
    st_ = rf.iterate_lambda(0.0, 4.0, 10)
    assert np.all(st_.lam == 1.0)


@given(e2s, Ms, st.integers(0, 60))
def test_ladder_matches_high_precision_iterate(e2, M, n):
    lam = rf.iterate_lambda(e2, M, n).lam
    ref = decimal_ladder(e2, M, n)
    assert np.allclose(lam, [float(v) for v in ref], rtol=1e-13, atol=0)


@given(e2s, Ms, st.integers(0, 60))
def test_sandwich_and_step_identity(e2, M, n):
    state = rf.iterate_lambda(e2, M, n)
    certs = rf.certify_bounds(state)
    assert len(certs) == n + 1
    assert all(c.holds or abs(c.lower_gap) < 1e-12 for c in certs)
    assert np.max(np.abs(state.identity_residual)) <= 8 * np.finfo(float).eps


@given(st.floats(0.0, 4.0), st.floats(0.0, 4.0), Ms, st.integers(1, 30))
def test_lambda_is_monotone_in_amplitude(a, b, M, n):
    lo, hi = sorted((a, b))
    assert np.all(rf.iterate_lambda(lo, M, n).lam <= rf.iterate_lambda(hi, M, n).lam)


def test_sandwich_reference_case():
    # eps^2 = 1, M = 2, L = 2^20, against the high-precision ladder
    state = rf.iterate_lambda(1.0, 2.0, 20)
    c = rf.certify_bounds(state)[-1]
    lam = decimal_ladder(1.0, 2.0, 20)[-1]
    ln2 = math.log(2)
    assert c.lower_gap == pytest.approx(float(lam * lam) - (1 + 20 * ln2), abs=1e-12)
    assert c.upper_sum == pytest.approx(sum(ln2 * ln2 / (1 + m * ln2) for m in range(20)))
    assert c.upper_integral == pytest.approx(ln2 * (ln2 + math.log(1 + 20 * ln2)))


def test_certify_raises_on_corrupted_ladder():
    good = rf.iterate_lambda(1.0, 4.0, 5)
    bad_lam = good.lam.copy()
    bad_lam[3] *= 1.5
    bad = rf.RenormState(1.0, 4.0, 5, good.L, bad_lam, good.identity_residual)
    with pytest.raises(rf.SandwichViolation):
        rf.certify_bounds(bad)


@pytest.mark.parametrize("args", [(0.5, 1.0, 3), (0.5, 4.0, -1), (-0.1, 4.0, 3)])
def test_iterate_validation(args):
    with pytest.raises(ValueError):
        rf.iterate_lambda(*args)


def test_rows_and_heuristic_difference():
    state = rf.iterate_lambda(0.5, 4.0, 6)
    rows = state.rows()
    assert [r["n"] for r in rows] == list(range(7))
    assert max(abs(r["variance_step_difference"]) for r in rows) < 1e-10
    assert rows[3]["gff_law"] == pytest.approx(1 + 0.5 * 3 * math.log(4))


# --------------------------------------------------------------------------
# RG ODE
# --------------------------------------------------------------------------

@given(st.floats(0.6, 1.99))
def test_rg_ode_matches_closed_form(z0):
    tr = rf.rg_ode_integrate(z0, 3 * math.log(10), 1e-3)
    assert np.max(np.abs(tr.z - tr.closed_form_z())) < 1e-8
    assert np.max(np.abs(tr.log_msd - tr.closed_form_log_msd())) < 1e-8


def test_rg_ode_against_scipy():
    z0, span = 1.2, 5.0
    s0 = 1 / (2 - z0)
    sol = integrate.solve_ivp(lambda s, y: [(2 - y[0]) ** 2, 2 / y[0]], (s0, s0 + span),
                              [z0, float(rf.rg_msd_closed_form(s0))], rtol=1e-12, atol=1e-12,
                              dense_output=True)
    tr = rf.rg_ode_integrate(z0, span, 1e-3)
    ref = sol.sol(tr.log_time)
    assert np.max(np.abs(tr.z - ref[0])) < 1e-9
    assert np.max(np.abs(tr.log_msd - ref[1])) < 1e-9


def test_rg_fixed_point_is_stationary():
    tr = rf.rg_ode_integrate(2.0, 2.0)
    assert np.all(tr.z == 2.0)
    assert np.allclose(tr.log_msd, tr.log_time)


def test_msd_law_is_t_sqrt_log_t_for_large_times():
    tr = rf.rg_ode_integrate(2 - 1 / 200, 3 * math.log(10))
    d = tr.log_msd - (tr.log_time + 0.5 * np.log(tr.log_time))
    assert d.max() - d.min() < 2e-4


@pytest.mark.parametrize("z0", [2.01, 3.0])
def test_rg_basin_exit(z0):
    with pytest.raises(rf.BasinExit):
        rf.rg_ode_integrate(z0, 1.0)


def test_rg_rejects_nonpositive_start():
    with pytest.raises(ValueError):
        rf.rg_ode_integrate(0.0, 1.0)
    with pytest.raises(ValueError):
        rf.rg_ode_integrate(1.0, -1.0)


# --------------------------------------------------------------------------
# recursion against simulation
# --------------------------------------------------------------------------

def test_compare_recursion_vs_simulation():
    state = rf.iterate_lambda(0.5, 4.0, 3)
    est = DiffusivityEstimate(16.0, 1.5, 0.05, (100.0, 300.0), 0.5)
    (row,) = rf.compare_recursion_vs_simulation(state, [est])
    assert row["lambda_tilde"] == state.lam[2]
    assert row["sqrt_law"] == pytest.approx(math.sqrt(1 + 0.5 * math.log(16)))
    with pytest.raises(ValueError, match="ladder"):
        rf.compare_recursion_vs_simulation(state, [DiffusivityEstimate(8.0, 1.4, 0.1, (1, 2), 0.5)])
    with pytest.raises(ValueError, match="epsilon2"):
        rf.compare_recursion_vs_simulation(state, [DiffusivityEstimate(16.0, 1.4, 0.1, (1, 2), 1.0)])
