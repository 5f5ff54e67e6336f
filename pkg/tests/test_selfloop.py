import numpy as np
import pytest

from csbmlab import InvalidConfig
from csbmlab.selfloop import (
    DeterministicTraces,
    PencilMonteCarlo,
    selfloop_theory,
    shifted_mc_traces,
    u_closed_form_tau08_gamma5,
)
from csbmlab.theory import TheoryParams, theory_risks


# ---------------------------------------------------------------------
# trace backends agree with each other and with closed forms
# ---------------------------------------------------------------------

def test_closed_form_u_matches_monte_carlo_at_tau08_gamma5():
    n_cal = 4000
    pmc = PencilMonteCarlo(0.8, 5.0, n_cal=n_cal, n_replicates=16, seed=11)
    for a, b, c, d in [(1.0, 0.0, 1.0, 0.5), (0.3, 0.7, 2.0, 1.0), (1.0, 1.0, 1.0, 3.0)]:
        mc = pmc.u(a, b, c, d)
        cf = u_closed_form_tau08_gamma5(a, b, c, d, n_cal)
        assert mc == pytest.approx(cf, rel=0.01)


def test_closed_form_u_continuous_at_equal_weights():
    left = u_closed_form_tau08_gamma5(1.0, 2.0, 1.0, 1.0 - 1e-12, 1000)
    mid = u_closed_form_tau08_gamma5(1.0, 2.0, 1.0, 1.0, 1000)
    assert left == pytest.approx(mid, rel=1e-5)
    # Tr[Y0 (Y0+Y1)^-1] = tau*F and Tr[Y1 (Y0+Y1)^-1] = (1-tau)*F at c = d = 1
    assert mid == pytest.approx((0.8 * 1.0 + 0.2 * 2.0) * 200.0, rel=1e-9)


def test_deterministic_traces_match_monte_carlo_unshifted():
    tau, gamma = 0.8, 5.0
    det = DeterministicTraces(tau, gamma, eps=0.0)
    pmc = PencilMonteCarlo(tau, gamma, n_cal=3000, n_replicates=12, seed=2)
    for c0, c1 in [(1.0, 1.0), (2.0, 0.7), (0.5, 1.9)]:
        t_det = det.traces(c0, c1)
        t_mc = pmc.traces(c0, c1)
        for a, b in zip(t_det, t_mc):
            assert a == pytest.approx(b, rel=0.02)


def test_deterministic_traces_match_monte_carlo_shifted():
    tau, gamma = 0.8, 0.8
    eps = 2.0 * tau
    det = DeterministicTraces(tau, gamma, eps=eps)
    mc_vals, rel = shifted_mc_traces(tau, gamma, 1.3, 0.9, eps,
                                     n_cal=1200, n_replicates=6, seed=4)
    assert rel < 0.05
    for a, b in zip(det.traces(1.3, 0.9), mc_vals):
        assert a == pytest.approx(b, rel=0.05)


def test_deterministic_trace_fixed_point_matches_mp_resolvent():
    # at the c = 0 interpolating point the pencil reduces to the
    # Marchenko-Pastur resolvent: W(rh*) = tau*gamma exactly
    from csbmlab.theory import mp_resolvent_T
    tau, gamma = 0.8, 0.8
    m_de = (1.0 - gamma * tau) / (2.0 * tau)
    g = (1.0 - tau) * m_de
    rh_star = 2.0 * g
    t = mp_resolvent_T(rh_star, gamma)
    assert 1.0 - rh_star * t == pytest.approx(tau * gamma, abs=1e-12)
    assert t == pytest.approx(tau / (1.0 - tau), abs=1e-12)


# ---------------------------------------------------------------------
# reductions of the full system
# ---------------------------------------------------------------------

def test_zero_self_loop_reduces_to_one_hop_theory_above_interpolation():
    one = theory_risks(TheoryParams(lam=1.0, mu=0.0, gamma=5.0, tau=0.8, r=0.0))
    pred = selfloop_theory(1.0, 5.0, 0.8, 0.0, estimator="deterministic")
    assert pred.r_train == pytest.approx(one.r_train, rel=1e-7)
    assert pred.r_test == pytest.approx(one.r_test, rel=1e-7)
    assert pred.acc == pytest.approx(one.acc, abs=1e-8)
    pred_mc = selfloop_theory(1.0, 5.0, 0.8, 0.0, n_cal=3000, n_replicates=8, seed=1)
    assert pred_mc.r_test == pytest.approx(one.r_test, rel=0.02)


def test_zero_self_loop_reduces_to_one_hop_theory_interpolating():
    one = theory_risks(TheoryParams(lam=1.0, mu=0.0, gamma=0.8, tau=0.8, r=1e-9))
    pred = selfloop_theory(1.0, 0.8, 0.8, 0.0)
    assert pred.r_train == pytest.approx(0.0, abs=1e-10)
    assert pred.r_test == pytest.approx(one.r_test, rel=1e-5)
    assert pred.acc == pytest.approx(one.acc, abs=1e-6)


def test_sign_flip_symmetry_of_predictions():
    for gamma in (0.8, 5.0):
        kw = dict(estimator="deterministic")
        a = selfloop_theory(1.0, gamma, 0.8, 0.75, **kw)
        b = selfloop_theory(-1.0, gamma, 0.8, -0.75, **kw)
        assert a.r_test == pytest.approx(b.r_test, rel=1e-8)
        assert a.acc == pytest.approx(b.acc, abs=1e-9)


def test_shifted_branch_matches_monte_carlo_verification():
    pred = selfloop_theory(1.0, 0.8, 0.8, 0.5, verify_mc=True,
                           n_cal=1200, n_replicates=6, seed=9)
    assert pred.estimator_rel_spread is not None
    assert pred.estimator_rel_spread < 0.05


def test_heterophilic_benefit_of_negative_self_loops():
    # gamma = 0.8, tau = 0.8, mu = 0: negative c helps lambda < 0
    risks = {c: selfloop_theory(-1.0, 0.8, 0.8, c).r_test for c in (-1.0, 0.0, 1.0)}
    assert risks[-1.0] < risks[0.0] < risks[1.0]


def test_invalid_inputs():
    with pytest.raises(InvalidConfig):
        selfloop_theory(1.0, 5.0, 1.0, 0.5)  # tau = 1 has no test set
    with pytest.raises(InvalidConfig):
        selfloop_theory(1.0, 1.25, 0.8, 0.5)  # tau*gamma = 1 threshold
    with pytest.raises(InvalidConfig):
        selfloop_theory(1.0, 5.0, 0.8, 0.5, estimator="bogus")
