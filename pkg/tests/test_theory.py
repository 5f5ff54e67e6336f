import numpy as np
import pytest

from csbmlab import InterpolationRegion, InvalidConfig
from csbmlab.theory import (
    OrderParams,
    TheoryParams,
    _free_energy,
    mp_resolvent_T,
    ridgeless_risks,
    rmt_full_observation,
    rmt_full_observation_csbm,
    rmt_resolvent_q,
    rmt_two_hop_ridgeless,
    saddle_gradient,
    solve_saddle,
    theory_risks,
)


def params(lam=1.0, mu=1.0, gamma=5.0, tau=0.8, r=0.0):
    return TheoryParams(lam=lam, mu=mu, gamma=gamma, tau=tau, r=r)


# ---------------------------------------------------------------------
# ridgeless closed forms
# ---------------------------------------------------------------------

def test_ridgeless_reference_point():
    r_train, r_test = ridgeless_risks(params())
    assert r_train == pytest.approx(0.5625, abs=1e-12)
    assert r_test == pytest.approx(1.0, abs=1e-12)


def test_ridgeless_signal_free_reduction():
    _, r_test = ridgeless_risks(params(lam=0.0, mu=0.0))
    assert r_test == pytest.approx(4.0 / 3.0, abs=1e-12)


def test_ridgeless_diverges_towards_interpolation():
    taus = [0.5, 0.3, 0.25, 0.21, 0.205, 0.201]
    vals = [ridgeless_risks(params(tau=t))[1] for t in taus]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert vals[-1] > 100.0


def test_ridgeless_rejects_interpolation_region():
    with pytest.raises(InterpolationRegion):
        ridgeless_risks(params(tau=0.2))  # tau*gamma = 1 exactly
    with pytest.raises(InterpolationRegion):
        ridgeless_risks(params(gamma=0.8))


# ---------------------------------------------------------------------
# Marchenko-Pastur resolvent trace
# ---------------------------------------------------------------------

def test_mp_resolvent_ridgeless_limit():
    # closed form gives 1/(gamma-1) as r_hat -> 0 (0.25 at gamma = 5)
    assert mp_resolvent_T(0.0, 5.0) == pytest.approx(0.25, abs=1e-15)
    assert mp_resolvent_T(1e-13, 5.0) == pytest.approx(0.25, rel=1e-10)


def test_mp_resolvent_against_sampled_trace():
    # Monte Carlo oracle: empirical (1/F) Tr (X'X + I)^(-1) at gamma = 2
    n, f = 4000, 2000
    rng = np.random.default_rng(8)
    x = rng.normal(0.0, 1.0, (n, f)) / np.sqrt(f)
    gram = x.T @ x
    gram[np.diag_indices(f)] += 1.0
    trace = np.trace(np.linalg.inv(gram)) / f
    assert mp_resolvent_T(1.0, 2.0) == pytest.approx(trace, rel=0.01)


def test_mp_resolvent_vanishes_at_large_ridge():
    vals = [mp_resolvent_T(rh, 5.0) for rh in (1e2, 1e4, 1e6)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 2e-6
    # leading order 1/r_hat
    assert vals[2] == pytest.approx(1e-6, rel=1e-4)


def test_mp_resolvent_rejects_negative():
    with pytest.raises(InvalidConfig):
        mp_resolvent_T(-0.1, 2.0)


# ---------------------------------------------------------------------
# saddle point
# ---------------------------------------------------------------------

def test_saddle_matches_ridgeless_at_tiny_r():
    p = params(r=1e-8)
    pred = theory_risks(p)
    r_train, r_test = ridgeless_risks(params(r=0.0))
    assert abs(pred.r_train - r_train) < 1e-4
    assert abs(pred.r_test - r_test) < 1e-4


def test_saddle_gradient_matches_finite_differences():
    p = params(lam=2.0, mu=1.0, gamma=5.0, tau=0.8, r=0.1)
    op = solve_saddle(p)
    v0 = op.as_array() * 1.17 + 0.03  # off-stationary probe
    analytic = saddle_gradient(OrderParams(*v0), p)
    numeric = np.zeros(6)
    for i in range(6):
        h = 1e-6 * max(1.0, abs(v0[i]))
        vp, vm = v0.copy(), v0.copy()
        vp[i] += h
        vm[i] -= h
        numeric[i] = (_free_energy(vp, p) - _free_energy(vm, p)) / (2 * h)
    assert np.max(np.abs(analytic - numeric)) < 1e-7


@pytest.mark.parametrize("p", [
    params(r=1e-8),
    params(lam=2.0, r=0.1),
    params(lam=0.5, mu=0.0, gamma=2.0, tau=0.9, r=1.0),
    params(lam=1.0, mu=5.0, gamma=0.1, tau=0.5, r=0.005),  # interpolating regime
])
def test_saddle_stationarity_residual(p):
    op = solve_saddle(p)
    grad = saddle_gradient(op, p)
    # residual target, relative to the largest term in each condition
    scale = np.maximum(1.0, np.abs(op.as_array()))
    assert np.max(np.abs(grad) / np.maximum(scale.max(), 1.0)) < 1e-9


def test_saddle_physical_signs():
    op = solve_saddle(params(lam=2.0, r=0.1))
    assert op.q > 0 and op.q_hat > 0 and op.p > 0


def test_saddle_deterministic():
    p = params(lam=2.0, r=0.1)
    a, b = solve_saddle(p), solve_saddle(p)
    assert a.as_array().tobytes() == b.as_array().tobytes()


def test_saddle_rejects_ridgeless_interpolation():
    with pytest.raises(InterpolationRegion):
        solve_saddle(params(gamma=0.5, r=0.0))


# ---------------------------------------------------------------------
# theory risks
# ---------------------------------------------------------------------

def test_accuracy_is_half_when_graph_uninformative():
    pred = theory_risks(params(lam=0.0, r=0.01))
    assert pred.acc == pytest.approx(0.5, abs=1e-12)


def test_accuracy_saturates_for_strong_signal():
    pred = theory_risks(params(lam=30.0, mu=5.0, r=0.01))
    assert pred.acc > 0.999


def test_accuracy_consistent_with_mean_and_variance():
    from scipy.special import erf
    pred = theory_risks(params(lam=2.0, r=0.1))
    recomputed = 0.5 * (1.0 + erf(pred.mean_pos / np.sqrt(2.0 * pred.var_pos)))
    assert pred.acc == pytest.approx(recomputed, abs=1e-14)


def test_accuracy_monotone_in_tau_at_strong_regularization():
    # heavily regularized regime: accuracy increases with label budget
    accs = [theory_risks(TheoryParams(lam=2.0, mu=1.0, gamma=5.0, tau=t, r=2.0)).acc
            for t in np.arange(0.1, 1.01, 0.1)]
    assert all(b >= a - 1e-12 for a, b in zip(accs, accs[1:]))


def test_theory_continuous_in_r():
    for r in (1e-4, 0.01, 0.3, 2.0):
        a = theory_risks(params(lam=2.0, r=r))
        b = theory_risks(params(lam=2.0, r=r * (1.0 + 1e-6)))
        assert abs(a.r_test - b.r_test) < 1e-4
        assert abs(a.r_train - b.r_train) < 1e-4
        assert abs(a.acc - b.acc) < 1e-4


def test_consistency_triangle_small_r():
    # |theory - ridgeless| < 1e-4 for every tau*gamma > 1 point with r <= 1e-6
    for lam in (0.5, 1.5):
        for mu in (0.0, 2.0):
            for gamma in (2.0, 6.0):
                p0 = TheoryParams(lam=lam, mu=mu, gamma=gamma, tau=0.8, r=0.0)
                p1 = TheoryParams(lam=lam, mu=mu, gamma=gamma, tau=0.8, r=1e-6)
                r_train, r_test = ridgeless_risks(p0)
                pred = theory_risks(p1)
                assert abs(pred.r_train - r_train) < 1e-4
                assert abs(pred.r_test - r_test) < 1e-4


# ---------------------------------------------------------------------
# full-observation random matrix formulas
# ---------------------------------------------------------------------

def test_rmt_resolvent_leading_order():
    for alpha in (0.25, 0.5, 0.75):
        for r in (1e-5, 1e-7):
            q = rmt_resolvent_q(alpha, r)
            assert q * r == pytest.approx(1.0 - alpha, rel=1e-3)
        # next-order coefficient alpha^2/(1-alpha)^2
        r = 1e-7
        q = rmt_resolvent_q(alpha, r)
        assert q - (1 - alpha) / r == pytest.approx(alpha**2 / (1 - alpha) ** 2, rel=1e-4)


def test_rmt_resolvent_against_sampled_trace():
    n, f, r = 3000, 1500, 0.5
    rng = np.random.default_rng(12)
    o = (rng.normal(size=(n, n)) / np.sqrt(n)) @ (rng.normal(size=(n, f)) / np.sqrt(f))
    k = o @ o.T
    k[np.diag_indices(n)] += r
    trace = np.trace(np.linalg.inv(k)) / n
    assert rmt_resolvent_q(0.5, r) == pytest.approx(trace, rel=0.02)


def test_rmt_ridgeless_reference_value():
    # alpha = 0.5, lambda = 1, rescaled mu^2 = 2 -> L = 0.3
    assert rmt_full_observation(0.5, 1.0, np.sqrt(2.0), 0.0) == pytest.approx(0.3, abs=1e-12)


def test_rmt_matches_ridgeless_closed_form_identity():
    # Appendix-style identity: full-observation L equals the tau = 1
    # ridgeless train risk for every (gamma, lam, mu)
    for gamma in (1.25, 2.0, 5.0):
        for lam in (0.5, 1.0, 2.0):
            for mu in (0.0, 1.0, 3.0):
                lhs = rmt_full_observation_csbm(gamma, lam, mu, 0.0)
                rhs = (gamma + mu) * (gamma - 1.0) / (
                    gamma * (gamma + lam**2 * (mu + 1.0) + mu))
                assert lhs == pytest.approx(rhs, abs=1e-8)


def test_rmt_small_r_path_converges_to_ridgeless():
    target = rmt_full_observation(0.5, 1.0, np.sqrt(2.0), 0.0)
    vals = [rmt_full_observation(0.5, 1.0, np.sqrt(2.0), r) for r in (1e-4, 1e-6)]
    assert abs(vals[0] - target) < 5e-3
    assert abs(vals[1] - target) < 1e-4


def test_rmt_mu_zero_simplification():
    for alpha in (0.3, 0.6):
        for lam in (0.5, 2.0):
            lhs = rmt_full_observation(alpha, lam, 0.0, 0.0)
            assert lhs == pytest.approx((1 - alpha) / (1 + alpha * lam**2), abs=1e-12)


def test_interpolation_bump_sits_at_inverse_gamma_for_every_lambda():
    # gamma = 2, mu = 1, normal-equation ridge 0.02: each lambda slice has
    # an interior test-risk maximum at tau = 1/gamma = 0.5
    taus = np.round(np.arange(0.1, 1.001, 0.05), 4)
    for lam in (0.5, 1.5, 3.0):
        vals = [theory_risks(TheoryParams(lam=lam, mu=1.0, gamma=2.0, tau=t,
                                          r=0.02 / t)).r_test for t in taus]
        k = int(np.argmax(vals))
        assert 0 < k < len(taus) - 1
        assert abs(taus[k] - 0.5) <= 0.05 + 1e-9


def test_alpha_sweep_shape_depends_on_homophily():
    # varying model complexity alpha = 1/gamma at fixed tau: noisy graphs
    # keep the double-descent bump, strongly homophilic ones decay
    # monotonically
    alphas = np.round(np.arange(0.1, 2.01, 0.1), 4)

    def curve(lam):
        return [theory_risks(TheoryParams(lam=lam, mu=1.0, gamma=1.0 / a,
                                          tau=0.6, r=0.1)).r_test for a in alphas]

    noisy = np.diff(curve(0.2))
    assert np.any(noisy > 1e-6) and np.any(noisy < -1e-6)  # non-monotone
    homophilic = np.diff(curve(3.0))
    assert np.all(homophilic <= 1e-10)  # monotone decreasing


def test_two_hop_limits():
    assert rmt_two_hop_ridgeless(0.4, 0.0) == pytest.approx(0.6, abs=1e-15)
    assert rmt_two_hop_ridgeless(0.5, 1.0) == pytest.approx(0.3, abs=1e-15)
    vals = [rmt_two_hop_ridgeless(0.5, lam) for lam in (10.0, 100.0, 1000.0)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-5
