import json

import numpy as np
import pytest

from csbmlab import InvalidConfig
from csbmlab.experiments import (
    _loglog_slope,
    run_trials,
    selfloop_scan,
    spectral_analysis,
    sweep,
    theory_columns,
    universality_check,
)
from csbmlab.model import CsbmConfig, make_dataset
from csbmlab.regression import build_design, evaluate, fit_ridge


def cfg(**kw):
    base = dict(n=400, f=80, lam=1.0, mu=1.0, d=15.0, tau=0.8, r=0.01,
                ensemble="binary_symmetric", seed=5)
    base.update(kw)
    return CsbmConfig(**base)


# ---------------------------------------------------------------------
# run_trials
# ---------------------------------------------------------------------

def test_run_trials_deterministic():
    a = run_trials(cfg(), n_trials=4)
    b = run_trials(cfg(), n_trials=4)
    assert json.dumps(a.as_flat_dict(), sort_keys=True) == \
        json.dumps(b.as_flat_dict(), sort_keys=True)


def test_run_trials_serial_equals_parallel():
    a = run_trials(cfg(), n_trials=6, workers=None)
    b = run_trials(cfg(), n_trials=6, workers=3)
    assert a.as_flat_dict() == b.as_flat_dict()


def test_run_trials_attaches_one_hop_theory():
    row = run_trials(cfg(r=0.1), n_trials=2)
    assert row.theory["theory_r_test"] is not None
    assert row.theory["theory_acc"] is not None


def test_run_trials_theory_null_for_unsupported_filter():
    row = run_trials(cfg(filter_coeffs=(1.0, 2.0, 3.0)), n_trials=2)
    assert all(v is None for v in row.theory.values())


def test_theory_columns_respect_ridge_convention():
    # eq12 maps the CLI ridge to r/tau inside the theory
    from csbmlab.theory import TheoryParams, theory_risks
    c = cfg(n=1000, f=200, r=0.1)
    eq12 = theory_columns(c, "eq12")
    ham = theory_columns(c, "hamiltonian")
    direct_eq12 = theory_risks(TheoryParams(lam=1.0, mu=1.0, gamma=5.0, tau=0.8, r=0.1 / 0.8))
    direct_ham = theory_risks(TheoryParams(lam=1.0, mu=1.0, gamma=5.0, tau=0.8, r=0.1))
    assert eq12["theory_r_test"] == pytest.approx(direct_eq12.r_test, rel=1e-12)
    assert ham["theory_r_test"] == pytest.approx(direct_ham.r_test, rel=1e-12)
    assert eq12["theory_r_test"] != ham["theory_r_test"]


def test_two_hop_full_observation_theory_column():
    from csbmlab.theory import rmt_two_hop_ridgeless
    c = cfg(n=500, f=250, mu=0.0, tau=1.0, r=0.0, filter_coeffs=(0.0, 0.0, 1.0))
    cols = theory_columns(c, "eq12")
    assert cols["theory_r_train"] == pytest.approx(rmt_two_hop_ridgeless(0.5, 1.0))
    assert cols["theory_r_test"] is None


# ---------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------

def test_sweep_cardinality_and_row_major_order():
    rows = sweep(cfg(), [("tau", [0.4, 0.6, 0.8]), ("lambda", [0.5, 1.5])],
                 n_trials=1, attach_theory=False)
    assert len(rows) == 6
    got = [(row.params["tau"], row.params["lambda"]) for row in rows]
    assert got == [(0.4, 0.5), (0.4, 1.5), (0.6, 0.5), (0.6, 1.5), (0.8, 0.5), (0.8, 1.5)]


def test_sweep_gamma_and_c_pseudo_fields():
    rows = sweep(cfg(), [("gamma", [2.0, 4.0]), ("c", [0.5])], n_trials=1,
                 attach_theory=False)
    assert [row.params["f"] for row in rows] == [200, 100]
    assert all(row.params["filter"] == "0.5,1" for row in rows)


def test_sweep_cap():
    with pytest.raises(InvalidConfig):
        sweep(cfg(), [("tau", list(np.linspace(0.1, 0.9, 200))),
                      ("lambda", list(np.linspace(0, 1, 200)))], n_trials=1, cap=100)


def test_sweep_rejects_unknown_parameter():
    with pytest.raises(InvalidConfig):
        sweep(cfg(), [("bogus", [1, 2])], n_trials=1)
    with pytest.raises(InvalidConfig):
        sweep(cfg(), [("tau", [])], n_trials=1)


def test_self_averaging_doubling_n_does_not_raise_trial_spread():
    stds = {}
    for n in (2500, 5000):
        base = CsbmConfig(n=n, f=n // 5, lam=1.0, mu=1.0, d=30.0, tau=0.8,
                          r=1e-5, ensemble="binary_symmetric", seed=909)
        stds[n] = run_trials(base, n_trials=10, attach_theory=False).stds["r_test"]
    assert stds[5000] <= stds[2500]


# ---------------------------------------------------------------------
# universality internals
# ---------------------------------------------------------------------

def test_loglog_slope_recovers_power_law():
    ns = [500, 1000, 2000, 4000]
    deltas = [2.0 * n**-0.5 for n in ns]
    ses = [d / 100 for d in deltas]
    slope, k = _loglog_slope(ns, deltas, ses)
    assert k == 4
    assert slope == pytest.approx(-0.5, abs=1e-12)


def test_loglog_slope_skips_noise_dominated_points():
    ns = [500, 1000, 2000]
    deltas = [1e-4, 1e-4, 1e-4]
    ses = [1e-3, 1e-3, 1e-3]   # |delta| < 10 * se everywhere
    slope, k = _loglog_slope(ns, deltas, ses)
    assert slope is None and k == 0


def test_universality_report_shapes():
    base = cfg(n=300, f=150, lam=2.0, mu=2.0, tau=0.8, r=0.01)
    rep = universality_check(base, [200, 400], n_trials=4, batches=2)
    assert len(rep.rows) == 2
    row = rep.rows[0]
    assert row["n"] == 200 and row["d"] == pytest.approx(np.sqrt(200) / 2)
    for tag in ("bs", "bn", "gs", "gn"):
        assert f"r_test_mean_{tag}" in row
    assert "delta_test" in row and "delta_test_se" in row
    assert "obs_gap_test" in row and rep.obs_slope_test is not None


def test_universality_needs_two_sizes():
    with pytest.raises(InvalidConfig):
        universality_check(cfg(), [500], n_trials=4, batches=2)


# ---------------------------------------------------------------------
# self-loop scan
# ---------------------------------------------------------------------

def test_selfloop_scan_kernel_path_matches_fit_ridge():
    # the shared-Gram kernel path must equal the generic solver exactly
    base = cfg(n=200, f=260, mu=0.0, lam=1.0, tau=0.8, r=0.0, ensemble="bn")
    rows, _ = selfloop_scan(base, [-0.5, 0.0, 0.75], n_trials=2, attach_theory=False)
    for row in rows:
        c = row.params["c"]
        reports = []
        for t in range(2):
            ds = make_dataset(base, t)
            phi = build_design(ds.adjacency, ds.x, (c, 1.0))
            w = fit_ridge(phi, ds.y, ds.split, 0.0)
            reports.append(evaluate(phi, w, ds.y, ds.split))
        mean_rt = np.mean([rep.r_test for rep in reports])
        assert row.means["r_test"] == pytest.approx(mean_rt, rel=1e-8)


def test_selfloop_scan_kernel_path_matches_fit_ridge_with_ridge():
    base = cfg(n=200, f=260, mu=0.0, lam=1.0, tau=0.8, r=0.05, ensemble="bn")
    rows, _ = selfloop_scan(base, [0.5], n_trials=1, attach_theory=False)
    ds = make_dataset(base, 0)
    phi = build_design(ds.adjacency, ds.x, (0.5, 1.0))
    w = fit_ridge(phi, ds.y, ds.split, 0.05)
    rep = evaluate(phi, w, ds.y, ds.split)
    assert rows[0].means["r_test"] == pytest.approx(rep.r_test, rel=1e-8)


def test_selfloop_scan_overdetermined_fallback():
    base = cfg(n=200, f=40, mu=0.0, lam=1.0, tau=0.8, r=0.0, ensemble="bn")
    rows, c_star = selfloop_scan(base, [0.0, 0.5], n_trials=1, attach_theory=False)
    assert len(rows) == 2 and c_star in (0.0, 0.5)


def test_selfloop_scan_cstar_tie_breaks_to_smaller_magnitude():
    import csbmlab.experiments as exp

    base = cfg(n=200, f=260, mu=0.0, tau=0.8, r=0.0, ensemble="bn")
    real = exp._scan_trial_curves

    def rigged(cfg_, trial, c_grid, ridge):
        rows = real(cfg_, trial, c_grid, ridge)
        for row in rows:
            row["r_test"] = 1.0  # force an exact tie
        return rows

    exp._scan_trial_curves = rigged
    try:
        _, c_star = selfloop_scan(base, [-1.0, 0.25, 1.0], n_trials=1, attach_theory=False)
    finally:
        exp._scan_trial_curves = real
    assert c_star == 0.25


def test_selfloop_scan_serial_equals_parallel():
    base = cfg(n=200, f=260, mu=0.0, tau=0.8, r=0.0, ensemble="bn")
    a, ca = selfloop_scan(base, [-0.5, 0.5], n_trials=4, attach_theory=False)
    b, cb = selfloop_scan(base, [-0.5, 0.5], n_trials=4, attach_theory=False, workers=2)
    assert ca == cb
    for ra, rb in zip(a, b):
        assert ra.as_flat_dict() == rb.as_flat_dict()


# ---------------------------------------------------------------------
# spectral analysis
# ---------------------------------------------------------------------

def test_spectrum_requires_symmetry():
    rng = np.random.default_rng(0)
    with pytest.raises(InvalidConfig):
        spectral_analysis(rng.normal(size=(10, 10)), np.ones(10))


def test_spectrum_shift_property():
    # eigenvalues of A + cI are the eigenvalues of A shifted by c,
    # eigenvectors identical
    rng = np.random.default_rng(1)
    g = rng.normal(size=(60, 60))
    a = (g + g.T) / 2
    sig = rng.normal(size=60)
    c = 0.9
    rep = spectral_analysis(a, sig, c=c)
    vals_direct, vecs_direct = np.linalg.eigh(a + c * np.eye(60))
    assert np.allclose(rep.response, vals_direct, atol=1e-10)
    proj_direct = vecs_direct.T @ sig
    assert np.allclose(np.abs(rep.projections), np.abs(proj_direct), atol=1e-8)


def test_spike_alignment_above_detectability():
    c = cfg(n=2000, f=400, lam=2.0, mu=0.0, ensemble="gaussian_symmetric")
    ds = make_dataset(c, 0)
    rep = spectral_analysis(ds.adjacency, ds.y)
    top_overlap = abs(rep.projections[-1]) / np.sqrt(c.n)
    assert top_overlap >= 0.5


def test_distortion_ratio_approaches_one_for_large_shift():
    rng = np.random.default_rng(2)
    g = rng.normal(size=(80, 80))
    a = (g + g.T) / np.sqrt(2 * 80)
    sig = np.ones(80)
    gaps = []
    for c in (1e2, -1e2, 1e4, -1e4):
        rep = spectral_analysis(a, sig, c=c, band=(0, 79))
        gaps.append(abs(rep.distortion - 1.0))
    assert gaps[0] < 0.1 and gaps[1] < 0.1
    assert gaps[2] < 1e-3 and gaps[3] < 1e-3
    assert gaps[2] < gaps[0]
