"""Monte Carlo orchestration: trial averaging, parameter sweeps, the
binary/Gaussian universality check, self-loop scans and spectral summaries.

Every row is a pure function of (configuration, master seed): trial t of a
row uses substreams derived from (seed, t), so serial and thread-pooled
execution produce identical tables.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .errors import EstimatorNoisy, InterpolationRegion, InvalidConfig, SolverDiverged
from .model import CsbmConfig, make_dataset
from .regression import build_design, evaluate, fit_ridge
from .selfloop import selfloop_theory
from .theory import (
    RIDGELESS_GUARD,
    TheoryParams,
    rmt_two_hop_ridgeless,
    theory_risks,
)

SWEEP_CAP = 10_000
METRICS = ("r_train", "r_test", "acc", "mean_pos", "var_pos", "mean_neg", "var_neg")
THEORY_FIELDS = ("theory_r_train", "theory_r_test", "theory_acc",
                 "theory_mean_pos", "theory_var_pos")
RIDGELESS_THEORY_R = 1e-9   # stand-in ridge for theory curves at r = 0 inside tau*gamma <= 1
SELFLOOP_RIDGELESS_MAX = 1e-6


@dataclass(frozen=True)
class SummaryRow:
    """Aggregated trial statistics at one parameter point."""

    params: dict
    means: dict
    stds: dict
    theory: dict
    n_trials: int

    def as_flat_dict(self) -> dict:
        out = dict(self.params)
        for key in METRICS:
            out[f"{key}_mean"] = self.means.get(key)
            out[f"{key}_std"] = self.stds.get(key)
        for key in THEORY_FIELDS:
            out[key] = self.theory.get(key)
        out["n_trials"] = self.n_trials
        return out


def params_of(cfg: CsbmConfig) -> dict:
    """Canonical parameter columns of a config (CSV order is fixed here)."""
    c = cfg.filter_coeffs[0] if len(cfg.filter_coeffs) == 2 and cfg.filter_coeffs[1] == 1.0 else None
    return {
        "tau": cfg.tau,
        "lambda": cfg.lam,
        "mu": cfg.mu,
        "gamma": cfg.gamma,
        "r": cfg.r,
        "d": cfg.d,
        "n": cfg.n,
        "f": cfg.f,
        "ensemble": cfg.ensemble,
        "filter": ",".join(f"{v:g}" for v in cfg.filter_coeffs),
        "c": c,
        "seed": cfg.seed,
    }


def sim_ridge(cfg: CsbmConfig, ridge_convention: str) -> float:
    """Ridge coefficient actually placed in the normal equations."""
    if ridge_convention == "eq12":
        return cfg.r
    if ridge_convention == "hamiltonian":
        return cfg.tau * cfg.r
    raise InvalidConfig(f"unknown ridge convention {ridge_convention!r}")


def theory_ridge(cfg: CsbmConfig, ridge_convention: str) -> float:
    """Ridge parameter handed to the theory (its internal convention has
    the train-fraction factor absorbed into the penalty)."""
    if ridge_convention == "eq12":
        return cfg.r / cfg.tau
    if ridge_convention == "hamiltonian":
        return cfg.r
    raise InvalidConfig(f"unknown ridge convention {ridge_convention!r}")


def theory_columns(cfg: CsbmConfig, ridge_convention: str = "eq12",
                   selfloop_kwargs: dict | None = None) -> dict:
    """Theory predictions for a config, or None entries when the filter or
    regime has no supported prediction."""
    out = {key: None for key in THEORY_FIELDS}
    coeffs = cfg.filter_coeffs
    gamma = cfg.gamma
    r_th = theory_ridge(cfg, ridge_convention)
    try:
        if coeffs == (0.0, 1.0):
            if r_th == 0.0 and cfg.tau * gamma <= 1.0 + RIDGELESS_GUARD:
                if abs(cfg.tau * gamma - 1.0) < 1e-6:
                    return out
                r_th = RIDGELESS_THEORY_R
            pred = theory_risks(TheoryParams(lam=cfg.lam, mu=cfg.mu, gamma=gamma,
                                             tau=cfg.tau, r=r_th))
        elif (len(coeffs) == 2 and coeffs[1] == 1.0 and coeffs[0] != 0.0
              and cfg.mu == 0.0 and r_th <= SELFLOOP_RIDGELESS_MAX
              and 0.0 < cfg.tau < 1.0 and abs(cfg.tau * gamma - 1.0) > 1e-9):
            pred = selfloop_theory(cfg.lam, gamma, cfg.tau, coeffs[0],
                                   **(selfloop_kwargs or {}))
        elif (coeffs == (0.0, 0.0, 1.0) and cfg.tau == 1.0 and cfg.mu == 0.0
              and r_th <= SELFLOOP_RIDGELESS_MAX and gamma >= 1.0):
            out["theory_r_train"] = rmt_two_hop_ridgeless(1.0 / gamma, cfg.lam)
            return out
        else:
            return out
    except (InterpolationRegion, SolverDiverged, EstimatorNoisy, InvalidConfig):
        return out
    out["theory_r_train"] = pred.r_train
    out["theory_r_test"] = pred.r_test if cfg.tau < 1.0 else None
    out["theory_acc"] = pred.acc if cfg.tau < 1.0 else None
    out["theory_mean_pos"] = pred.mean_pos if cfg.tau < 1.0 else None
    out["theory_var_pos"] = pred.var_pos if cfg.tau < 1.0 else None
    return out


def _trial_row(cfg: CsbmConfig, trial: int, ridge: float) -> dict:
    ds = make_dataset(cfg, trial)
    phi = build_design(ds.adjacency, ds.x, cfg.filter_coeffs)
    w = fit_ridge(phi, ds.y, ds.split, ridge)
    return evaluate(phi, w, ds.y, ds.split).as_row()


def _aggregate(rows: list[dict]) -> tuple[dict, dict]:
    means, stds = {}, {}
    for key in METRICS:
        vals = [row[key] for row in rows]
        if any(v is None for v in vals):
            means[key] = None
            stds[key] = None
            continue
        arr = np.asarray(vals, dtype=float)
        means[key] = float(arr.mean())
        stds[key] = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return means, stds


def run_trials(cfg: CsbmConfig, n_trials: int = 10, *, ridge_convention: str = "eq12",
               attach_theory: bool = True, workers: int | None = None,
               selfloop_kwargs: dict | None = None) -> SummaryRow:
    """Average ``n_trials`` independent draws of one parameter point."""
    cfg.validate()
    if n_trials < 1:
        raise InvalidConfig(f"n_trials must be >= 1, got {n_trials}")
    ridge = sim_ridge(cfg, ridge_convention)
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda t: _trial_row(cfg, t, ridge), range(n_trials)))
    else:
        rows = [_trial_row(cfg, t, ridge) for t in range(n_trials)]
    means, stds = _aggregate(rows)
    theory = (theory_columns(cfg, ridge_convention, selfloop_kwargs)
              if attach_theory else {k: None for k in THEORY_FIELDS})
    return SummaryRow(params=params_of(cfg), means=means, stds=stds,
                      theory=theory, n_trials=n_trials)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

_PSEUDO_FIELDS = ("gamma", "c", "lambda")


def _apply_overrides(base: CsbmConfig, combo: dict) -> CsbmConfig:
    combo = dict(combo)
    updates = {}
    if "lambda" in combo:
        updates["lam"] = combo.pop("lambda")
    if "c" in combo:
        updates["filter_coeffs"] = (float(combo.pop("c")), 1.0)
    gamma = combo.pop("gamma", None)
    updates.update(combo)
    cfg = replace(base, **updates)
    if gamma is not None:
        cfg = replace(cfg, f=int(round(cfg.n / float(gamma))))
    return cfg.validate()


def sweep(base: CsbmConfig, overrides: list[tuple[str, list]], n_trials: int = 10, *,
          ridge_convention: str = "eq12", attach_theory: bool = True,
          workers: int | None = None, cap: int = SWEEP_CAP,
          selfloop_kwargs: dict | None = None) -> list[SummaryRow]:
    """Cartesian product of the override grids, one SummaryRow per point,
    in row-major order of the overrides list."""
    valid = set(CsbmConfig.__dataclass_fields__) | set(_PSEUDO_FIELDS)
    for name, grid in overrides:
        if name not in valid:
            raise InvalidConfig(f"unknown sweep parameter {name!r}")
        if len(grid) == 0:
            raise InvalidConfig(f"empty grid for sweep parameter {name!r}")
    total = math.prod(len(grid) for _, grid in overrides) if overrides else 1
    if total > cap:
        raise InvalidConfig(f"sweep would produce {total} rows, above the cap {cap}")
    combos = [{}]
    for name, grid in overrides:
        combos = [dict(combo, **{name: value}) for combo in combos for value in grid]
    out = []
    for combo in combos:
        cfg = _apply_overrides(base, combo)
        out.append(run_trials(cfg, n_trials, ridge_convention=ridge_convention,
                              attach_theory=attach_theory, workers=workers,
                              selfloop_kwargs=selfloop_kwargs))
    return out


# ---------------------------------------------------------------------------
# Universality check (binary vs Gaussian ensembles)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UniversalityReport:
    """Binary-vs-Gaussian comparison across sizes.

    slope_train/slope_test fit the mean risk gaps, using only points where
    the gap is resolved above Monte Carlo error (10x standard error by
    default); they are None when no such points exist.  obs_slope_train and
    obs_slope_test fit the observed gap magnitude at the given trial
    budget (the average absolute batch gap), which is what a fixed-budget
    protocol measures: both the true ensemble gap and the Monte Carlo
    error of self-averaging risks decay like N^(-1/2).
    """

    rows: list = field(repr=False)
    slope_train: float | None
    slope_test: float | None
    n_points_train: int
    n_points_test: int
    obs_slope_train: float | None
    obs_slope_test: float | None


def _loglog_slope(ns, deltas, ses, min_ratio: float = 10.0):
    """Unweighted least-squares slope of log|delta| vs log N, excluding
    noise-dominated points (|delta| < min_ratio * standard error)."""
    xs, ys = [], []
    for n, d, se in zip(ns, deltas, ses):
        if abs(d) > 0 and abs(d) >= min_ratio * se:
            xs.append(math.log(n))
            ys.append(math.log(abs(d)))
    if len(xs) < 2:
        return None, len(xs)
    slope = np.polyfit(xs, ys, 1)[0]
    return float(slope), len(xs)


def universality_check(base: CsbmConfig, n_list: list[int], n_trials: int = 64, *,
                       ridge_convention: str = "eq12", workers: int | None = None,
                       d_rule=lambda n: math.sqrt(n) / 2.0,
                       min_delta_ratio: float = 10.0,
                       batches: int = 8) -> UniversalityReport:
    """Risks under all four ensembles at each size, with the log-log decay
    slope of the binary-vs-Gaussian risk gap.

    Matched trial substreams give all ensembles identical features and
    splits at a given trial, so the per-trial gaps are paired.  Two gap
    measures are reported per size: the mean paired gap with its standard
    error (slope fitted only over points resolved above min_delta_ratio
    standard errors), and the batch-stabilized observed gap magnitude
    mean_b |gap over batch b|, whose decay slope is well defined at any
    trial budget.
    """
    if len(n_list) < 2:
        raise InvalidConfig("universality check needs at least two sizes")
    if batches < 2 or n_trials < batches:
        raise InvalidConfig("need n_trials >= batches >= 2")
    ensembles = ("binary_symmetric", "binary_nonsymmetric",
                 "gaussian_symmetric", "gaussian_nonsymmetric")
    gamma = base.gamma
    rows = []
    for n in sorted(n_list):
        f = int(round(n / gamma))
        d = d_rule(n)
        per_ens = {}
        for ens in ensembles:
            cfg = base.with_overrides(n=int(n), f=f, d=d, ensemble=ens)
            ridge = sim_ridge(cfg, ridge_convention)
            if workers and workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    trials = list(pool.map(lambda t: _trial_row(cfg, t, ridge), range(n_trials)))
            else:
                trials = [_trial_row(cfg, t, ridge) for t in range(n_trials)]
            per_ens[ens] = trials
        row = {"n": int(n), "d": d, "f": f, "n_trials": n_trials}
        for ens in ensembles:
            tag = {"binary_symmetric": "bs", "binary_nonsymmetric": "bn",
                   "gaussian_symmetric": "gs", "gaussian_nonsymmetric": "gn"}[ens]
            for key in ("r_train", "r_test"):
                vals = np.array([t[key] for t in per_ens[ens]], dtype=float)
                row[f"{key}_mean_{tag}"] = float(vals.mean())
                row[f"{key}_std_{tag}"] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        for key, short in (("r_train", "train"), ("r_test", "test")):
            paired = np.array([
                0.5 * (per_ens["binary_symmetric"][t][key] + per_ens["binary_nonsymmetric"][t][key])
                - 0.5 * (per_ens["gaussian_symmetric"][t][key] + per_ens["gaussian_nonsymmetric"][t][key])
                for t in range(n_trials)
            ])
            row[f"delta_{short}"] = float(paired.mean())
            row[f"delta_{short}_se"] = (float(paired.std(ddof=1) / math.sqrt(n_trials))
                                        if n_trials > 1 else 0.0)
            batch_means = np.array([chunk.mean() for chunk in np.array_split(paired, batches)])
            abs_means = np.abs(batch_means)
            row[f"obs_gap_{short}"] = float(abs_means.mean())
            row[f"obs_gap_{short}_se"] = float(abs_means.std(ddof=1) / math.sqrt(batches))
        rows.append(row)
    ns = [row["n"] for row in rows]
    slope_train, k_train = _loglog_slope(
        ns, [row["delta_train"] for row in rows],
        [row["delta_train_se"] for row in rows], min_delta_ratio)
    slope_test, k_test = _loglog_slope(
        ns, [row["delta_test"] for row in rows],
        [row["delta_test_se"] for row in rows], min_delta_ratio)
    obs_slope_train, _ = _loglog_slope(
        ns, [row["obs_gap_train"] for row in rows],
        [0.0] * len(rows), 0.0)
    obs_slope_test, _ = _loglog_slope(
        ns, [row["obs_gap_test"] for row in rows],
        [0.0] * len(rows), 0.0)
    return UniversalityReport(rows=rows, slope_train=slope_train, slope_test=slope_test,
                              n_points_train=k_train, n_points_test=k_test,
                              obs_slope_train=obs_slope_train, obs_slope_test=obs_slope_test)


# ---------------------------------------------------------------------------
# Self-loop scan
# ---------------------------------------------------------------------------

def _scan_trial_curves(cfg: CsbmConfig, trial: int, c_grid: np.ndarray, ridge: float):
    """Risk metrics along the c grid for one sampled dataset.

    The design is linear in c (Phi = B + c X with B = A X), so B and the
    train-side Gram blocks are shared across the whole grid.  With
    M <= F the (min-norm or ridge) fit uses the kernel form
    alpha = (Phi_tr Phi_tr^T + r I)^(-1) y_tr, w = Phi_tr^T alpha, which
    matches fit_ridge; with M > F it falls back to fit_ridge per point.
    """
    ds = make_dataset(cfg, trial)
    b = ds.adjacency @ ds.x
    tr = ds.split.train_mask
    m = ds.split.m_train
    f = cfg.f
    rows = []
    if m <= f:
        b_tr, x_tr = b[tr], ds.x[tr]
        y_tr = ds.y[tr]
        g0 = b_tr @ b_tr.T
        g1 = b_tr @ x_tr.T
        g1s = g1 + g1.T
        g2 = x_tr @ x_tr.T
        for c in c_grid:
            g = g0 + c * g1s + (c * c) * g2
            if ridge > 0:
                g[np.diag_indices(m)] += ridge
            cf = scipy.linalg.cho_factor(g, lower=True, check_finite=False)
            alpha = scipy.linalg.cho_solve(cf, y_tr, check_finite=False)
            w = b_tr.T @ alpha + c * (x_tr.T @ alpha)
            phi_w = b @ w + c * (ds.x @ w)
            rows.append(_metrics_from_outputs(phi_w, ds))
    else:
        for c in c_grid:
            phi = b + c * ds.x
            w = fit_ridge(phi, ds.y, ds.split, ridge)
            rows.append(_metrics_from_outputs(phi @ w, ds))
    return rows


def _metrics_from_outputs(h: np.ndarray, ds) -> dict:
    err = (ds.y - h) ** 2
    tr = ds.split.train_mask
    te = ds.split.test_mask
    row = {"r_train": float(err[tr].mean())}
    if ds.split.m_test:
        row["r_test"] = float(err[te].mean())
        pred = np.where(h >= 0.0, 1.0, -1.0)
        row["acc"] = float((pred[te] == ds.y[te]).mean())
        for sign, key in ((1, "pos"), (-1, "neg")):
            sel = te & (ds.y == sign)
            vals = h[sel]
            row[f"mean_{key}"] = float(vals.mean())
            row[f"var_{key}"] = float(vals.var())
    else:
        for key in METRICS[1:]:
            row[key] = None
    return row


def selfloop_scan(base: CsbmConfig, c_grid, n_trials: int = 10, *,
                  ridge_convention: str = "eq12", attach_theory: bool = True,
                  workers: int | None = None,
                  selfloop_kwargs: dict | None = None):
    """Mean risks along a self-loop intensity grid and the empirical
    optimum c* (argmin of mean test risk, ties to smaller \\|c\\|).

    Returns (rows, c_star) where rows are SummaryRow objects.
    """
    base.validate()
    c_grid = np.asarray(list(c_grid), dtype=float)
    if c_grid.size == 0:
        raise InvalidConfig("empty c grid")
    ridge = sim_ridge(base, ridge_convention)

    def one_trial(t):
        return _scan_trial_curves(base, t, c_grid, ridge)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_trial = list(pool.map(one_trial, range(n_trials)))
    else:
        per_trial = [one_trial(t) for t in range(n_trials)]

    theory_preds = {}
    if attach_theory:
        for idx, c in enumerate(c_grid):
            cfg_c = base.with_overrides(filter_coeffs=(float(c), 1.0))
            theory_preds[idx] = theory_columns(cfg_c, ridge_convention,
                                               selfloop_kwargs=selfloop_kwargs)

    rows = []
    for i, c in enumerate(c_grid):
        trial_rows = [per_trial[t][i] for t in range(n_trials)]
        means, stds = _aggregate(trial_rows)
        cfg_c = base.with_overrides(filter_coeffs=(float(c), 1.0))
        theory = theory_preds.get(i, {k: None for k in THEORY_FIELDS})
        rows.append(SummaryRow(params=params_of(cfg_c), means=means, stds=stds,
                               theory=theory, n_trials=n_trials))

    candidates = [(row.means["r_test"], abs(row.params["c"]), row.params["c"])
                  for row in rows if row.means["r_test"] is not None]
    if not candidates:
        raise InvalidConfig("self-loop scan produced no test risks (tau = 1?)")
    c_star = min(candidates)[2]
    return rows, float(c_star)


# ---------------------------------------------------------------------------
# Spectral summary of symmetric matrices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectrumReport:
    eigenvalues: np.ndarray   # ascending
    projections: np.ndarray   # <signal, u_i> per eigenvector
    response: np.ndarray      # eigenvalues + c
    distortion: float | None  # (lambda_a + c)/(lambda_b + c) over the band
    band: tuple


def spectral_analysis(a: np.ndarray, signal: np.ndarray, c: float = 0.0,
                      band: tuple[int, int] | None = None) -> SpectrumReport:
    """Eigendecomposition of a symmetric matrix with signal projections and
    the self-loop filter response.

    band holds two eigenvalue indices (ascending order) whose filter
    responses form the distortion ratio (lambda_a + c)/(lambda_b + c).
    """
    if a.shape[0] != a.shape[1] or not np.allclose(a, a.T, atol=1e-10):
        raise InvalidConfig("spectral analysis requires a symmetric matrix")
    vals, vecs = np.linalg.eigh(a)
    proj = vecs.T @ signal
    response = vals + c
    distortion = None
    if band is not None:
        ia, ib = band
        denom = vals[ib] + c
        if denom == 0.0:
            raise InvalidConfig("distortion ratio undefined: lambda_b + c = 0")
        distortion = float((vals[ia] + c) / denom)
    return SpectrumReport(eigenvalues=vals, projections=proj, response=response,
                          distortion=distortion, band=band if band is not None else ())
