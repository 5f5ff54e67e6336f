"""Polynomial graph filters, closed-form ridge fit, empirical risk report."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InvalidConfig
from .model import Dataset, TrainTestSplit

# relative singular-value cutoff scale for the ridgeless pseudoinverse
PINV_EPS = 1e-12


@dataclass(frozen=True)
class RiskReport:
    """Empirical train/test risks, accuracy and per-class output statistics.

    Test fields are None when the test set is empty. class_stats maps the
    class sign (+1/-1) to the (mean, variance) of test outputs h_i over that
    class (population variance).
    """

    r_train: float
    r_test: float | None
    acc: float | None
    class_stats: dict

    def as_row(self) -> dict:
        row = {"r_train": self.r_train, "r_test": self.r_test, "acc": self.acc}
        for sign, key in ((1, "pos"), (-1, "neg")):
            mean, var = self.class_stats.get(sign, (None, None))
            row[f"mean_{key}"] = mean
            row[f"var_{key}"] = var
        return row


def build_design(a: np.ndarray, x: np.ndarray, coeffs) -> np.ndarray:
    """Apply the polynomial filter: Phi = sum_k c_k A^k X.

    Horner evaluation, so A^k is never formed: for coeffs (c_0, ..., c_K),
    Phi = c_K X, then repeatedly Phi = A Phi + c_k X.
    """
    coeffs = [float(c) for c in coeffs]
    if not coeffs:
        raise InvalidConfig("filter needs at least one coefficient")
    if a.shape[0] != a.shape[1] or a.shape[0] != x.shape[0]:
        raise InvalidConfig(f"shape mismatch: A {a.shape}, X {x.shape}")
    phi = coeffs[-1] * x
    for c in reversed(coeffs[:-1]):
        phi = a @ phi
        if c != 0.0:
            phi += c * x
    return phi


def fit_ridge(phi: np.ndarray, y: np.ndarray, split: TrainTestSplit, r: float) -> np.ndarray:
    """Closed-form ridge weights on the training rows of the design matrix.

    For r > 0 solves the normal equations (r I + Phi_tr^T Phi_tr) w =
    Phi_tr^T y_tr by Cholesky. For r = 0 returns the minimum-norm
    least-squares solution (pseudoinverse with relative cutoff
    PINV_EPS * max(n, f)).
    """
    if r < 0:
        raise InvalidConfig(f"ridge strength must be >= 0, got {r}")
    phi_tr = phi[split.train_mask]
    y_tr = y[split.train_mask]
    f = phi.shape[1]
    if r == 0.0:
        rcond = PINV_EPS * max(phi.shape[0], f)
        w, *_ = np.linalg.lstsq(phi_tr, y_tr, rcond=rcond)
        return w
    gram = phi_tr.T @ phi_tr
    gram[np.diag_indices(f)] += r
    rhs = phi_tr.T @ y_tr
    c, low = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)
    return scipy.linalg.cho_solve((c, low), rhs, check_finite=False)


def evaluate(phi: np.ndarray, w: np.ndarray, y: np.ndarray, split: TrainTestSplit) -> RiskReport:
    """Squared-error risks, test accuracy (sign(0) counts as +1) and
    per-class test output statistics."""
    h = phi @ w
    err = (y - h) ** 2
    r_train = float(err[split.train_mask].mean())
    if split.m_test == 0:
        return RiskReport(r_train=r_train, r_test=None, acc=None, class_stats={})
    test = split.test_mask
    r_test = float(err[test].mean())
    pred = np.where(h >= 0.0, 1.0, -1.0)
    acc = float((pred[test] == y[test]).mean())
    stats = {}
    for sign in (1, -1):
        sel = test & (y == sign)
        if sel.any():
            vals = h[sel]
            stats[sign] = (float(vals.mean()), float(vals.var()))
    return RiskReport(r_train=r_train, r_test=r_test, acc=acc, class_stats=stats)


def run_instance(ds: Dataset, ridge: float | None = None) -> RiskReport:
    """Design + fit + evaluate for one sampled dataset."""
    phi = build_design(ds.adjacency, ds.x, ds.config.filter_coeffs)
    r = ds.config.r if ridge is None else ridge
    w = fit_ridge(phi, ds.y, ds.split, r)
    return evaluate(phi, w, ds.y, ds.split)
