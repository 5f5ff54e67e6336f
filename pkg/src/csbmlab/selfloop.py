"""Theory for the self-loop filter P(A) = A + c*I at mu = 0 in the
ridgeless limit.

The replica treatment splits every order parameter into a train part and a
test part: overlaps m0, m1, per-replica variances p0, p1 and the rescaled
fluctuation scales G0, G1 (12 variables with their duals).  The dual
variables are explicit functions of the primal ones, so the solver runs
damped Newton on the six-dimensional primal residual.

The feature average reduces to trace functionals of the split Wishart pair
Y0 = X^T I_train X, Y1 = X^T I_test X:

    U(a, b, c0, c1) = E Tr[(a Y0 + b Y1)(c0 Y0 + c1 Y1 + eps I)^(-1)]

with eps = 0 when tau*gamma > 1 and eps = 2*tau in the rescaled system
that describes the interpolating regime tau*gamma < 1 (there the
fluctuation scale diverges like 1/r and the ridge survives as a finite
shift).  Traces are estimated by Monte Carlo over replicate feature
matrices at a calibration size; a deterministic fixed-point equivalent of
the same traces is used to drive Newton iterations cheaply in the shifted
regime and is cross-checked against the Monte Carlo estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import brentq

from .errors import EstimatorNoisy, InvalidConfig, SolverDiverged
from .theory import TheoryParams, _acc_from_mean_var, solve_saddle

DEFAULT_N_CAL = 4000
DEFAULT_REPLICATES = 16
NEWTON_TOL = 1e-11
ESTIMATOR_REL_TOL = 0.05  # max relative replicate spread of the MC traces


@dataclass(frozen=True)
class SelfLoopOrderParams:
    m0: float
    m1: float
    p0: float
    p1: float
    g0: float   # rescaled train fluctuation scale (Q0, or G0/r in the shifted regime)
    g1: float
    m0_hat: float
    m1_hat: float
    p0_hat: float
    p1_hat: float
    q0_hat: float
    q1_hat: float


@dataclass(frozen=True)
class SelfLoopPrediction:
    r_train: float
    r_test: float
    acc: float
    mean_pos: float
    var_pos: float
    order_params: SelfLoopOrderParams = field(repr=False)
    estimator_rel_spread: float | None = None


# ---------------------------------------------------------------------------
# Trace backends
# ---------------------------------------------------------------------------

class DeterministicTraces:
    """Self-consistent (free-probability) trace values for the split
    Wishart pair; exact in the proportional limit.

    m = (1/F) Tr K^(-1), K = c0 Y0 + c1 Y1 + eps I, solves
        m * (eps + tau*gamma*c0/(1+c0*m) + (1-tau)*gamma*c1/(1+c1*m)) = 1
    and the block traces follow by leave-one-out:
        T0 = (1/N) Tr[Y0 K^(-1)] = tau*m/(1+c0*m),  T1 analogous.
    Second-order traces are minus the (c0, c1) gradients of (T0, T1).
    """

    def __init__(self, tau: float, gamma: float, eps: float):
        self.tau = tau
        self.gamma = gamma
        self.eps = eps
        self.e0 = tau * gamma
        self.e1 = (1.0 - tau) * gamma

    def _m(self, c0: float, c1: float) -> float:
        eps, e0, e1 = self.eps, self.e0, self.e1

        def g(m):
            return m * (eps + e0 * c0 / (1.0 + c0 * m) + e1 * c1 / (1.0 + c1 * m)) - 1.0

        hi = 1.0
        poles = [(-1.0 / cc) for cc in (c0, c1) if cc < 0]
        cap = 0.999999 * min(poles) if poles else np.inf
        hi = min(hi, cap / 2.0) if np.isfinite(cap) else hi
        it = 0
        while g(hi) <= 0.0:
            nxt = hi * 2.0
            if np.isfinite(cap) and nxt >= cap:
                nxt = (hi + cap) / 2.0
                if cap - nxt < 1e-14 * cap:
                    raise SolverDiverged(
                        f"trace fixed point has no root before the pole (c0={c0:.4g}, c1={c1:.4g})"
                    )
            hi = nxt
            it += 1
            if it > 300:
                raise SolverDiverged("could not bracket the trace fixed point")
        return brentq(g, 1e-300, hi, rtol=8.9e-16, maxiter=300)

    def _m_and_grad(self, c0: float, c1: float):
        m = self._m(c0, c1)
        eps, e0, e1 = self.eps, self.e0, self.e1
        d0, d1 = 1.0 + c0 * m, 1.0 + c1 * m
        f_m = eps + e0 * c0 / d0**2 + e1 * c1 / d1**2
        f_c0 = e0 * m / d0**2
        f_c1 = e1 * m / d1**2
        return m, -f_c0 / f_m, -f_c1 / f_m

    def traces(self, c0: float, c1: float):
        """Returns (T0, T1, S00, S01, S11), all normalized by N."""
        m, dm0, dm1 = self._m_and_grad(c0, c1)
        d0, d1 = 1.0 + c0 * m, 1.0 + c1 * m
        t0 = self.tau * m / d0
        t1 = (1.0 - self.tau) * m / d1
        # dT0/dc0 = tau*(m' - m^2)/d0^2 with m' = dm/dc0; cross terms use dm/dc1
        dt0_dc0 = self.tau * (dm0 - m * m) / d0**2
        dt0_dc1 = self.tau * dm1 / d0**2
        dt1_dc0 = (1.0 - self.tau) * dm0 / d1**2
        dt1_dc1 = (1.0 - self.tau) * (dm1 - m * m) / d1**2
        s00 = -dt0_dc0
        s01 = -0.5 * (dt0_dc1 + dt1_dc0)  # symmetric up to roundoff
        s11 = -dt1_dc1
        return t0, t1, s00, s01, s11

    rel_spread = None


class PencilMonteCarlo:
    """Monte Carlo traces for the unshifted pencil (tau*gamma > 1).

    Per replicate the pair (Y0, Y0 + Y1) is reduced to generalized
    eigenvalues theta in [0, 1]; every requested trace is then an exact
    average of rational functions of theta, so a frozen replicate set gives
    smooth deterministic trace functions.
    """

    def __init__(self, tau: float, gamma: float, n_cal: int = DEFAULT_N_CAL,
                 n_replicates: int = DEFAULT_REPLICATES, seed: int = 0):
        if tau * gamma <= 1.0 or gamma <= 1.0:
            raise InvalidConfig("unshifted pencil traces need tau*gamma > 1 (hence gamma > 1)")
        self.tau = tau
        self.gamma = gamma
        self.n_cal = n_cal
        f = int(round(n_cal / gamma))
        self.f = f
        root = np.random.SeedSequence(entropy=(int(seed) & (2**64 - 1), 0xC0FFEE))
        thetas = []
        for child in root.spawn(n_replicates):
            rng = np.random.default_rng(child)
            n_tr = int(round(tau * n_cal))
            z = rng.normal(0.0, 1.0, (n_cal, f)) / np.sqrt(f)
            y0 = z[:n_tr].T @ z[:n_tr]
            ytot = y0 + z[n_tr:].T @ z[n_tr:]
            theta = scipy.linalg.eigh(y0, ytot, eigvals_only=True, check_finite=False)
            thetas.append(np.clip(theta, 0.0, 1.0))
        self._thetas = thetas

    def _per_replicate(self, fn):
        return np.array([fn(th) for th in self._thetas])

    def u(self, a: float, b: float, c0: float, c1: float) -> float:
        """Monte Carlo estimate of E Tr[(a Y0 + b Y1)(c0 Y0 + c1 Y1)^(-1)]."""
        vals = self._per_replicate(
            lambda th: np.sum((a * th + b * (1.0 - th)) / (c0 * th + c1 * (1.0 - th)))
        )
        return float(vals.mean())

    def u_rel_spread(self, a: float, b: float, c0: float, c1: float) -> float:
        vals = self._per_replicate(
            lambda th: np.sum((a * th + b * (1.0 - th)) / (c0 * th + c1 * (1.0 - th)))
        )
        denom = max(abs(vals.mean()), 1e-300)
        return float(vals.std(ddof=1) / np.sqrt(len(vals)) / denom)

    def traces(self, c0: float, c1: float):
        n = self.n_cal
        t0_v, t1_v, s00_v, s01_v, s11_v = [], [], [], [], []
        for th in self._thetas:
            den = c0 * th + c1 * (1.0 - th)
            t0_v.append(np.sum(th / den) / n)
            t1_v.append(np.sum((1.0 - th) / den) / n)
            s00_v.append(np.sum(th**2 / den**2) / n)
            s01_v.append(np.sum(th * (1.0 - th) / den**2) / n)
            s11_v.append(np.sum((1.0 - th) ** 2 / den**2) / n)
        self.rel_spread = max(
            float(np.std(v, ddof=1) / np.sqrt(len(v)) / max(abs(np.mean(v)), 1e-300))
            for v in (t0_v, t1_v, s00_v, s01_v, s11_v)
        )
        return tuple(float(np.mean(v)) for v in (t0_v, t1_v, s00_v, s01_v, s11_v))


def shifted_mc_traces(tau: float, gamma: float, c0: float, c1: float, eps: float,
                      n_cal: int = DEFAULT_N_CAL, n_replicates: int = DEFAULT_REPLICATES,
                      seed: int = 0):
    """One-shot Monte Carlo traces of the shifted pencil
    K = c0 Y0 + c1 Y1 + eps I (exact per replicate, Cholesky based).

    Returns ((T0, T1, S00, S01, S11), relative standard error).  Used to
    verify the deterministic fixed point in the tau*gamma < 1 regime.
    """
    f = int(round(n_cal / gamma))
    n_tr = int(round(tau * n_cal))
    root = np.random.SeedSequence(entropy=(int(seed) & (2**64 - 1), 0x5EED))
    rows = []
    for child in root.spawn(n_replicates):
        rng = np.random.default_rng(child)
        z = rng.normal(0.0, 1.0, (n_cal, f)) / np.sqrt(f)
        z0, z1 = z[:n_tr], z[n_tr:]
        k = c0 * (z0.T @ z0) + c1 * (z1.T @ z1)
        k[np.diag_indices(f)] += eps
        cf = scipy.linalg.cho_factor(k, lower=True, check_finite=False)
        w0 = scipy.linalg.cho_solve(cf, z0.T, check_finite=False)  # K^-1 Z0^T
        w1 = scipy.linalg.cho_solve(cf, z1.T, check_finite=False)
        t0 = float(np.einsum("ij,ji->", z0, w0)) / n_cal
        t1 = float(np.einsum("ij,ji->", z1, w1)) / n_cal
        a00 = z0 @ w0
        a10 = z1 @ w0
        a11 = z1 @ w1
        s00 = float(np.sum(a00 * a00)) / n_cal
        s01 = float(np.sum(a10 * a10)) / n_cal
        s11 = float(np.sum(a11 * a11)) / n_cal
        rows.append((t0, t1, s00, s01, s11))
    arr = np.array(rows)
    mean = arr.mean(axis=0)
    se = arr.std(axis=0, ddof=1) / np.sqrt(len(rows))
    rel = float(np.max(se / np.maximum(np.abs(mean), 1e-300)))
    return tuple(mean.tolist()), rel


def u_closed_form_tau08_gamma5(a: float, b: float, c: float, d: float, n: int) -> float:
    """Closed-form E Tr[(a Y0 + b Y1)(c Y0 + d Y1)^(-1)] at tau = 0.8,
    gamma = 5, where Y0 and Y1 follow Marchenko-Pastur laws of ratios 4
    and 1.  n is the node count (so F = n/5)."""
    f = n / 5.0
    kappa = d / c
    if abs(kappa - 1.0) < 1e-10:
        u0, u1t = 0.16, 0.04  # tau/gamma and (1-tau)/gamma at the equal-weight pencil
    else:
        s = np.sqrt(9.0 + 16.0 * kappa)
        u0 = (s - 5.0) / (10.0 * (kappa - 1.0))
        u1t = (2.0 * kappa + 3.0 - s) / (10.0 * kappa * (kappa - 1.0))
    # u0, u1t are the (1/N)-normalized block traces at unit c; scale back
    return (a * u0 + b * u1t) * 5.0 * f / c


# ---------------------------------------------------------------------------
# The twelve-variable stationarity system
# ---------------------------------------------------------------------------

def _dual_map(x: np.ndarray, lam: float, tau: float, c: float, shifted: bool):
    """Dual order parameters as explicit functions of the primal ones."""
    m0, m1, p0, p1, g0, g1 = x
    g = g0 + g1
    p = p0 + p1
    L = 1.0 - lam * (m0 + m1)
    if shifted:
        c0 = (tau * g + c**2 * g1) / g**2
        c1 = (tau * g - c**2 * g0) / g**2
        mh0 = -(lam * tau * L - c * lam * m0 + c * L) / g
        mh1 = -(lam * tau * L - c * lam * m0) / g
        core = tau * (p + L**2) - 2.0 * c * L * m0 + c**2 * p0
        ph0 = -(core + c**2 * p) / g**2 + 2.0 * c**2 * p * g0 / g**3
        ph1 = -core / g**2 + 2.0 * c**2 * p * g0 / g**3
    else:
        d = 1.0 + 2.0 * g
        c0 = 2.0 * (tau * d + c**2 * (1.0 + 2.0 * g1)) / d**2
        c1 = 2.0 * (tau * d - 2.0 * c**2 * g0) / d**2
        mh0 = -(2.0 * lam * tau * L - 2.0 * c * lam * m0 + 2.0 * c * L) / d
        mh1 = -(2.0 * lam * tau * L - 2.0 * c * lam * m0) / d
        core = tau * (p + L**2) - 2.0 * c * L * m0 + c**2 * p0
        ph0 = -2.0 * (2.0 * (core + c**2 * p) / d**2 - 8.0 * c**2 * p * g0 / d**3)
        ph1 = -2.0 * (2.0 * core / d**2 - 8.0 * c**2 * p * g0 / d**3)
    return c0, c1, mh0, mh1, ph0, ph1


def _residual(x: np.ndarray, lam: float, tau: float, c: float,
              backend, shifted: bool) -> np.ndarray:
    c0, c1, mh0, mh1, ph0, ph1 = _dual_map(x, lam, tau, c, shifted)
    t0, t1, s00, s01, s11 = backend.traces(c0, c1)
    m0, m1, p0, p1, g0, g1 = x
    a0 = mh0**2 - ph0
    a1 = mh1**2 - ph1
    return np.array([
        m0 + mh0 * t0,
        m1 + mh1 * t1,
        g0 - t0,
        g1 - t1,
        p0 - (a0 * s00 + a1 * s01),
        p1 - (a0 * s01 + a1 * s11),
    ])


def _newton(x0: np.ndarray, fun, tol: float = NEWTON_TOL, max_iter: int = 200):
    x = x0.astype(float).copy()
    trace = []
    fx = fun(x)
    norm = float(np.max(np.abs(fx)))
    trace.append(norm)
    for _ in range(max_iter):
        if norm < tol:
            return x
        jac = np.empty((6, 6))
        for j in range(6):
            h = 1e-7 * max(1.0, abs(x[j]))
            xp = x.copy(); xp[j] += h
            xm = x.copy(); xm[j] -= h
            jac[:, j] = (fun(xp) - fun(xm)) / (2.0 * h)
        try:
            step = np.linalg.solve(jac, -fx)
        except np.linalg.LinAlgError:
            step, *_ = np.linalg.lstsq(jac, -fx, rcond=None)
        alpha = 1.0
        for _ in range(40):
            try:
                f_new = fun(x + alpha * step)
                n_new = float(np.max(np.abs(f_new)))
            except SolverDiverged:
                n_new = np.inf
            if n_new < norm:
                break
            alpha *= 0.5
        else:
            raise SolverDiverged("self-loop Newton line search stalled", residuals=trace)
        x = x + alpha * step
        fx = f_new
        norm = n_new
        trace.append(norm)
    if norm < tol:
        return x
    raise SolverDiverged(f"self-loop Newton did not reach {tol}", residuals=trace)


def _init_point(lam: float, gamma: float, tau: float, shifted: bool) -> np.ndarray:
    """c = 0 starting point built from the one-hop saddle at mu = 0."""
    if shifted:
        op = solve_saddle(TheoryParams(lam=lam, mu=0.0, gamma=gamma, tau=tau, r=1e-9))
        m_de = (1.0 - gamma * tau) / (2.0 * tau)
        g = (1.0 - tau) * m_de
        return np.array([tau * op.m, (1.0 - tau) * op.m,
                         tau * op.p, (1.0 - tau) * op.p,
                         tau * g, (1.0 - tau) * g])
    op = solve_saddle(TheoryParams(lam=lam, mu=0.0, gamma=gamma, tau=tau, r=0.0))
    d = 1.0 + 2.0 * op.q
    g0 = d / (2.0 * gamma)
    g1 = (1.0 - tau) * d / (2.0 * tau * gamma)
    return np.array([tau * op.m, (1.0 - tau) * op.m,
                     tau * op.p, (1.0 - tau) * op.p, g0, g1])


def _prediction_from_solution(x: np.ndarray, lam: float, tau: float, c: float,
                              shifted: bool, rel_spread) -> SelfLoopPrediction:
    m0, m1, p0, p1, g0, g1 = x
    p = p0 + p1
    L = 1.0 - lam * (m0 + m1)
    frac_te = 1.0 - tau
    r_test = L**2 + p + (c**2 * p1 - 2.0 * c * L * m1) / frac_te
    if shifted:
        r_train = 0.0
    else:
        d = 1.0 + 2.0 * (g0 + g1)
        num = tau * (L**2 + p) - 2.0 * c * L * m0 + c**2 * p0 - 4.0 * c**2 * p * g0 / d
        r_train = num / (tau * d**2)
    mean_pos = lam * (m0 + m1) + c * m1 / frac_te
    var_pos = p + c**2 * (p1 / frac_te - (m1 / frac_te) ** 2)
    acc = _acc_from_mean_var(mean_pos, var_pos)
    c0, c1, mh0, mh1, ph0, ph1 = _dual_map(x, lam, tau, c, shifted)
    op = SelfLoopOrderParams(m0=m0, m1=m1, p0=p0, p1=p1, g0=g0, g1=g1,
                             m0_hat=mh0, m1_hat=mh1, p0_hat=ph0, p1_hat=ph1,
                             q0_hat=c0, q1_hat=c1)
    return SelfLoopPrediction(r_train=float(r_train), r_test=float(r_test), acc=float(acc),
                              mean_pos=float(mean_pos), var_pos=float(var_pos),
                              order_params=op, estimator_rel_spread=rel_spread)


def selfloop_theory(lam: float, gamma: float, tau: float, c: float, *,
                    n_cal: int = DEFAULT_N_CAL, n_replicates: int = DEFAULT_REPLICATES,
                    seed: int = 0, estimator: str = "auto", verify_mc: bool = False,
                    init: np.ndarray | None = None) -> SelfLoopPrediction:
    """Ridgeless (r -> 0) prediction for the filter A + c*I at mu = 0.

    estimator: 'mc' forces Monte Carlo trace backends, 'deterministic'
    forces the fixed-point equivalents, 'auto' uses Monte Carlo for the
    unshifted regime (tau*gamma > 1) and the fixed point plus an optional
    Monte Carlo verification (verify_mc) in the shifted regime.
    """
    if not (0.0 < tau < 1.0):
        raise InvalidConfig(f"selfloop theory needs 0 < tau < 1, got {tau}")
    if gamma <= 0:
        raise InvalidConfig(f"gamma must be > 0, got {gamma}")
    tg = tau * gamma
    if abs(tg - 1.0) < 1e-9:
        raise InvalidConfig("tau*gamma = 1 sits on the interpolation threshold")
    shifted = tg < 1.0
    if estimator not in ("auto", "mc", "deterministic"):
        raise InvalidConfig(f"unknown estimator {estimator!r}")

    eps = 2.0 * tau if shifted else 0.0
    det_backend = DeterministicTraces(tau, gamma, eps)
    if shifted:
        backend = det_backend
        use_mc_verify = verify_mc or estimator == "mc"
    else:
        backend = (PencilMonteCarlo(tau, gamma, n_cal=n_cal, n_replicates=n_replicates, seed=seed)
                   if estimator in ("auto", "mc") else det_backend)
        use_mc_verify = False

    x0 = _init_point(lam, gamma, tau, shifted) if init is None else np.asarray(init, float)

    def fun(x):
        return _residual(x, lam, tau, c, backend, shifted)

    try:
        x = _newton(x0, fun)
    except SolverDiverged:
        # continuation in c from the reliable c = 0 start
        x = _init_point(lam, gamma, tau, shifted)
        for ck in np.linspace(0.0, c, 9)[1:]:
            x = _newton(x, lambda v: _residual(v, lam, tau, ck, backend, shifted))

    rel = getattr(backend, "rel_spread", None)
    if rel is not None and rel > ESTIMATOR_REL_TOL:
        raise EstimatorNoisy(
            f"trace estimator relative spread {rel:.3g} above {ESTIMATOR_REL_TOL}"
        )

    if shifted and use_mc_verify:
        c0, c1, *_ = _dual_map(x, lam, tau, c, shifted)
        mc_vals, mc_rel = shifted_mc_traces(tau, gamma, c0, c1, eps,
                                            n_cal=n_cal, n_replicates=n_replicates, seed=seed)
        if mc_rel > ESTIMATOR_REL_TOL:
            raise EstimatorNoisy(
                f"shifted-pencil estimator relative spread {mc_rel:.3g} above {ESTIMATOR_REL_TOL}"
            )
        det_vals = det_backend.traces(c0, c1)
        for name, mc_v, det_v in zip(("T0", "T1", "S00", "S01", "S11"), mc_vals, det_vals):
            scale = max(abs(mc_v), abs(det_v), 1e-12)
            if abs(mc_v - det_v) / scale > 10.0 * max(mc_rel, 0.005):
                raise EstimatorNoisy(
                    f"trace {name}: Monte Carlo {mc_v:.6g} vs fixed point {det_v:.6g} "
                    f"disagree beyond estimator tolerance"
                )
        rel = mc_rel

    return _prediction_from_solution(x, lam, tau, c, shifted, rel)
