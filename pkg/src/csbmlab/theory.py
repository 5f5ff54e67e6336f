"""Theoretical train/test risk and accuracy predictions for the one-hop
graph convolution, plus random-matrix formulas for the full-observation
training loss.

The free energy of the beta -> infinity limit, at zero source terms, is

    f(m, p, q, mh, ph, qh) = -tau * ((1 - lam*m)^2 + p) / (2q + 1)
                             + (qh*p + q*ph + 2*m*mh) / 2
                             + mh^2 * B(rh) / (2*qh)
                             - ph * W(rh) / (2*gamma*qh)

with rh = 2*tau*r/qh, W(rh) = 1 - rh*T(rh), T the Marchenko-Pastur
resolvent trace, and B the feature-spike overlap factor.  Its stationary
point is computed exactly: the (p, ph) equations pin qh = 2*tau/(2q+1) and
q*gamma*qh = W, which reduces to one monotone scalar equation for q; m is
then explicit and (p, ph) solve a 2x2 linear system.  Risks follow from

    R_test  = (lam*m* - 1)^2 + p*
    R_train = R_test / (2q* + 1)^2
    ACC     = (1 + erf(lam*m* / sqrt(2 p*))) / 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import erf

from .errors import InterpolationRegion, InvalidConfig, SolverDiverged

RIDGELESS_GUARD = 1e-9   # tau*gamma must exceed 1 by this much for closed forms
SADDLE_TOL = 1e-10       # stationarity residual target


@dataclass(frozen=True)
class TheoryParams:
    """N-free parameter point (lam, mu, gamma, tau, r)."""

    lam: float
    mu: float
    gamma: float
    tau: float
    r: float

    def validate(self) -> "TheoryParams":
        if self.gamma <= 0:
            raise InvalidConfig(f"gamma must be > 0, got {self.gamma}")
        if not (0.0 < self.tau <= 1.0):
            raise InvalidConfig(f"tau must lie in (0, 1], got {self.tau}")
        if self.r < 0:
            raise InvalidConfig(f"r must be >= 0, got {self.r}")
        if self.mu < 0:
            raise InvalidConfig(f"mu must be >= 0, got {self.mu}")
        return self


@dataclass(frozen=True)
class OrderParams:
    m: float
    p: float
    q: float
    m_hat: float
    p_hat: float
    q_hat: float

    def as_array(self) -> np.ndarray:
        return np.array([self.m, self.p, self.q, self.m_hat, self.p_hat, self.q_hat])


@dataclass(frozen=True)
class TheoryPrediction:
    r_train: float
    r_test: float
    acc: float
    mean_pos: float   # mean of test outputs for the +1 class
    var_pos: float    # their variance


# ---------------------------------------------------------------------------
# Marchenko-Pastur resolvent trace and derived factors
# ---------------------------------------------------------------------------

def mp_resolvent_T(r_hat: float, gamma: float) -> float:
    """T(rh) = (1/F) Tr (X^T X + rh I)^(-1) in the proportional limit.

    Equal to (1 - rh - gamma + s) / (2 rh) with
    s = sqrt((1-gamma)^2 + 2 rh (1+gamma) + rh^2), evaluated here in the
    cancellation-free form 2 / (s + gamma - 1 + rh).  The rh -> 0 limit is
    1/(gamma-1) for gamma > 1 and diverges like (1-gamma)/rh for gamma < 1.
    """
    if r_hat < 0:
        raise InvalidConfig(f"r_hat must be >= 0, got {r_hat}")
    if r_hat == 0.0:
        if gamma <= 1.0:
            raise InterpolationRegion(
                f"T(0) diverges for gamma <= 1 (gamma={gamma}); use r_hat > 0"
            )
        return 1.0 / (gamma - 1.0)
    s = np.sqrt((1.0 - gamma) ** 2 + 2.0 * r_hat * (1.0 + gamma) + r_hat**2)
    return 2.0 / (s + gamma - 1.0 + r_hat)


def _mp_T_prime(r_hat: float, gamma: float) -> float:
    if r_hat == 0.0:
        # dT/drh at 0 for gamma > 1: differentiate 2/(s + gamma - 1 + rh)
        sp = (1.0 + gamma) / (gamma - 1.0)
        t0 = 1.0 / (gamma - 1.0)
        return -t0**2 * (sp + 1.0) / 2.0
    s = np.sqrt((1.0 - gamma) ** 2 + 2.0 * r_hat * (1.0 + gamma) + r_hat**2)
    t = 2.0 / (s + gamma - 1.0 + r_hat)
    sp = (1.0 + gamma + r_hat) / s
    return -t**2 * (sp + 1.0) / 2.0


def _w_factor(r_hat: float, gamma: float):
    """W = 1 - rh*T and V = d(rh*W)/drh = W + rh*W'."""
    if r_hat == 0.0:
        return 1.0, 1.0
    t = mp_resolvent_T(r_hat, gamma)
    tp = _mp_T_prime(r_hat, gamma)
    w = 1.0 - r_hat * t
    wp = -(t + r_hat * tp)
    return w, w + r_hat * wp


def _b_factor(r_hat: float, gamma: float, mu: float):
    """B = 1 - (T rh + gamma - 1) / (T^2 mu rh + (gamma-1) T mu + gamma)
    and Be = B + rh * B'."""
    if r_hat == 0.0:
        b = (mu + 1.0) / (gamma + mu)
        return b, b  # Be = B + rh*B' collapses to B at rh = 0
    t = mp_resolvent_T(r_hat, gamma)
    tp = _mp_T_prime(r_hat, gamma)
    n = t * r_hat + gamma - 1.0
    d = t**2 * mu * r_hat + (gamma - 1.0) * t * mu + gamma
    n_p = t + r_hat * tp
    d_p = mu * t**2 + mu * tp * (2.0 * t * r_hat + gamma - 1.0)
    b = 1.0 - n / d
    bp = -(n_p * d - n * d_p) / d**2
    return b, b + r_hat * bp


# ---------------------------------------------------------------------------
# Ridgeless closed forms
# ---------------------------------------------------------------------------

def ridgeless_risks(params: TheoryParams):
    """Closed-form (R_train, R_test) in the r -> 0 limit, valid for
    tau*gamma > 1."""
    p = params.validate()
    tg = p.tau * p.gamma
    if tg <= 1.0 + RIDGELESS_GUARD:
        raise InterpolationRegion(
            f"tau*gamma = {tg:.6g} <= 1: ridgeless closed forms do not apply; "
            "solve the saddle point with r > 0 instead"
        )
    g, lam, mu = p.gamma, p.lam, p.mu
    denom = g + lam**2 * (mu + 1.0) + mu
    r_train = (g + mu) * (tg - 1.0) / (tg * denom)
    r_test = tg * (g + mu) / ((tg - 1.0) * denom)
    return r_train, r_test


# ---------------------------------------------------------------------------
# Saddle point
# ---------------------------------------------------------------------------

def _free_energy(v: np.ndarray, p: TheoryParams) -> float:
    """The scalar free-energy functional; only used for gradient tests."""
    m, pp, q, mh, ph, qh = v
    rh = 2.0 * p.tau * p.r / qh
    w, _ = _w_factor(rh, p.gamma)
    b, _ = _b_factor(rh, p.gamma, p.mu)
    g_tr = -p.tau * ((1.0 - p.lam * m) ** 2 + pp) / (2.0 * q + 1.0)
    coupling = 0.5 * (qh * pp + q * ph + 2.0 * m * mh)
    e_part = mh**2 * b / (2.0 * qh) - ph * w / (2.0 * p.gamma * qh)
    return g_tr + coupling + e_part


def _gradient_terms(op: OrderParams, params: TheoryParams):
    """Summands of each stationarity condition, grouped per equation.

    The gradient is the row-sum; the natural numerical scale of each
    residual is the largest summand magnitude in its row.
    """
    p = params
    m, pp, q, mh, ph, qh = op.as_array()
    rh = 2.0 * p.tau * p.r / qh
    w, v = _w_factor(rh, p.gamma)
    b, be = _b_factor(rh, p.gamma, p.mu)
    d = 2.0 * q + 1.0
    L = 1.0 - p.lam * m
    return [
        (2.0 * p.tau * p.lam * L / d, mh),
        (-p.tau / d, qh / 2.0),
        (2.0 * p.tau * (L**2 + pp) / d**2, ph / 2.0),
        (m, mh * b / qh),
        (q / 2.0, -w / (2.0 * p.gamma * qh)),
        (pp / 2.0, -mh**2 * be / (2.0 * qh**2), ph * v / (2.0 * p.gamma * qh**2)),
    ]


def saddle_gradient(op: OrderParams, params: TheoryParams) -> np.ndarray:
    """Analytic gradient of the free energy in
    (m, p, q, m_hat, p_hat, q_hat) order."""
    return np.array([sum(row) for row in _gradient_terms(op, params)])


def _solve_q(params: TheoryParams):
    """Root of 2*tau*gamma*q/(2q+1) = W(r*(2q+1)).

    Solved in the variable rh = r*(2q+1), where the equation reads
    tau*gamma*(1 - r/rh) = W(rh): the left side increases and the right
    side decreases in rh, so the root is unique.  Returns (q, rh).
    """
    p = params
    tg = p.tau * p.gamma
    if p.r == 0.0:
        if tg <= 1.0 + RIDGELESS_GUARD:
            raise InterpolationRegion(
                f"tau*gamma = {tg:.6g} <= 1 with r = 0: no stationary point; use r > 0"
            )
        q = 1.0 / (2.0 * (tg - 1.0))
        return q, 0.0

    def phi(rh):
        w, _ = _w_factor(rh, p.gamma)
        return tg * (1.0 - p.r / rh) - w

    lo = p.r * (1.0 + 1e-15)
    hi = max(2.0 * p.r, 1.0)
    it = 0
    while phi(hi) <= 0.0:
        hi *= 4.0
        it += 1
        if it > 400:
            raise SolverDiverged("could not bracket the saddle q-equation")
    rh = brentq(phi, lo, hi, xtol=1e-300, rtol=8.881784197001252e-16, maxiter=300)
    q = (rh / p.r - 1.0) / 2.0
    return q, rh


def solve_saddle(params: TheoryParams, init: OrderParams | None = None) -> OrderParams:
    """Stationary point of the free energy.

    The reduction is exact, so ``init`` is accepted for interface
    compatibility but not needed.  The returned point satisfies the six
    stationarity conditions to SADDLE_TOL (relative to the magnitude of the
    order parameters involved).
    """
    p = params.validate()
    if p.r == 0.0 and p.tau * p.gamma <= 1.0 + RIDGELESS_GUARD:
        raise InterpolationRegion(
            "solve_saddle needs r > 0 inside the interpolation region (tau*gamma <= 1)"
        )
    q, rh = _solve_q(p)
    qh = 2.0 * p.tau / (2.0 * q + 1.0)
    w, v = _w_factor(rh, p.gamma)
    b, be = _b_factor(rh, p.gamma, p.mu)
    m = p.lam * b / (1.0 + p.lam**2 * b)
    L = 1.0 - p.lam * m
    mh = -qh * p.lam * L
    tg = p.tau * p.gamma
    den = 1.0 - v / tg
    if den <= 0.0:
        raise SolverDiverged(f"degenerate variance equation: 1 - V/(tau*gamma) = {den:.3e}")
    pp = L**2 * (p.lam**2 * be + v / tg) / den
    ph = -qh**2 * (L**2 + pp) / p.tau
    op = OrderParams(m=m, p=pp, q=q, m_hat=mh, p_hat=ph, q_hat=qh)
    rows = _gradient_terms(op, p)
    resid = np.array([
        abs(sum(row)) / max(1.0, *(abs(t) for t in row)) for row in rows
    ])
    if not np.all(resid < SADDLE_TOL):
        raise SolverDiverged(
            f"stationarity residual {resid.max():.3e} above {SADDLE_TOL}",
            residuals=resid.tolist(),
        )
    return op


def _acc_from_mean_var(mean: float, var: float) -> float:
    if var > 0.0:
        return 0.5 * (1.0 + float(erf(mean / np.sqrt(2.0 * var))))
    if mean > 0.0:
        return 1.0
    if mean < 0.0:
        return 0.0
    return 0.5


def theory_risks(params: TheoryParams, init: OrderParams | None = None) -> TheoryPrediction:
    """Risks and accuracy at the saddle point.

    Test outputs of the +1 class are asymptotically N(lam*m*, p*).
    """
    p = params.validate()
    op = solve_saddle(p, init)
    mean = p.lam * op.m
    r_test = (mean - 1.0) ** 2 + op.p
    r_train = r_test / (2.0 * op.q + 1.0) ** 2
    acc = _acc_from_mean_var(mean, op.p)
    return TheoryPrediction(r_train=r_train, r_test=r_test, acc=acc,
                            mean_pos=mean, var_pos=op.p)


# ---------------------------------------------------------------------------
# Random-matrix training loss at full observation (tau = 1)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RmtQuantities:
    """The five concentrating traces of the full-observation computation."""

    a: float
    b: float
    c: float
    d: float
    q: float
    alpha: float
    mu_rescaled: float


def rmt_resolvent_q(alpha: float, r: float) -> float:
    """Normalized trace q = (1/N) Tr (r I + O O^T)^(-1) for the product
    matrix O of two independent Gaussian factors, aspect ratio alpha = F/N.

    q solves the cubic r^2 q^3 + (alpha-1) r q^2 + alpha r q - alpha = 0;
    the physical (Stieltjes) branch is the largest real positive root.
    """
    if not (0.0 < alpha <= 1.0):
        raise InvalidConfig(f"alpha must lie in (0, 1], got {alpha}")
    if r <= 0:
        raise InvalidConfig("rmt_resolvent_q needs r > 0 (q diverges at r = 0)")
    roots = np.roots([r**2, (alpha - 1.0) * r, alpha * r, -alpha])
    real = roots[np.abs(roots.imag) < 1e-9 * (1.0 + np.abs(roots.real))].real
    pos = real[real > 0]
    if pos.size == 0:
        raise SolverDiverged(f"no positive real resolvent root at alpha={alpha}, r={r}")
    return float(pos.max())


def _rmt_ridgeless_abcdq(alpha: float, r: float):
    """Small-r expansions of the five concentrating quantities."""
    one = 1.0 - alpha
    a = one**2 / r
    b = alpha - alpha**2 * r / one**2
    c = alpha - alpha**2 * r / one**2
    d = 1.0 - alpha * r / one
    q = one / r + alpha**2 / one**2
    return a, b, c, d, q


def rmt_loss_from_traces(vals: RmtQuantities, lam: float, r: float) -> float:
    """Training loss assembled from the concentrating traces."""
    a, b, c, d, q = vals.a, vals.b, vals.c, vals.d, vals.q
    alpha, mu2 = vals.alpha, vals.mu_rescaled**2
    e1 = (
        a * alpha * mu2
        - c * mu2 * (a + (b - 1.0) ** 2)
        + d * (a * mu2 * (c - alpha) - 1.0)
        + alpha * mu2
        + alpha * b**2 * mu2
        - 2.0 * alpha * b * mu2
        + 1.0
    )
    lam2 = lam**2
    frac = lam2 * e1 / (lam2 * q * e1 + a * mu2 * (alpha - c) + 1.0)
    return r * (q - q**2 * frac)


def rmt_full_observation(alpha: float, lam: float, mu_rescaled: float, r: float) -> float:
    """Training loss of the full-observation (tau = 1) one-hop network.

    For r = 0 returns the exact ridgeless limit.  For small r > 0 the loss
    is assembled from the resolvent q (exact at any r) and the ridgeless
    expansions of the remaining traces, so it is a small-r asymptotic.
    """
    if not (0.0 < alpha <= 1.0):
        raise InvalidConfig(f"alpha must lie in (0, 1], got {alpha}")
    if mu_rescaled < 0:
        raise InvalidConfig(f"mu_rescaled must be >= 0, got {mu_rescaled}")
    mu2 = mu_rescaled**2
    if r == 0.0:
        return (1.0 - alpha) * (alpha**2 * mu2 + 1.0) / (
            alpha**2 * (lam**2 + 1.0) * mu2 + alpha * lam**2 + 1.0
        )
    if alpha == 1.0:
        raise InvalidConfig("the small-r trace expansions need alpha < 1; use r = 0 at alpha = 1")
    a, b, c, d, _ = _rmt_ridgeless_abcdq(alpha, r)
    q = rmt_resolvent_q(alpha, r)
    vals = RmtQuantities(a=a, b=b, c=c, d=d, q=q, alpha=alpha, mu_rescaled=mu_rescaled)
    return rmt_loss_from_traces(vals, lam, r)


def rmt_full_observation_csbm(gamma: float, lam: float, mu: float, r: float = 0.0) -> float:
    """Same loss in CSBM parameters: alpha = 1/gamma, mu_rescaled^2 = mu*gamma."""
    if gamma < 1.0:
        raise InvalidConfig(f"full-observation formulas need gamma >= 1, got {gamma}")
    return rmt_full_observation(1.0 / gamma, lam, np.sqrt(mu * gamma), r)


def rmt_two_hop_ridgeless(alpha: float, lam: float) -> float:
    """Ridgeless training loss for the two-hop filter P(A) = A^2 at
    tau = 1, mu = 0."""
    if not (0.0 < alpha <= 1.0):
        raise InvalidConfig(f"alpha must lie in (0, 1], got {alpha}")
    lam2 = lam**2
    return (1.0 - alpha) * (alpha * lam2 + 1.0) / (alpha * (lam2 + 2.0) * lam2 + 1.0)
