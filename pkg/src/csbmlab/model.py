"""Contextual stochastic block model: labels, graphs, features, splits.

All sampling is driven by ``numpy.random.Generator`` streams derived from a
64-bit master seed, so a dataset is a pure function of (config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidConfig

ENSEMBLES = (
    "binary_symmetric",
    "binary_nonsymmetric",
    "gaussian_symmetric",
    "gaussian_nonsymmetric",
)

# short aliases accepted by the CLI
ENSEMBLE_ALIASES = {
    "bs": "binary_symmetric",
    "bn": "binary_nonsymmetric",
    "gs": "gaussian_symmetric",
    "gn": "gaussian_nonsymmetric",
}


def canonical_ensemble(name: str) -> str:
    key = name.strip().lower()
    key = ENSEMBLE_ALIASES.get(key, key)
    if key not in ENSEMBLES:
        raise InvalidConfig(f"unknown ensemble {name!r}; choose from {ENSEMBLES} or {tuple(ENSEMBLE_ALIASES)}")
    return key


@dataclass(frozen=True)
class CsbmConfig:
    """Scalar parameters of one CSBM instance.

    n: number of nodes (even). f: feature dimension, n / f = gamma.
    lam: graph SNR, sign sets homophily. mu: feature SNR >= 0.
    d: average degree (binary ensembles). tau: train label ratio in (0, 1].
    r: ridge strength >= 0 applied by the fitting step.
    filter_coeffs: hop weights (c_0, ..., c_K) of the polynomial graph filter;
    (0, 1) is the plain one-hop convolution, (c, 1) adds a self-loop c*I.
    """

    n: int
    f: int
    lam: float
    mu: float
    d: float
    tau: float
    r: float
    ensemble: str = "binary_symmetric"
    filter_coeffs: tuple = (0.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ensemble", canonical_ensemble(self.ensemble))
        object.__setattr__(self, "filter_coeffs", tuple(float(c) for c in self.filter_coeffs))

    @property
    def gamma(self) -> float:
        return self.n / self.f

    @property
    def c_in(self) -> float:
        return self.d + np.sqrt(self.d) * self.lam

    @property
    def c_out(self) -> float:
        return self.d - np.sqrt(self.d) * self.lam

    def validate(self) -> "CsbmConfig":
        if self.n <= 0 or self.n % 2 != 0:
            raise InvalidConfig(f"n must be positive and even, got {self.n}")
        if self.f <= 0:
            raise InvalidConfig(f"f must be positive, got {self.f}")
        if self.mu < 0:
            raise InvalidConfig(f"mu must be >= 0, got {self.mu}")
        if not (0.0 < self.tau <= 1.0):
            raise InvalidConfig(f"tau must lie in (0, 1], got {self.tau}")
        if self.r < 0:
            raise InvalidConfig(f"r must be >= 0, got {self.r}")
        ens = self.ensemble
        if ens.startswith("binary"):
            if self.d <= 0 or self.d > self.n:
                raise InvalidConfig(f"d must lie in (0, n], got {self.d}")
            for name, c in (("c_in", self.c_in), ("c_out", self.c_out)):
                if not (0.0 <= c <= self.n):
                    raise InvalidConfig(
                        f"{name} = {c:.6g} outside [0, {self.n}]; "
                        f"check d={self.d}, lambda={self.lam}"
                    )
        if len(self.filter_coeffs) < 1:
            raise InvalidConfig("filter_coeffs must contain at least c_0")
        return self

    def with_overrides(self, **kwargs) -> "CsbmConfig":
        return replace(self, **kwargs).validate()


@dataclass(frozen=True)
class TrainTestSplit:
    train_mask: np.ndarray  # boolean (n,)

    @property
    def test_mask(self) -> np.ndarray:
        return ~self.train_mask

    @property
    def m_train(self) -> int:
        return int(self.train_mask.sum())

    @property
    def m_test(self) -> int:
        return int((~self.train_mask).sum())


@dataclass(frozen=True)
class Dataset:
    """One sampled CSBM instance plus its train/test split."""

    config: CsbmConfig
    y: np.ndarray            # (n,) labels +-1
    adjacency: np.ndarray    # (n, n) scaled adjacency
    x: np.ndarray            # (n, f) features
    u: np.ndarray            # (f,) hidden spike, kept for diagnostics
    split: TrainTestSplit = field(repr=False)


def generate_labels(n: int) -> np.ndarray:
    """Canonical balanced labels: +1 for the first n/2 nodes, -1 after."""
    if n < 2 or n % 2 != 0:
        raise InvalidConfig(f"label count must be even and >= 2, got {n}")
    y = np.ones(n)
    y[n // 2:] = -1.0
    return y


def _rng_children(seed: int, trial: int = 0):
    """Three independent substreams (adjacency, features, split) for a trial."""
    root = np.random.SeedSequence(entropy=(int(seed) & (2**64 - 1), int(trial)))
    return [np.random.default_rng(s) for s in root.spawn(3)]


def sample_adjacency(cfg: CsbmConfig, y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw a scaled adjacency matrix from the configured ensemble.

    Binary kinds are Bernoulli with rate c_in/n within class and c_out/n
    across classes, divided by sqrt(d). Gaussian kinds are (lam/n) y y^T plus
    noise with entry variance 1/n (independent entries for the nonsymmetric
    kind, GOE-type for the symmetric kind).
    """
    cfg.validate()
    n = cfg.n
    if y.shape != (n,):
        raise InvalidConfig(f"labels have shape {y.shape}, expected ({n},)")
    kind = canonical_ensemble(cfg.ensemble)

    if kind.startswith("binary"):
        same = y[:, None] == y[None, :]
        p = np.where(same, cfg.c_in / n, cfg.c_out / n)
        if kind == "binary_symmetric":
            draw = rng.random((n, n))
            upper = np.triu(draw < p, k=1)
            a = upper | upper.T
        else:
            # directed: every entry independent, diagonal included
            a = rng.random((n, n)) < p
        return a.astype(np.float64) / np.sqrt(cfg.d)

    spike = (cfg.lam / n) * np.outer(y, y)
    if kind == "gaussian_nonsymmetric":
        noise = rng.normal(0.0, 1.0, (n, n)) / np.sqrt(n)
    else:
        g = rng.normal(0.0, 1.0, (n, n))
        noise = (g + g.T) / np.sqrt(2.0 * n)  # off-diag var 1/n, diag 2/n
    return spike + noise


def sample_features(cfg: CsbmConfig, y: np.ndarray, rng: np.random.Generator):
    """Spiked covariance features X = sqrt(mu/n) y u^T + noise.

    u and the noise rows are i.i.d. N(0, I_f / f). Returns (x, u).
    """
    cfg.validate()
    n, f = cfg.n, cfg.f
    u = rng.normal(0.0, 1.0, f) / np.sqrt(f)
    x = rng.normal(0.0, 1.0, (n, f)) / np.sqrt(f)
    if cfg.mu > 0:
        x += np.sqrt(cfg.mu / n) * np.outer(y, u)
    return x, u


def sample_split(n: int, tau: float, y: np.ndarray, rng: np.random.Generator) -> TrainTestSplit:
    """Uniform train sample of round(tau*n) nodes, balanced per class.

    When the train count is odd the extra node goes to the +1 class.
    """
    if not (0.0 < tau <= 1.0):
        raise InvalidConfig(f"tau must lie in (0, 1], got {tau}")
    m = int(round(tau * n))
    m = max(1, min(n, m))
    m_plus = (m + 1) // 2
    m_minus = m // 2
    mask = np.zeros(n, dtype=bool)
    for cls, m_cls in ((1.0, m_plus), (-1.0, m_minus)):
        idx = np.flatnonzero(y == cls)
        if m_cls > idx.size:
            raise InvalidConfig(f"cannot draw {m_cls} train nodes from class {cls:+.0f} of size {idx.size}")
        chosen = rng.choice(idx, size=m_cls, replace=False)
        mask[chosen] = True
    return TrainTestSplit(train_mask=mask)


def make_dataset(cfg: CsbmConfig, trial: int = 0) -> Dataset:
    """Sample a full dataset reproducibly from (config, seed, trial index)."""
    cfg.validate()
    rng_a, rng_x, rng_s = _rng_children(cfg.seed, trial)
    y = generate_labels(cfg.n)
    a = sample_adjacency(cfg, y, rng_a)
    x, u = sample_features(cfg, y, rng_x)
    split = sample_split(cfg.n, cfg.tau, y, rng_s)
    return Dataset(config=cfg, y=y, adjacency=a, x=x, u=u, split=split)
