"""Exact O(N^2) t-SNE.

The optimizer follows the original reference recipe: early exaggeration,
momentum switch, per-parameter adaptive gains, re-centering each step.
Reductions use ``np.einsum`` rather than BLAS so results do not depend on
the BLAS thread count.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .errors import ConfigError, NumericalFailure

_MIN_GAIN = 0.01
_P_FLOOR = 1e-12


@dataclass
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    early_exaggeration: float = 4.0
    exaggeration_iters: int = 100
    learning_rate: float = 200.0
    momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch: int = 250
    standardize: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.perplexity < 2:
            raise ConfigError(f"perplexity must be >= 2, got {self.perplexity}")
        if self.iterations < 1 or self.learning_rate <= 0:
            raise ConfigError("iterations and learning_rate must be positive")


def squared_distances(x):
    x = np.asarray(x, dtype=np.float64)
    sq = np.einsum("ij,ij->i", x, x)
    d = sq[:, None] + sq[None, :] - 2.0 * np.einsum("ik,jk->ij", x, x)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def _jitter_duplicates(d):
    """Give coincident points a tiny deterministic separation."""
    i, j = np.nonzero(d == 0)
    off = i != j
    if off.any():
        d = d.copy()
        d[i[off], j[off]] = 1e-10 * (1 + np.abs(i[off] - j[off]))
    return d


def _row_entropy(d_row, beta):
    shifted = d_row - d_row.min()
    w = np.exp(-shifted * beta)
    s = w.sum()
    p = w / s
    # natural-log entropy; perplexity = exp(H)
    h = math.log(s) + beta * float(np.dot(shifted, p))
    return h, p


def calibrate_sigmas(d, perplexity, tol=1e-5, max_iter=50):
    """Bisection on each point's Gaussian precision to hit ``perplexity``.

    ``d`` holds squared distances. Returns ``(sigmas, conditional P)``
    where row ``i`` of P is ``p_{j|i}``.
    """
    d = np.asarray(d, dtype=np.float64)
    n = d.shape[0]
    if 3 * perplexity >= n:
        raise ConfigError(f"perplexity {perplexity} too large for {n} points (need 3*perplexity < N)")
    d = _jitter_duplicates(d)
    target = math.log(perplexity)
    betas = np.empty(n)
    cond = np.zeros((n, n))
    for i in range(n):
        row = np.delete(d[i], i)
        beta, lo, hi = 1.0 / max(np.median(row), 1e-300), 0.0, math.inf
        best = None
        for _ in range(max_iter):
            h, p = _row_entropy(row, beta)
            err = abs(math.exp(h) - perplexity)
            if best is None or err < best[0]:
                best = (err, beta, p)
            if err <= tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2.0 if hi == math.inf else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = 0.5 * (beta + lo) if lo > 0 else beta / 2.0
        _, beta, p = best
        betas[i] = beta
        cond[i, np.arange(n) != i] = p
    return np.sqrt(1.0 / (2.0 * betas)), cond


def joint_probabilities(x, perplexity):
    cond = calibrate_sigmas(squared_distances(x), perplexity)[1]
    p = cond + cond.T
    p /= p.sum()
    return p


def _student_kernel(y):
    """Unnormalized Student-t affinities ``1 / (1 + |y_i - y_j|^2)`` with zero diagonal."""
    d = np.subtract.outer(y[:, 0], y[:, 0])
    d *= d
    d1 = np.subtract.outer(y[:, 1], y[:, 1])
    d1 *= d1
    d += d1
    d += 1.0
    np.reciprocal(d, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def _q_matrix(y):
    num = _student_kernel(y)
    return num, num / num.sum()


def kl_divergence(p, q):
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / np.maximum(q[mask], _P_FLOOR))))


class TSNE(BaseEstimator, TransformerMixin):
    """Two-dimensional t-SNE embedding with exact gradients.

    Parameters mirror :class:`TsneConfig`. After ``fit``, ``embedding_``
    holds the coordinates and ``kl_history_`` the KL divergence at the
    first and last iteration.
    """

    def __init__(
        self,
        perplexity=30.0,
        n_iter=1000,
        early_exaggeration=4.0,
        exaggeration_iters=100,
        learning_rate=200.0,
        momentum=0.5,
        final_momentum=0.8,
        momentum_switch=250,
        standardize=True,
        random_state=0,
    ):
        self.perplexity = perplexity
        self.n_iter = n_iter
        self.early_exaggeration = early_exaggeration
        self.exaggeration_iters = exaggeration_iters
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.final_momentum = final_momentum
        self.momentum_switch = momentum_switch
        self.standardize = standardize
        self.random_state = random_state

    @classmethod
    def from_config(cls, config):
        c = asdict(config)
        return cls(
            perplexity=c["perplexity"],
            n_iter=c["iterations"],
            early_exaggeration=c["early_exaggeration"],
            exaggeration_iters=c["exaggeration_iters"],
            learning_rate=c["learning_rate"],
            momentum=c["momentum"],
            final_momentum=c["final_momentum"],
            momentum_switch=c["momentum_switch"],
            standardize=c["standardize"],
            random_state=c["seed"],
        )

    def _prepare(self, X):
        X = check_array(X, dtype=np.float64)
        if X.shape[0] < 10:
            raise ConfigError(f"t-SNE needs at least 10 points, got {X.shape[0]}")
        if self.standardize:
            std = X.std(axis=0)
            X = (X - X.mean(axis=0)) / np.where(std > 0, std, 1.0)
        return X

    def fit(self, X, y=None):
        X = self._prepare(X)
        n = X.shape[0]
        if self.perplexity < 2 or self.n_iter < 1 or self.learning_rate <= 0:
            raise ConfigError("perplexity >= 2, n_iter >= 1 and learning_rate > 0 required")
        p = joint_probabilities(X, self.perplexity)
        p_opt = np.maximum(p * self.early_exaggeration, _P_FLOOR)

        rng = np.random.default_rng(self.random_state)
        y = 1e-4 * rng.standard_normal((n, 2))
        update = np.zeros_like(y)
        gains = np.ones_like(y)
        kl0 = kl_divergence(p, _q_matrix(y)[1])

        for it in range(self.n_iter):
            if it == self.exaggeration_iters:
                p_opt = np.maximum(p, _P_FLOOR)
            num = _student_kernel(y)
            z = num.sum()
            # (p - q) * num with q = num / z
            w = p_opt - num / z
            w *= num
            grad = 4.0 * (w.sum(axis=1)[:, None] * y - np.einsum("ij,jk->ik", w, y))
            if not np.all(np.isfinite(grad)):
                raise NumericalFailure(f"non-finite gradient at iteration {it}", iteration=it)
            mom = self.momentum if it < self.momentum_switch else self.final_momentum
            same_sign = (grad > 0) == (update > 0)
            gains = np.where(same_sign, gains * 0.8, gains + 0.2)
            np.maximum(gains, _MIN_GAIN, out=gains)
            update = mom * update - self.learning_rate * gains * grad
            y = y + update
            y = y - y.mean(axis=0)

        self.embedding_ = y
        self.kl_divergence_ = kl_divergence(p, _q_matrix(y)[1])
        self.kl_history_ = (kl0, self.kl_divergence_)
        self.n_iter_ = self.n_iter
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).embedding_


def run_tsne(X, config=None):
    """Functional entry point: ``N x D`` features to ``N x 2`` coordinates."""
    config = config or TsneConfig()
    return TSNE.from_config(config).fit_transform(X)
