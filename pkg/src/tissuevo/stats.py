"""Nonparametric tests and effect sizes for region-pair comparisons."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import rankdata

from .errors import DegenerateSample, EmptySample, InvalidFamily, TooSmall

CLIFF_BANDS = ((0.147, "negligible"), (0.33, "small"), (0.474, "medium"))

# exact-test limits: enumeration stays well below 1e6 states
MWU_EXACT_MAX = 10
WILCOXON_EXACT_MAX = 20


@dataclass
class ComparisonResult:
    test_id: str
    roi_a: str
    roi_b: str
    feature: str
    family_size: int
    statistic: float
    p_raw: float
    p_corrected: float
    cliffs_delta: float
    effect_band: str
    n1: int
    n2: int

    def as_row(self):
        return [
            self.test_id,
            self.roi_a,
            self.roi_b,
            self.feature,
            self.family_size,
            float(self.statistic),
            float(self.p_raw),
            float(self.p_corrected),
            float(self.cliffs_delta),
            self.effect_band,
            self.n1,
            self.n2,
        ]


STATS_HEADER = [
    "test_id", "roi_a", "roi_b", "feature", "family_size", "stat",
    "p_raw", "p_corr", "delta", "band", "n1", "n2",
]


def _sample(x, name="x"):
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise EmptySample(f"{name} is empty")
    return x


# --------------------------------------------------------------------------- Shapiro-Wilk

# Royston (1995) AS R94 polynomial coefficients.
_G = (-2.273, 0.459)
_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_C3 = (0.5440, -0.39978, 0.025054, -6.714e-4)
_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_C6 = (-0.4803, -0.082676, 0.0030302)


def _poly(coef, x):
    return sum(c * x**k for k, c in enumerate(coef))


def _sw_coefficients(n):
    """Half of the antisymmetric weight vector, largest first."""
    half = n // 2
    if n == 3:
        return np.array([math.sqrt(0.5)])
    m = -ndtri((np.arange(1, half + 1) - 0.375) / (n + 0.25))
    summ2 = 2.0 * np.sum(m * m)
    ssumm2 = math.sqrt(summ2)
    rsn = 1.0 / math.sqrt(n)
    a = m / ssumm2
    a1 = _poly(_C1, rsn) + m[0] / ssumm2
    if n > 5:
        a2 = _poly(_C2, rsn) + m[1] / ssumm2
        fac = math.sqrt((summ2 - 2 * m[0] ** 2 - 2 * m[1] ** 2) / (1 - 2 * a1**2 - 2 * a2**2))
        a = m / fac
        a[0], a[1] = a1, a2
    else:
        fac = math.sqrt((summ2 - 2 * m[0] ** 2) / (1 - 2 * a1**2))
        a = m / fac
        a[0] = a1
    return a


def shapiro_wilk(x):
    """Shapiro-Wilk W and its p-value (Royston's approximation).

    Raises TooSmall for n < 3 and DegenerateSample for a constant sample.
    """
    x = np.sort(np.asarray(x, dtype=np.float64).ravel())
    n = x.size
    if n < 3:
        raise TooSmall(f"Shapiro-Wilk needs n >= 3, got {n}")
    if n > 5000:
        raise TooSmall(f"Shapiro-Wilk approximation valid for n <= 5000, got {n}")
    if x[-1] - x[0] < 1e-19 * max(1.0, abs(x[0])):
        raise DegenerateSample("all values are equal")

    half = _sw_coefficients(n)
    a = np.zeros(n)
    a[: half.size] = -half
    a[n - half.size :] = half[::-1]
    xs = (x - x.mean()) / (x[-1] - x[0])
    w = float(np.dot(a, xs) ** 2 / (np.dot(a, a) * np.dot(xs, xs)))
    w = min(w, 1.0)

    if n == 3:
        p = (6.0 / math.pi) * (math.asin(math.sqrt(w)) - math.pi / 3.0)
        return w, min(max(p, 0.0), 1.0)
    y = math.log1p(-w) if w < 1.0 else -math.inf
    if n <= 11:
        gamma = _poly(_G, n)
        if y >= gamma:
            return w, 1e-99
        y = -math.log(gamma - y)
        mu = _poly(_C3, n)
        sigma = math.exp(_poly(_C4, n))
    else:
        ln = math.log(n)
        mu = _poly(_C5, ln)
        sigma = math.exp(_poly(_C6, ln))
    if y == -math.inf:
        return w, 1.0
    return w, float(ndtr(-(y - mu) / sigma))


# --------------------------------------------------------------------------- Mann-Whitney


def _u_distribution(n, m):
    """Number of rank arrangements giving each U in 0..n*m (no ties)."""
    # f[i][j] = counts for sizes (i, j); recurrence f(i,j,u) = f(i-1,j,u-j) + f(i,j-1,u)
    prev = [np.ones(1, dtype=object) for _ in range(m + 1)]
    for i in range(1, n + 1):
        cur = [np.zeros(1, dtype=object)]
        cur[0] = np.ones(1, dtype=object)
        for j in range(1, m + 1):
            size = i * j + 1
            dist = np.zeros(size, dtype=object)
            a = prev[j]  # (i-1, j): shifted by j
            dist[j : j + a.size] += a
            b = cur[j - 1]  # (i, j-1)
            dist[: b.size] += b
            cur.append(dist)
        prev = cur
    return prev[m]


def _two_sided_from_counts(counts, stat_index):
    total = sum(counts)
    lower = sum(counts[: stat_index + 1])
    upper = sum(counts[stat_index:])
    return min(1.0, 2 * min(lower, upper) / total)


def mann_whitney_u(x, y, exact_max=MWU_EXACT_MAX):
    """U statistic of ``x`` and its two-sided p-value.

    Exact when both samples are no larger than ``exact_max`` and there are
    no ties; otherwise normal approximation with tie-corrected variance and
    a 0.5 continuity correction.
    """
    x, y = _sample(x, "x"), _sample(y, "y")
    n, m = x.size, y.size
    pooled = np.concatenate([x, y])
    ranks = rankdata(pooled)
    u = float(ranks[:n].sum() - n * (n + 1) / 2.0)
    _, tie_counts = np.unique(pooled, return_counts=True)
    has_ties = bool((tie_counts > 1).any())

    if max(n, m) <= exact_max and not has_ties:
        counts = list(_u_distribution(n, m))
        return u, _two_sided_from_counts(counts, int(round(u)))

    big_n = n + m
    tie_term = float(np.sum(tie_counts.astype(np.float64) ** 3 - tie_counts))
    var = n * m / 12.0 * ((big_n + 1) - tie_term / (big_n * (big_n - 1))) if big_n > 1 else 0.0
    if var <= 0:
        return u, 1.0
    dev = max(abs(u - n * m / 2.0) - 0.5, 0.0)
    p = 2.0 * float(ndtr(-dev / math.sqrt(var)))
    return u, min(max(p, 0.0), 1.0)


# --------------------------------------------------------------------------- Bonferroni


def bonferroni(p_values, family_size):
    if family_size < 1:
        raise InvalidFamily(f"family size must be >= 1, got {family_size}")
    p_values = list(p_values)
    if len(p_values) > family_size:
        raise InvalidFamily(f"{len(p_values)} p-values exceed family size {family_size}")
    return [min(1.0, family_size * float(p)) for p in p_values]


# --------------------------------------------------------------------------- Cliff's delta


def cliffs_band(delta):
    mag = abs(delta)
    for cut, name in CLIFF_BANDS:
        if mag < cut:
            return name
    return "large"


def cliffs_delta(x, y):
    """Dominance effect size ``(#{x>y} - #{x<y}) / (n m)`` and its band."""
    x, y = _sample(x, "x"), _sample(y, "y")
    ys = np.sort(y)
    less = np.searchsorted(ys, x, side="left").sum()  # y_j < x_i
    greater = (ys.size - np.searchsorted(ys, x, side="right")).sum()  # y_j > x_i
    delta = float(int(less) - int(greater)) / (x.size * ys.size)
    return delta, cliffs_band(delta)


# --------------------------------------------------------------------------- Wilcoxon


def _signed_rank_distribution(n):
    """Counts of sign patterns giving each positive-rank sum 0..n(n+1)/2."""
    dist = [1]
    for r in range(1, n + 1):
        new = dist + [0] * r
        for s, c in enumerate(dist):
            new[s + r] += c
        dist = new
    return dist


def wilcoxon_signed_rank(x, mu0=0.0, zero_method="wilcox", exact_max=WILCOXON_EXACT_MAX):
    """One-sample signed-rank test of ``x`` against ``mu0``.

    ``zero_method="wilcox"`` drops zero differences; ``"pratt"`` ranks them
    and then discards their ranks. Returns ``(W+, two-sided p)``.
    """
    d = _sample(x) - float(mu0)
    nonzero = d != 0
    if not nonzero.any():
        raise DegenerateSample("all values equal the reference")
    if zero_method == "wilcox":
        d = d[nonzero]
        ranks = rankdata(np.abs(d))
    elif zero_method == "pratt":
        ranks = rankdata(np.abs(d))[nonzero]
        d = d[nonzero]
    else:
        raise ValueError(f"unknown zero_method {zero_method!r}")
    n = d.size
    w = float(ranks[d > 0].sum())
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    has_ties = bool((tie_counts > 1).any())

    if n <= exact_max and not has_ties and zero_method == "wilcox":
        return w, _two_sided_from_counts(_signed_rank_distribution(n), int(round(w)))

    mean = ranks.sum() / 2.0
    var = float(np.sum(ranks**2)) / 4.0
    if var <= 0:
        return w, 1.0
    dev = max(abs(w - mean) - 0.5, 0.0)
    p = 2.0 * float(ndtr(-dev / math.sqrt(var)))
    return w, min(max(p, 0.0), 1.0)


# --------------------------------------------------------------------------- families


def compare_groups(test_id, roi_a, roi_b, features, a_values, b_values, family_size=None):
    """Mann-Whitney + Cliff's delta for each feature, Bonferroni within the family.

    ``a_values`` / ``b_values`` map feature name -> sample.
    """
    family_size = family_size or len(features)
    raw = []
    for name in features:
        u, p = mann_whitney_u(a_values[name], b_values[name])
        delta, band = cliffs_delta(a_values[name], b_values[name])
        raw.append((name, u, p, delta, band))
    corrected = bonferroni([r[2] for r in raw], family_size)
    return [
        ComparisonResult(
            test_id, roi_a, roi_b, name, family_size, u, p, pc, delta, band,
            len(a_values[name]), len(b_values[name]),
        )
        for (name, u, p, delta, band), pc in zip(raw, corrected)
    ]
