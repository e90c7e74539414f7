"""Nonparametric comparison of models over several settings.

Friedman's test with the Iman-Davenport F correction, the Bonferroni-Dunn
post-hoc comparison against a control, the Wilcoxon signed-rank test (normal
approximation) and the counting sign test.
"""
from __future__ import annotations

import math
from statistics import NormalDist
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .special import f_sf, normal_cdf, normal_sf


class DegenerateStatisticError(ArithmeticError):
    pass


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    significant: bool
    alpha: float
    details: dict = field(default_factory=dict, compare=False)

    __test__ = False  # keep pytest from collecting this class


@dataclass(frozen=True)
class RankMatrix:
    """Rows are settings (e.g. rule combinations), columns the compared
    models. The best model in a row holds the highest rank ``M``."""

    ranks: np.ndarray
    row_labels: tuple = ()
    col_labels: tuple = ()

    def __post_init__(self):
        r = np.array(self.ranks, dtype=np.float64)
        if r.ndim != 2:
            raise ValueError("rank matrix must be 2-D")
        object.__setattr__(self, "ranks", r)
        object.__setattr__(self, "row_labels", tuple(self.row_labels) or tuple(range(r.shape[0])))
        object.__setattr__(self, "col_labels", tuple(self.col_labels) or tuple(range(r.shape[1])))

    @property
    def shape(self):
        return self.ranks.shape

    def mean_ranks(self) -> np.ndarray:
        return self.ranks.mean(axis=0)


def average_ranks(values) -> np.ndarray:
    """Ranks 1..n in ascending order of ``values``; tied values share the
    mean of the ranks they span."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _as_ranks(ranks) -> np.ndarray:
    return ranks.ranks if isinstance(ranks, RankMatrix) else np.asarray(ranks, dtype=np.float64)


def friedman_chi2(ranks) -> float:
    r = _as_ranks(ranks)
    n, m = r.shape
    mean_ranks = r.mean(axis=0)
    return 12.0 * n / (m * (m + 1)) * (np.sum(mean_ranks ** 2) - m * (m + 1) ** 2 / 4.0)


def friedman_iman_davenport(ranks, alpha: float = 0.1) -> TestResult:
    """Iman-Davenport ``F_F`` with ``(M-1, (M-1)(N-1))`` degrees of freedom."""
    r = _as_ranks(ranks)
    n, m = r.shape
    if n < 2 or m < 3:
        raise ValueError(f"need at least 2 rows and 3 columns, got {n}x{m}")
    chi2 = friedman_chi2(r)
    # cancel round-off in the sum of squares for the no-disagreement case
    if abs(chi2) < 1e-12 * n * m:
        chi2 = 0.0
    denom = n * (m - 1) - chi2
    if abs(denom) <= 1e-12 * n * m:
        raise DegenerateStatisticError(
            f"Iman-Davenport denominator vanishes (chi2_F={chi2:g} = N(M-1)={n * (m - 1)}): "
            "every row ranks the columns identically"
        )
    ff = (n - 1) * chi2 / denom
    d1, d2 = m - 1, (m - 1) * (n - 1)
    p = f_sf(ff, d1, d2)
    return TestResult(ff, p, p < alpha, alpha,
                      {"chi2_F": chi2, "df": (d1, d2), "mean_ranks": r.mean(axis=0).tolist()})


def dunn_z(r_best: float, r_other: float, n_models: int, n_settings: int) -> float:
    return (r_best - r_other) / math.sqrt(n_models * (n_models + 1) / (6.0 * n_settings))


def bonferroni_dunn(ranks, best_index: int, alpha: float = 0.1) -> list[TestResult]:
    """Compare every column with ``best_index``; the per-comparison level is
    ``alpha / (M - 1)``. ``statistic`` holds ``|z|``; p-values are two-sided."""
    r = _as_ranks(ranks)
    n, m = r.shape
    if not 0 <= best_index < m:
        raise IndexError(f"best_index {best_index} outside 0..{m - 1}")
    mean_ranks = r.mean(axis=0)
    level = alpha / (m - 1)
    out = []
    for j in range(m):
        if j == best_index:
            continue
        z = dunn_z(mean_ranks[best_index], mean_ranks[j], m, n)
        p = min(1.0, 2.0 * normal_sf(abs(z)))
        out.append(TestResult(abs(z), p, p < level, alpha,
                              {"column": j, "z": z, "level": level}))
    return out


def wilcoxon_signed_rank(pairs, alpha: float = 0.1, two_sided: bool = False) -> TestResult:
    """Normal-approximation Wilcoxon test on paired values ``(a_i, b_i)``.

    Zero differences stay in the ranking and their ranks are split evenly
    between ``R+`` and ``R-``. ``T = min(R+, R-)``, so ``z <= 0``.
    """
    pairs = np.asarray(pairs, dtype=np.float64)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise ValueError("expected a sequence of (a, b) pairs")
    n = pairs.shape[0]
    if n < 5:
        raise ValueError(f"{n} pairs is too few for the normal approximation; an exact test is needed")
    d = pairs[:, 0] - pairs[:, 1]
    r = average_ranks(np.abs(d))
    half_zero = 0.5 * r[d == 0].sum()
    r_plus = float(r[d > 0].sum() + half_zero)
    r_minus = float(r[d < 0].sum() + half_zero)
    t = min(r_plus, r_minus)
    z = (t - n * (n + 1) / 4.0) / math.sqrt(n * (n + 1) * (2 * n + 1) / 24.0)
    p = normal_cdf(z)
    if two_sided:
        p = min(1.0, 2.0 * p)
    return TestResult(z, p, p < alpha, alpha,
                      {"R+": r_plus, "R-": r_minus, "T": t, "n": n, "two_sided": two_sided})


SIGN_SPREADS = ("sqrt_half_n", "half_sqrt_n")


def sign_test_threshold(n: int, z_crit: float = 1.96, spread: str = "sqrt_half_n") -> float:
    """Win count to beat: ``N/2 + z*sqrt(N/2)``, or ``N/2 + z*sqrt(N)/2``
    with ``spread="half_sqrt_n"`` (the binomial standard deviation)."""
    if spread == "sqrt_half_n":
        return n / 2.0 + z_crit * math.sqrt(n / 2.0)
    if spread == "half_sqrt_n":
        return n / 2.0 + z_crit * math.sqrt(n) / 2.0
    raise ValueError(f"spread must be one of {SIGN_SPREADS}")


def sign_test(wins: int, ties: int, losses: int, alpha: float = 0.05,
              spread: str = "sqrt_half_n") -> TestResult:
    """One-tailed counting sign test; ties count towards ``N`` but not wins.

    ``significant`` follows the threshold rule; ``p_value`` is the exact
    binomial tail ``P(X >= wins)`` for ``X ~ Bin(N, 1/2)``, for reference.
    """
    n = wins + ties + losses
    if min(wins, ties, losses) < 0 or n < 1:
        raise ValueError("counts must be non-negative with a positive total")
    z_crit = 1.96 if alpha == 0.05 else _normal_quantile(1.0 - alpha / 2.0)
    threshold = sign_test_threshold(n, z_crit, spread)
    p = sum(math.comb(n, k) for k in range(wins, n + 1)) / 2.0 ** n
    return TestResult(float(wins), p, wins > threshold, alpha,
                      {"n": n, "threshold": threshold, "wins": wins, "ties": ties, "losses": losses})


def _normal_quantile(q: float) -> float:
    return NormalDist().inv_cdf(q)


def win_tie_loss(a: Sequence[float], b: Sequence[float], tol: float = 0.0) -> tuple[int, int, int]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = a - b
    return int(np.sum(d > tol)), int(np.sum(np.abs(d) <= tol)), int(np.sum(d < -tol))
