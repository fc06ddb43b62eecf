"""Likelihood-ratio tests on count tables."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from scipy.special import gammaincc


def chi2_sf(x: float, dof: int) -> float:
    """Upper tail of the chi-square distribution, Q(dof/2, x/2)."""
    if dof <= 0:
        return 1.0
    if x <= 0:
        return 1.0
    return float(gammaincc(dof / 2.0, x / 2.0))


@dataclass(frozen=True)
class GTest:
    statistic: float
    dof: int
    pvalue: float


def g_test_homogeneity(rows: Sequence[Sequence[float]]) -> GTest:
    """G-test that every row is drawn from one common multinomial.

    Expected counts come from the pooled margins; all-zero columns are
    dropped before counting degrees of freedom.
    """
    rows = [list(r) for r in rows if sum(r) > 0]
    if len(rows) < 2:
        return GTest(0.0, 0, 1.0)
    ncol = len(rows[0])
    col = [sum(r[j] for r in rows) for j in range(ncol)]
    keep = [j for j in range(ncol) if col[j] > 0]
    total = sum(col)
    g = 0.0
    for r in rows:
        rs = sum(r)
        for j in keep:
            o = r[j]
            if o > 0:
                g += o * math.log(o * total / (rs * col[j]))
    g = max(2.0 * g, 0.0)
    dof = (len(rows) - 1) * (len(keep) - 1)
    return GTest(g, dof, chi2_sf(g, dof) if dof else 1.0)


def bonferroni(p: float, m: int) -> float:
    return min(1.0, p * max(m, 1))


def false_positive_bound(alpha: float, m: int) -> float:
    """alpha plus three binomial standard errors for m independent level-alpha tests."""
    if m <= 0:
        return 1.0
    return alpha + 3.0 * math.sqrt(alpha * (1.0 - alpha) / m)


def two_proportion_test(x1: int, n1: int, x2: int, n2: int) -> tuple[float, float]:
    """One-sided pooled z-test of H1: x1/n1 < x2/n2. Returns (z, p)."""
    p1, p2 = x1 / n1, x2 / n2
    pooled = (x1 + x2) / (n1 + n2)
    se = math.sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2))
    if se == 0:
        return 0.0, 1.0 if p1 >= p2 else 0.0
    z = (p1 - p2) / se
    return z, 0.5 * math.erfc(-z / math.sqrt(2))
