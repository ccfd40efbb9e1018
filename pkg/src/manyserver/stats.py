"""Two-sample distances and convergence tables."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import kolmogorov

TABLE_HEADER = ("t", "n", "replications", "ks_distance", "ks_pvalue", "w1",
                "mean", "variance", "mean_ci", "variance_ci")


def _sample(a) -> np.ndarray:
    a = np.asarray(getattr(a, "values", a), dtype=float).ravel()
    if a.size == 0:
        raise ValueError("sample is empty")
    if not np.all(np.isfinite(a)):
        raise ValueError("sample has non-finite entries")
    return a


@dataclass(frozen=True)
class Sample:
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "values", _sample(self.values))

    def __len__(self):
        return len(self.values)


class KSResult(NamedTuple):
    statistic: float
    pvalue: float


def ks_two_sample(a, b) -> KSResult:
    """Two-sample Kolmogorov-Smirnov distance and asymptotic p-value.

    The sup of ``|F_a - F_b|`` is attained at a sample point, so both ECDFs
    are evaluated on the merged sorted support. The p-value is the
    Kolmogorov survival function at ``sqrt(m n / (m + n)) * D``.
    """
    x, y = np.sort(_sample(a)), np.sort(_sample(b))
    grid = np.concatenate([x, y])
    fx = np.searchsorted(x, grid, side="right") / x.size
    fy = np.searchsorted(y, grid, side="right") / y.size
    d = float(np.max(np.abs(fx - fy)))
    en = x.size * y.size / (x.size + y.size)
    return KSResult(d, float(kolmogorov(math.sqrt(en) * d)))


def wasserstein1(a, b) -> float:
    """W1 distance between empirical laws.

    Equal sizes: mean absolute difference of order statistics. Unequal sizes:
    the exact integral of ``|F_a - F_b|``.
    """
    x, y = np.sort(_sample(a)), np.sort(_sample(b))
    if x.size == y.size:
        return float(np.mean(np.abs(x - y)))
    grid = np.sort(np.concatenate([x, y]))
    fx = np.searchsorted(x, grid[:-1], side="right") / x.size
    fy = np.searchsorted(y, grid[:-1], side="right") / y.size
    return float(np.sum(np.abs(fx - fy) * np.diff(grid)))


class Summary(NamedTuple):
    size: int
    mean: float
    variance: float
    ci_half_width: float

    @property
    def variance_defined(self) -> bool:
        return self.size >= 2


def summarize(a, z: float = 1.959963984540054) -> Summary:
    """Mean, unbiased variance and a normal-approximation 95% CI half-width for the mean.

    With fewer than two values variance and CI are NaN.
    """
    x = _sample(a)
    if x.size < 2:
        return Summary(x.size, float(x.mean()), math.nan, math.nan)
    var = float(np.var(x, ddof=1))
    return Summary(x.size, float(x.mean()), var, z * math.sqrt(var / x.size))


def _variance_ci(var: float, size: int, z: float = 1.959963984540054) -> float:
    # normal-theory approximation, sd(s^2) ~ s^2 sqrt(2/(n-1))
    return z * var * math.sqrt(2.0 / (size - 1)) if size >= 2 else math.nan


class TableRow(NamedTuple):
    t: float
    n: int
    replications: int
    ks_distance: float
    ks_pvalue: float
    w1: float
    mean: float
    variance: float
    mean_ci: float
    variance_ci: float


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)

    def ks_distances(self) -> np.ndarray:
        return np.array([r.ks_distance for r in self.rows])

    def ks_nonincreasing(self, slack: float = 0.0) -> bool:
        d = self.ks_distances()
        return bool(np.all(np.diff(d) <= slack))

    def extend(self, other: ConvergenceTable) -> None:
        self.rows.extend(other.rows)

    def as_rows(self):
        return [tuple(r) for r in self.rows]


def convergence_table(marginals, reference, t: float = math.nan) -> ConvergenceTable:
    """One row per ladder point comparing its sample with ``reference``.

    ``marginals`` maps n to a sample (or is a sequence of ``(n, sample)``).
    Rows come out sorted by n. Whether the KS distance decreases is left to
    :meth:`ConvergenceTable.ks_nonincreasing`; nothing is enforced.
    """
    items = sorted(dict(marginals).items())
    if not items:
        raise ValueError("convergence table needs at least one ladder point")
    ref = _sample(reference)
    rows = []
    for n, sample in items:
        x = _sample(sample)
        ks = ks_two_sample(x, ref)
        s = summarize(x)
        rows.append(TableRow(float(t), int(n), x.size, ks.statistic, ks.pvalue, wasserstein1(x, ref),
                             s.mean, s.variance, s.ci_half_width, _variance_ci(s.variance, s.size)))
    return ConvergenceTable(rows)
