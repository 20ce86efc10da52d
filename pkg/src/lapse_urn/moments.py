"""Streaming moment accumulators with pairwise merge.

The ensemble engine reduces replicate chunks with these accumulators.  Both
classes support ``from_batch`` (vectorised over a chunk) and an associative
``merge``; merging chunk results in a fixed chunk-index order makes ensemble
statistics independent of the worker count.

Merge formulas for combining groups 1 and 2 with counts n1, n2 (n = n1+n2,
delta = mean2 - mean1):

    mean = mean1 + delta*n2/n
    M2   = M2_1 + M2_2 + delta^2 n1 n2 / n
    M3   = M3_1 + M3_2 + delta^3 n1 n2 (n1 - n2) / n^2
           + 3 delta (n1 M2_2 - n2 M2_1) / n
    M4   = M4_1 + M4_2 + delta^4 n1 n2 (n1^2 - n1 n2 + n2^2) / n^3
           + 6 delta^2 (n1^2 M2_2 + n2^2 M2_1) / n^2
           + 4 delta (n1 M3_2 - n2 M3_1) / n

where ``M_k = sum (x - mean)^k`` within each group.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import sqrt

import numpy as np

__all__ = ["MomentAccumulator", "CovarianceAccumulator"]


@dataclass
class MomentAccumulator:
    """Count and first four central moment sums of a scalar sample."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    m3: float = 0.0
    m4: float = 0.0

    @classmethod
    def from_batch(cls, x: np.ndarray) -> "MomentAccumulator":
        x = np.asarray(x, dtype=float)
        n = x.size
        if n == 0:
            return cls()
        mu = float(np.mean(x))
        d = x - mu
        return cls(count=n, mean=mu, m2=float(np.sum(d * d)),
                   m3=float(np.sum(d ** 3)), m4=float(np.sum(d ** 4)))

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        if other.count == 0:
            return self
        if self.count == 0:
            return other
        n1, n2 = self.count, other.count
        n = n1 + n2
        d = other.mean - self.mean
        mean = self.mean + d * n2 / n
        m2 = self.m2 + other.m2 + d * d * n1 * n2 / n
        m3 = (self.m3 + other.m3 + d ** 3 * n1 * n2 * (n1 - n2) / n ** 2
              + 3.0 * d * (n1 * other.m2 - n2 * self.m2) / n)
        m4 = (self.m4 + other.m4
              + d ** 4 * n1 * n2 * (n1 * n1 - n1 * n2 + n2 * n2) / n ** 3
              + 6.0 * d * d * (n1 * n1 * other.m2 + n2 * n2 * self.m2) / n ** 2
              + 4.0 * d * (n1 * other.m3 - n2 * self.m3) / n)
        return MomentAccumulator(count=n, mean=mean, m2=m2, m3=m3, m4=m4)

    @property
    def variance(self) -> float:
        """Unbiased sample variance."""
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0

    @property
    def std(self) -> float:
        return sqrt(max(self.variance, 0.0))

    @property
    def sem(self) -> float:
        """Standard error of the mean."""
        return self.std / sqrt(self.count) if self.count > 0 else 0.0

    @property
    def skewness(self) -> float:
        if self.count < 2 or self.m2 <= 0:
            return 0.0
        return sqrt(self.count) * self.m3 / self.m2 ** 1.5

    @property
    def excess_kurtosis(self) -> float:
        if self.count < 2 or self.m2 <= 0:
            return 0.0
        return self.count * self.m4 / (self.m2 * self.m2) - 3.0

    @property
    def variance_se(self) -> float:
        """Standard error of the sample variance, from the empirical 4th moment."""
        n = self.count
        if n < 2:
            return 0.0
        v = self.m2 / n
        mu4 = self.m4 / n
        return sqrt(max(mu4 - v * v, 0.0) / n)


@dataclass
class CovarianceAccumulator:
    """Count, means and co-moment sum C = sum (x-mx)(y-my) of a paired sample."""

    count: int = 0
    mean_x: float = 0.0
    mean_y: float = 0.0
    cxy: float = 0.0
    # second moments of the product deviations, for an SE of the covariance
    prod: MomentAccumulator = field(default_factory=MomentAccumulator)

    @classmethod
    def from_batch(cls, x: np.ndarray, y: np.ndarray) -> "CovarianceAccumulator":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.size == 0:
            return cls()
        mx, my = float(np.mean(x)), float(np.mean(y))
        cxy = float(np.sum((x - mx) * (y - my)))
        return cls(count=x.size, mean_x=mx, mean_y=my, cxy=cxy,
                   prod=MomentAccumulator.from_batch(x * y))

    def merge(self, other: "CovarianceAccumulator") -> "CovarianceAccumulator":
        if other.count == 0:
            return self
        if self.count == 0:
            return other
        n1, n2 = self.count, other.count
        n = n1 + n2
        dx = other.mean_x - self.mean_x
        dy = other.mean_y - self.mean_y
        return CovarianceAccumulator(
            count=n,
            mean_x=self.mean_x + dx * n2 / n,
            mean_y=self.mean_y + dy * n2 / n,
            cxy=self.cxy + other.cxy + dx * dy * n1 * n2 / n,
            prod=self.prod.merge(other.prod),
        )

    @property
    def covariance(self) -> float:
        return self.cxy / (self.count - 1) if self.count > 1 else 0.0

    @property
    def covariance_se(self) -> float:
        """Approximate standard error: sd(x*y)/sqrt(n) (mean-product dominates)."""
        return self.prod.sem
