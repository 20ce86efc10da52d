"""Exact finite-step laws: the ground truth for all statistical tests.

After ``n`` steps the red count lies on the lattice
``R0 + k*a + (n-k)*c`` for ``k = 0..n`` a-steps, so the full law of ``R_n``
is an ``(n+1)``-vector obtained by forward dynamic programming over the
marginal step law ``q(r) = 1 - p + theta*(2p-1)*r/T``.  Cost is O(n^2) time
and O(n) memory.  Exact moment recursions (O(n)) cover means, variances and
standardized third/fourth moments at much larger ``n``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import stats as sps

from .model import ModelParams, require_valid
from .spectral import lambda2_of

__all__ = [
    "ExactDistribution",
    "ExactMoments",
    "exact_distribution",
    "exact_moments",
    "mean_recursion",
    "moment_recursion",
    "iid_closed_form",
    "DEFAULT_STEP_CAP",
]

DEFAULT_STEP_CAP = 100_000


@dataclass(frozen=True)
class ExactDistribution:
    """Law of R_n: support ``R0 + k*a + (n-k)*c`` and matching probabilities.

    ``probs`` is a float array, or a tuple of Fractions in rational mode.
    """

    n: int
    support: tuple[int, ...]
    probs: tuple

    def as_float(self) -> np.ndarray:
        return np.asarray([float(p) for p in self.probs])

    def mean(self) -> float:
        return float(np.dot(self.as_float(), np.asarray(self.support, dtype=float)))

    def variance(self) -> float:
        s = np.asarray(self.support, dtype=float)
        pr = self.as_float()
        mu = float(pr @ s)
        return float(pr @ (s - mu) ** 2)

    def cdf(self) -> np.ndarray:
        """Cumulative probabilities in increasing-support order."""
        s = np.asarray(self.support)
        pr = self.as_float()
        order = np.argsort(s)
        return np.cumsum(pr[order])

    def to_csv(self, path=None) -> str | None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "R", "prob"])
        for k, (r, p) in enumerate(zip(self.support, self.probs)):
            w.writerow([k, r, repr(float(p)) if not isinstance(p, Fraction) else str(p)])
        text = buf.getvalue()
        if path is None:
            return text
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        return None

    def to_json_dict(self) -> dict:
        rational = len(self.probs) > 0 and isinstance(self.probs[0], Fraction)
        return {
            "n": self.n,
            "support": list(self.support),
            "probs": [str(p) if rational else float(p) for p in self.probs],
            "rational": rational,
        }


def exact_distribution(params: ModelParams, n: int, cap: int = DEFAULT_STEP_CAP,
                       rational: bool = False) -> ExactDistribution:
    """Exact law of R_n by forward DP over the number of a-steps.

    Parameters
    ----------
    params : ModelParams
        A tenable model.
    n : int
        Number of steps; must not exceed ``cap`` (the DP is O(n^2)).
    rational : bool
        Propagate exact Fractions instead of floats.  Intended for small n
        (say <= 30); ``p`` and ``theta`` should be Fractions or ints for the
        result to be exactly rational.
    """
    require_valid(params)
    if n < 0:
        raise ValueError("n must be non-negative")
    if n > cap:
        raise ValueError(f"n = {n} exceeds the configured cap {cap}")
    m = params.matrix
    a, c, K, T0 = m.a, m.c, m.K, params.T0

    if rational:
        p, th = Fraction(params.p), Fraction(params.theta)
        probs = [Fraction(1)]
        for level in range(n):
            T = K * level + T0
            nxt = [Fraction(0)] * (level + 2)
            for k, pk in enumerate(probs):
                if pk == 0:
                    continue
                r = params.R0 + k * a + (level - k) * c
                q = (1 - p) + th * (2 * p - 1) * Fraction(r, T)
                nxt[k + 1] += pk * q
                nxt[k] += pk * (1 - q)
            probs = nxt
        support = tuple(params.R0 + k * a + (n - k) * c for k in range(n + 1))
        return ExactDistribution(n=n, support=support, probs=tuple(probs))

    p, th = float(params.p), float(params.theta)
    probs = np.array([1.0])
    ks = np.array([0.0])
    for level in range(n):
        T = K * level + T0
        r = params.R0 + ks * a + (level - ks) * c
        # q from integer-valued r and T at every level: no error accumulation
        q = (1.0 - p) + th * (2.0 * p - 1.0) * (r / T)
        nxt = np.zeros(level + 2)
        nxt[1:] += probs * q
        nxt[:-1] += probs * (1.0 - q)
        probs = nxt
        ks = np.arange(level + 2, dtype=float)
    support = tuple(params.R0 + k * a + (n - k) * c for k in range(n + 1))
    return ExactDistribution(n=n, support=support, probs=tuple(probs.tolist()))


def exact_moments(params: ModelParams, n: int,
                  cap: int = DEFAULT_STEP_CAP) -> tuple[np.ndarray, np.ndarray]:
    """Mean vector and covariance matrix of (R_n, B_n) from the exact law.

    ``B_n = T_n - R_n`` deterministically, so the covariance has zero row
    sums and rank at most one.
    """
    dist = exact_distribution(params, n, cap=cap)
    T = params.matrix.K * n + params.T0
    mu_r = dist.mean()
    var_r = dist.variance()
    mean = np.array([mu_r, T - mu_r])
    cov = np.array([[var_r, -var_r], [-var_r, var_r]])
    return mean, cov


def mean_recursion(params: ModelParams, n: int) -> np.ndarray:
    """Exact E[R_m] for m = 0..n via the O(n) recursion.

    ``E[R_{m+1}] = (1 + lambda2/T_m) E[R_m] + c + (a-c)(1-p)``.
    """
    require_valid(params)
    m = params.matrix
    a, c, K = m.a, m.c, m.K
    p = float(params.p)
    lam2 = float(lambda2_of(params))
    z = c + (a - c) * (1 - p)
    out = np.empty(n + 1)
    out[0] = params.R0
    for i in range(n):
        T = K * i + params.T0
        out[i + 1] = (1.0 + lam2 / T) * out[i] + z
    return out


@dataclass(frozen=True)
class ExactMoments:
    """Exact moments of R_n from the closed recursions."""

    n: int
    mean: float
    variance: float
    skewness: float
    excess_kurtosis: float


def moment_recursion(params: ModelParams, n: int) -> ExactMoments:
    """Exact first four moments of R_n in O(n).

    The step increment X takes values {a, c} with an a-probability affine in
    r, so every conditional power moment E[X^j | r] is affine in r and the
    moment recursion closes at order four.  It is run on the centered
    variable S = R - T*rho (the conditioning trick works for any fixed
    affine center), which keeps the tracked quantities of order
    sqrt(n log n) instead of n and avoids catastrophic cancellation in the
    variance.  This reaches n far beyond the O(n^2) distribution DP and is
    the reference for large-n variance and normality checks.
    """
    require_valid(params)
    m = params.matrix
    a, c, K = m.a, m.c, m.K
    p, th = float(params.p), float(params.theta)
    lam2 = float(lambda2_of(params))
    # centering slope: the strong-law limit when it exists, else any constant
    if lam2 < K:
        rho = (p * c + (1 - p) * a) / (K - lam2)
    else:
        rho = params.R0 / params.T0
    s1 = th * (2.0 * p - 1.0)
    wa, wc = a - K * rho, c - K * rho          # centered increment values
    q_at_center = (1.0 - p) + s1 * rho         # a-probability at r = T*rho
    A = [wc ** j + (wa ** j - wc ** j) * q_at_center for j in range(5)]
    Bc = [(wa ** j - wc ** j) * s1 for j in range(5)]
    m1 = float(params.R0) - params.T0 * rho
    m2, m3, m4 = m1 * m1, m1 ** 3, m1 ** 4
    for i in range(n):
        T = K * i + params.T0
        b1, b2, b3, b4 = Bc[1] / T, Bc[2] / T, Bc[3] / T, Bc[4] / T
        n4 = m4 + 4 * (A[1] * m3 + b1 * m4) + 6 * (A[2] * m2 + b2 * m3) \
            + 4 * (A[3] * m1 + b3 * m2) + (A[4] + b4 * m1)
        n3 = m3 + 3 * (A[1] * m2 + b1 * m3) + 3 * (A[2] * m1 + b2 * m2) + (A[3] + b3 * m1)
        n2 = m2 + 2 * (A[1] * m1 + b1 * m2) + (A[2] + b2 * m1)
        n1 = m1 + A[1] + b1 * m1
        m1, m2, m3, m4 = n1, n2, n3, n4
    var = m2 - m1 * m1
    cm3 = m3 - 3 * m1 * m2 + 2 * m1 ** 3
    cm4 = m4 - 4 * m1 * m3 + 6 * m1 * m1 * m2 - 3 * m1 ** 4
    if var > 0:
        skew = cm3 / var ** 1.5
        exk = cm4 / (var * var) - 3.0
    else:
        skew = exk = 0.0
    T_n = K * n + params.T0
    return ExactMoments(n=n, mean=m1 + T_n * rho, variance=var,
                        skewness=skew, excess_kurtosis=exk)


def iid_closed_form(params: ModelParams, n: int) -> ExactDistribution:
    """Closed-form law for theta = 0: R_n = R0 + c n + (a-c) X, X ~ Binomial(n, 1-p).

    With the i.i.d. player always selected the steps are independent, so the
    number of a-steps is binomial.  Matches :func:`exact_distribution`
    pointwise and serves as its independent check.
    """
    require_valid(params)
    if params.theta != 0:
        raise ValueError("closed form requires theta = 0")
    if n < 0:
        raise ValueError("n must be non-negative")
    m = params.matrix
    ks = np.arange(n + 1)
    probs = sps.binom.pmf(ks, n, 1.0 - float(params.p))
    support = tuple(params.R0 + k * m.a + (n - k) * m.c for k in range(n + 1))
    return ExactDistribution(n=n, support=support, probs=tuple(probs.tolist()))
