"""Spectral analysis of the urn's mean replacement dynamics.

The two-player step is equivalent to an urn with random columns: drawing red
applies column ``xi_1``, drawing blue applies ``xi_2``, where each ``xi_i``
equals ``(a, b)`` or ``(c, d)`` with the probabilities in
:func:`column_laws`.  The expectation matrix ``A`` of those random columns
drives all limit objects through its eigenstructure:

    lambda1 = K,    lambda2 = theta * (2p - 1) * (a - c)

with right eigenvectors ``v1`` (components summing to 1), ``v2`` parallel to
``(1, -1)``, and left eigenvectors ``u1 = (1, 1)`` and ``u2``.  ``u2`` is
stored in the expansion convention (both components positive) used by the
covariance formulas; the variant with the second component negated is the one
that actually satisfies ``u2^T A = lambda2 u2^T`` and is exposed separately
for diagnostics.

The second-moment matrix ``B = v11*E[xi_1 xi_1^T] + v12*E[xi_2 xi_2^T]``
decomposes as ``alpha*M1 + beta*M2 + K^2*M3`` with
``M1 = [[1,-1],[-1,1]]``, ``M2 = [[0,1],[1,-2]]``, ``M3 = [[0,0],[0,1]]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

import numpy as np

from .model import ModelParams, ReplacementMatrix, require_valid

__all__ = [
    "RandomColumnLaw",
    "SpectralData",
    "Regime",
    "RegimeTag",
    "RegimeError",
    "NormalizationError",
    "column_laws",
    "mean_matrix",
    "eigen",
    "second_moment_matrix",
    "regime",
    "critical_p",
]

M1 = np.array([[1.0, -1.0], [-1.0, 1.0]])
M2 = np.array([[0.0, 1.0], [1.0, -2.0]])
M3 = np.array([[0.0, 0.0], [0.0, 1.0]])


class RegimeError(RuntimeError):
    """The requested quantity is undefined in the model's fluctuation regime."""


class NormalizationError(RegimeError):
    """Degenerate eigenvector normalization: K - lambda2 = 0."""


def _is_exact(x) -> bool:
    return isinstance(x, (int, Fraction)) and not isinstance(x, bool)


def lambda2_of(params: ModelParams):
    """Second eigenvalue theta*(2p-1)*(a-c); exact when p, theta are exact."""
    m = params.matrix
    return params.theta * (2 * params.p - 1) * (m.a - m.c)


@dataclass(frozen=True)
class RandomColumnLaw:
    """P(xi_1 = (a,b)) and P(xi_2 = (a,b)); complements give the (c,d) cases."""

    prob_xi1_R: float
    prob_xi2_R: float


def column_laws(params: ModelParams) -> RandomColumnLaw:
    """Random-column law matching the two-player transition probabilities."""
    require_valid(params)
    p, th = params.p, params.theta
    return RandomColumnLaw(prob_xi1_R=(2 * p - 1) * th + (1 - p), prob_xi2_R=1 - p)


def mean_matrix(law: RandomColumnLaw, matrix: ReplacementMatrix) -> np.ndarray:
    """Expectation matrix A = [[E xi_11, E xi_21], [E xi_12, E xi_22]].

    Each column sums to K, so only the first row is independent.
    """
    a, c, K = matrix.a, matrix.c, matrix.K
    e11 = c + (a - c) * law.prob_xi1_R
    e21 = c + (a - c) * law.prob_xi2_R
    return np.array([[e11, e21], [K - e11, K - e21]], dtype=float)


@dataclass(frozen=True)
class SpectralData:
    """Mean matrix, eigenstructure, and second-moment matrix of the model."""

    A: np.ndarray
    lambda1: float
    lambda2: float
    v1: np.ndarray
    v2: np.ndarray
    u1: np.ndarray
    u2: np.ndarray         # expansion convention: (K - E xi_11, E xi_21)
    B: np.ndarray
    alpha: float
    beta: float

    @property
    def u2_sign_corrected(self) -> np.ndarray:
        """(u21, -u22): the vector satisfying u^T A = lambda2 u^T with u^T v2 = 1."""
        return np.array([self.u2[0], -self.u2[1]])

    def quadratic_form(self, sign_corrected: bool = False) -> float:
        """u2^T B u2 in the requested convention."""
        u = self.u2_sign_corrected if sign_corrected else self.u2
        return float(u @ self.B @ u)

    def to_json_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "v1": self.v1.tolist(),
            "v2": self.v2.tolist(),
            "u1": self.u1.tolist(),
            "u2": self.u2.tolist(),
            "B": self.B.tolist(),
            "alpha": self.alpha,
            "beta": self.beta,
        }


def second_moment_matrix(params: ModelParams) -> tuple[np.ndarray, float, float]:
    """Second-moment matrix B with its (alpha, beta) decomposition scalars.

    B is assembled two independent ways -- directly from
    ``v11 E[xi_1 xi_1^T] + v12 E[xi_2 xi_2^T]`` and from the
    ``alpha*M1 + beta*M2 + K^2*M3`` closed form -- and both must agree to
    1e-12, which pins the closed-form scalars

        alpha = c^2 + (a^2-c^2) (K(1-p) + c theta (2p-1)) / (K - lambda2),
        beta  = K (alpha + a c) / (a + c).
    """
    require_valid(params)
    m = params.matrix
    a, b, c, d, K = m.a, m.b, m.c, m.d, m.K
    p, th = float(params.p), float(params.theta)
    lam2 = float(lambda2_of(params))
    if K - lam2 == 0.0:
        raise NormalizationError("K - lambda2 = 0: first eigenvector undefined")

    alpha = c * c + (a * a - c * c) * (K * (1 - p) + c * th * (2 * p - 1)) / (K - lam2)
    beta = K * (alpha + a * c) / (a + c)
    B = alpha * M1 + beta * M2 + K * K * M3

    # independent assembly through the random-column second moments
    law = column_laws(params)
    colR = np.array([a, b], dtype=float)
    colB = np.array([c, d], dtype=float)
    m_r = np.outer(colR, colR)
    m_b = np.outer(colB, colB)
    sd_v1 = _v1(params)
    B_direct = sd_v1[0] * (law.prob_xi1_R * m_r + (1 - law.prob_xi1_R) * m_b) \
        + sd_v1[1] * (law.prob_xi2_R * m_r + (1 - law.prob_xi2_R) * m_b)
    resid = np.max(np.abs(B - B_direct))
    if resid > 1e-12:
        raise ArithmeticError(f"B decomposition residual {resid:.3e} exceeds 1e-12")
    return B, alpha, beta


def _v1(params: ModelParams) -> np.ndarray:
    m = params.matrix
    a, c, K = m.a, m.c, m.K
    p, th = float(params.p), float(params.theta)
    lam2 = float(lambda2_of(params))
    if K - lam2 == 0.0:
        raise NormalizationError("K - lambda2 = 0: first eigenvector undefined")
    top = c + (a - c) * (1 - p)
    bot = K - c - (a - c) * (th * (2 * p - 1) + 1 - p)
    return np.array([top, bot]) / (K - lam2)


def eigen(params: ModelParams) -> SpectralData:
    """Closed-form eigenstructure of A, cross-checked numerically.

    Raises :class:`NormalizationError` when ``K = lambda2`` (only possible for
    ``b = d = 0`` at extreme ``p, theta``), where the eigenvector
    normalization ``u_i^T v_i = 1`` breaks down.
    """
    require_valid(params)
    m = params.matrix
    a, c, K = m.a, m.c, m.K
    p, th = float(params.p), float(params.theta)
    law = column_laws(params)
    A = mean_matrix(law, m)
    lam1, lam2 = float(K), float(lambda2_of(params))
    if K - lam2 == 0.0:
        raise NormalizationError("K - lambda2 = 0: eigenvector normalization fails")

    v1 = _v1(params)
    v2 = np.array([1.0, -1.0]) / (K - lam2)
    u1 = np.array([1.0, 1.0])
    u2 = np.array([K - c - (a - c) * (th * (2 * p - 1) + (1 - p)),
                   c + (a - c) * (1 - p)])

    resid = np.max(np.abs(A @ v1 - lam1 * v1))
    if resid > 1e-12:
        raise ArithmeticError(f"closed-form v1 residual {resid:.3e} exceeds 1e-12")
    ev = np.sort(np.real(np.linalg.eigvals(A)))[::-1]
    if abs(ev[0] - lam1) > 1e-10 or abs(ev[1] - lam2) > 1e-10:
        raise ArithmeticError(f"numeric eigenvalues {ev} disagree with ({lam1}, {lam2})")

    B, alpha, beta = second_moment_matrix(params)
    return SpectralData(A=A, lambda1=lam1, lambda2=lam2, v1=v1, v2=v2,
                        u1=u1, u2=u2, B=B, alpha=alpha, beta=beta)


class RegimeTag(str, Enum):
    DIFFUSIVE = "diffusive"
    CRITICAL = "critical"
    SUPERDIFFUSIVE = "superdiffusive"
    LLN_VIOLATED = "lln_violated"
    DEGENERATE = "degenerate"


@dataclass(frozen=True)
class Regime:
    tag: RegimeTag
    lambda_ratio: float    # 2*lambda2 / lambda1


#: float-comparison tolerance for the regime boundaries
_REGIME_TOL = 1e-12


def regime(params: ModelParams) -> Regime:
    """Classify the fluctuation regime by comparing 2*lambda2 with K.

    Exactly one tag applies:

    * ``lln_violated``    lambda2 >= K (strong-law hypothesis fails),
    * ``degenerate``      lambda2 = 0 (p = 1/2 or theta = 0; the step law
      is history-free, outside the Gaussian statements' hypotheses but the
      i.i.d. limits plainly hold),
    * ``diffusive``       2*lambda2 < K,
    * ``critical``        2*lambda2 = K,
    * ``superdiffusive``  2*lambda2 > K (no limit law is provided).

    When both ``p`` and ``theta`` are exact (int or Fraction) the comparisons
    are exact; otherwise a 1e-12 floating tolerance is used, since the
    critical set has measure zero.
    """
    require_valid(params)
    m = params.matrix
    K = m.K
    exact = _is_exact(params.p) and _is_exact(params.theta)
    if exact:
        lam2 = Fraction(params.theta) * (2 * Fraction(params.p) - 1) * (m.a - m.c)
        ratio = 2 * lam2 / K
        if lam2 >= K:
            tag = RegimeTag.LLN_VIOLATED
        elif lam2 == 0:
            tag = RegimeTag.DEGENERATE
        elif 2 * lam2 < K:
            tag = RegimeTag.DIFFUSIVE
        elif 2 * lam2 == K:
            tag = RegimeTag.CRITICAL
        else:
            tag = RegimeTag.SUPERDIFFUSIVE
        return Regime(tag=tag, lambda_ratio=float(ratio))

    lam2 = float(lambda2_of(params))
    if lam2 >= K - _REGIME_TOL:
        tag = RegimeTag.LLN_VIOLATED
    elif abs(lam2) < _REGIME_TOL:
        tag = RegimeTag.DEGENERATE
    elif abs(2 * lam2 - K) < _REGIME_TOL:
        tag = RegimeTag.CRITICAL
    elif 2 * lam2 < K:
        tag = RegimeTag.DIFFUSIVE
    else:
        tag = RegimeTag.SUPERDIFFUSIVE
    return Regime(tag=tag, lambda_ratio=2 * lam2 / K)


def critical_p(matrix: ReplacementMatrix, theta):
    """Critical value p_c = (K/(a-c))/(4 theta) + 1/2, or None outside [0, 1].

    Returns None for ``theta = 0`` (lambda2 vanishes identically, the model
    is never critical) and for ``a = c``.  The result is a Fraction when
    ``theta`` is exact.
    """
    a, c, K = matrix.a, matrix.c, matrix.K
    if theta == 0 or a == c:
        return None
    if _is_exact(theta):
        pc = Fraction(K, (a - c)) / (4 * Fraction(theta)) + Fraction(1, 2)
    else:
        pc = (K / (a - c)) / (4 * theta) + 0.5
    if 0 <= pc <= 1:
        return pc
    return None
