"""Closed-form limit objects: LLN limit, Gaussian covariances, FCLT kernels.

Two covariance conventions are computed side by side throughout:

* ``*_paper``      -- the published closed forms, verbatim: the quadratic
  form uses the expansion convention of ``u2`` (both components positive)
  and no spectral-gap scale factor;
* ``*_calibrated`` -- the sign-corrected left eigenvector together with a
  global factor ``lambda1 = K``.  Exact finite-step moment recursions and
  Monte Carlo both match this variant; see the kappa machinery in
  :mod:`lapse_urn.montecarlo` for the empirical bridge between the two.

For ``K = 1`` (e.g. the elephant-random-walk case) the two conventions
coincide wherever the cross moment ``B[0][1]`` vanishes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .model import ModelParams, ReplacementMatrix, require_valid
from .spectral import (M1, Regime, RegimeError, RegimeTag, SpectralData, eigen,
                       lambda2_of, regime)

__all__ = [
    "LimitReport",
    "CriticalConstants",
    "preset",
    "PRESET_NAMES",
    "lln_limit",
    "omegas",
    "sigma_diffusive",
    "sigma_diffusive_calibrated",
    "sigma_critical",
    "sigma_critical_calibrated",
    "fclt_kernel",
    "fclt_kernel_calibrated",
    "limit_report",
]

PRESET_NAMES = ("krw", "a3c1", "a2c0", "pure")

_PRESETS = {
    "krw": (2, 1, 1, 2),    # knight random walk
    "a3c1": (3, 0, 1, 2),
    "a2c0": (2, 1, 0, 3),
}


def preset(name: str, K: int | None = None) -> ReplacementMatrix:
    """Named replacement matrices: ``krw``, ``a3c1``, ``a2c0``, ``pure(K)``.

    ``pure(K)`` is the diagonal matrix ``(K, 0; 0, K)`` (each color
    reinforces only itself); with ``theta = 1`` and ``K = 1`` it is the
    elephant random walk.  Strategy probabilities and initial counts are the
    caller's to choose (``R0 = B0 = 1`` is the conventional start).
    """
    mt = re.fullmatch(r"pure\((\d+)\)", name.strip())
    if mt:
        name, K = "pure", int(mt.group(1))
    if name == "pure":
        if K is None or K < 1:
            raise ValueError("preset 'pure' requires an integer K >= 1")
        return ReplacementMatrix(K, 0, 0, K)
    try:
        return ReplacementMatrix(*_PRESETS[name])
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESET_NAMES}") from None


def lln_limit(params: ModelParams) -> tuple[float, float]:
    """Almost-sure limit of the proportions (R/T, B/T).

    Requires the strong-law hypothesis ``theta*(2p-1)*(a-c) < K``; the limit
    is ``rho_R = (p c + (1-p) a) / (K - lambda2)`` with ``rho_B = 1 - rho_R``.
    """
    require_valid(params)
    m = params.matrix
    a, c, K = m.a, m.c, m.K
    p, th = float(params.p), float(params.theta)
    lam2 = float(lambda2_of(params))
    if lam2 >= K:
        raise RegimeError(
            f"strong-law hypothesis theta*(2p-1)*(a-c) < K fails (lambda2 = {lam2}, K = {K})")
    rho_r = (p * c + (1 - p) * a) / (K - lam2)
    # the explicitly printed second component must agree with 1 - rho_r
    rho_b = (K - c - (a - c) * (th * (2 * p - 1) + (1 - p))) / (K - lam2)
    if abs(rho_r + rho_b - 1.0) > 1e-14:
        raise ArithmeticError("limit components do not sum to 1")
    return rho_r, 1.0 - rho_r


def omegas(params: ModelParams) -> tuple[float, float]:
    """The two covariance building blocks:

    ``omega1 = K - 2c - (a-c)(theta(2p-1) + 2(1-p))`` and
    ``omega2 = c + (a-c)(1-p)``; equivalently ``u2[0]-u2[1]`` and ``u2[1]``.
    """
    require_valid(params)
    m = params.matrix
    a, c, K = m.a, m.c, m.K
    p, th = float(params.p), float(params.theta)
    w1 = K - 2 * c - (a - c) * (th * (2 * p - 1) + 2 * (1 - p))
    w2 = c + (a - c) * (1 - p)
    return w1, w2


def _diffusive_scalars(params: ModelParams, sd: SpectralData) -> tuple[float, float]:
    """(paper, calibrated) scalar multipliers of [[1,-1],[-1,1]] below criticality."""
    K, lam2 = sd.lambda1, sd.lambda2
    den = (K - 2 * lam2) * (K - lam2) ** 2
    w1, w2 = omegas(params)
    num_paper = w1 * w1 * sd.alpha + 2 * w1 * w2 * sd.beta + w2 * w2 * K * K
    s_paper = num_paper / den
    # proof identity: the omega expansion equals u2^T B u2 / (lambda1 - 2 lambda2) v2 v2^T
    s_quad = sd.quadratic_form(sign_corrected=False) / (K - 2 * lam2) / (K - lam2) ** 2
    if abs(s_paper - s_quad) > 1e-12 * max(1.0, abs(s_paper)):
        raise ArithmeticError("omega expansion disagrees with the quadratic-form identity")
    s_cal = K * sd.quadratic_form(sign_corrected=True) / den
    return s_paper, s_cal


def _check_subcritical(params: ModelParams) -> Regime:
    reg = regime(params)
    if reg.tag not in (RegimeTag.DIFFUSIVE, RegimeTag.DEGENERATE):
        raise RegimeError(f"diffusive covariance undefined in regime {reg.tag.value!r}")
    return reg


def sigma_diffusive(params: ModelParams) -> np.ndarray:
    """Published diffusive covariance: scalar times [[1,-1],[-1,1]].

    Defined for ``2*lambda2 < K``.  At ``lambda2 = 0`` (p = 1/2 or theta = 0)
    the value is still computed; reports flag it as outside the Gaussian
    statements' assumptions.
    """
    _check_subcritical(params)
    s_paper, _ = _diffusive_scalars(params, eigen(params))
    return s_paper * M1


def sigma_diffusive_calibrated(params: ModelParams) -> np.ndarray:
    """Diffusive covariance matching exact moments: K times the sign-corrected form."""
    _check_subcritical(params)
    _, s_cal = _diffusive_scalars(params, eigen(params))
    return s_cal * M1


@dataclass(frozen=True)
class CriticalConstants:
    omega1_c: float
    alpha_c: float
    beta_c: float

    def to_json_dict(self) -> dict:
        return {"omega1_c": self.omega1_c, "alpha_c": self.alpha_c, "beta_c": self.beta_c}


def critical_constants(params: ModelParams) -> CriticalConstants:
    """Covariance constants specialised to the critical line 2*lambda2 = K."""
    m = params.matrix
    a, c, K = m.a, m.c, m.K
    p = float(params.p)
    w1c = K / 2 - 2 * a + 2 * p * (a - c)
    alpha_c = c * c + 2 * (a + c) * ((a - c) * (1 - p) + c / 2)
    beta_c = K * (alpha_c + a * c) / (a + c)
    return CriticalConstants(omega1_c=w1c, alpha_c=alpha_c, beta_c=beta_c)


def _critical_scalars(params: ModelParams) -> tuple[float, float, CriticalConstants]:
    m = params.matrix
    K = m.K
    lam2 = K / 2
    cc = critical_constants(params)
    _, w2 = omegas(params)
    den = (K - lam2) ** 2
    s_paper = (cc.omega1_c ** 2 * cc.alpha_c
               + 2 * cc.omega1_c * w2 * cc.beta_c + w2 * w2 * K * K) / den
    t = cc.omega1_c + 2 * w2    # sign-corrected u2 ~ (omega1_c + omega2, -omega2)
    s_cal = K * (cc.alpha_c * t * t - 2 * cc.beta_c * w2 * t + K * K * w2 * w2) / den
    return s_paper, s_cal, cc


def _check_critical(params: ModelParams) -> None:
    reg = regime(params)
    if reg.tag is not RegimeTag.CRITICAL:
        raise RegimeError(f"critical covariance undefined in regime {reg.tag.value!r}")


def sigma_critical(params: ModelParams) -> tuple[np.ndarray, CriticalConstants]:
    """Published critical covariance (scalar times [[1,-1],[-1,1]]) and its constants.

    Requires ``2*lambda2 = K`` exactly (supply p, theta as Fractions or as
    exactly-representable floats to land on the critical line).
    """
    require_valid(params)
    _check_critical(params)
    s_paper, _, cc = _critical_scalars(params)
    return s_paper * M1, cc


def sigma_critical_calibrated(params: ModelParams) -> np.ndarray:
    """Critical covariance matching exact moments (sign-corrected, scaled by K)."""
    require_valid(params)
    _check_critical(params)
    _, s_cal, _ = _critical_scalars(params)
    return s_cal * M1


def fclt_kernel(params: ModelParams, s: float, t: float) -> np.ndarray:
    """Published covariance kernel E(W_s W_t^T) of the limiting Gaussian process.

    Diffusive: ``s * (t/s)**lambda2 * Sigma1`` (exponent as published, the
    raw eigenvalue).  Critical: ``s * Sigma2`` for every ``t >= s``.
    """
    if not (0 < s <= t):
        raise ValueError("times must satisfy 0 < s <= t")
    reg = regime(params)
    if reg.tag is RegimeTag.CRITICAL:
        sig, _ = sigma_critical(params)
        return s * sig
    if reg.tag in (RegimeTag.DIFFUSIVE, RegimeTag.DEGENERATE):
        lam2 = float(lambda2_of(params))
        return s * (t / s) ** lam2 * sigma_diffusive(params)
    raise RegimeError(f"no covariance kernel in regime {reg.tag.value!r}")


def fclt_kernel_calibrated(params: ModelParams, s: float, t: float) -> np.ndarray:
    """Kernel consistent with exact moments: exponent lambda2/K, calibrated scale.

    The conditional-expectation identity
    ``E[F_t | F_s] = F_s * prod(1 + lambda2/T_m)`` forces the cross-time
    growth ``(t/s)**(lambda2/lambda1)``; at ``K = 1`` this coincides with the
    published exponent.
    """
    if not (0 < s <= t):
        raise ValueError("times must satisfy 0 < s <= t")
    reg = regime(params)
    if reg.tag is RegimeTag.CRITICAL:
        return s * sigma_critical_calibrated(params)
    if reg.tag in (RegimeTag.DIFFUSIVE, RegimeTag.DEGENERATE):
        m = params.matrix
        lam2 = float(lambda2_of(params))
        return s * (t / s) ** (lam2 / m.K) * sigma_diffusive_calibrated(params)
    raise RegimeError(f"no covariance kernel in regime {reg.tag.value!r}")


@dataclass(frozen=True)
class LimitReport:
    """All limit objects of a model in one serialisable record."""

    rho: tuple[float, float] | None
    regime: Regime
    omega1: float
    omega2: float
    sigma_paper: np.ndarray | None
    sigma_calibrated: np.ndarray | None
    kappa_hypothesis: float
    critical_constants: CriticalConstants | None
    scaling: str | None
    kernel_exponent: float | None
    kernel_exponent_calibrated: float | None
    flags: tuple[str, ...]

    def to_json_dict(self) -> dict:
        out = {
            "rho": list(self.rho) if self.rho is not None else None,
            "regime": self.regime.tag.value,
            "lambda_ratio": self.regime.lambda_ratio,
            "omega1": self.omega1,
            "omega2": self.omega2,
            "sigma_paper": None if self.sigma_paper is None else self.sigma_paper.tolist(),
            "sigma_calibrated": None if self.sigma_calibrated is None else self.sigma_calibrated.tolist(),
            "kappa_hypothesis": self.kappa_hypothesis,
            "scaling": self.scaling,
            "kernel_exponent": self.kernel_exponent,
            "kernel_exponent_calibrated": self.kernel_exponent_calibrated,
            "flags": list(self.flags),
        }
        if self.critical_constants is not None:
            out["critical_constants"] = self.critical_constants.to_json_dict()
        return out


def limit_report(params: ModelParams) -> LimitReport:
    """Assemble the limit objects appropriate to the model's regime.

    ``kappa_hypothesis = K`` records the working scale between the published
    covariance convention and observed fluctuations: empirically
    ``cov(fluctuations)/n -> K * (sign-corrected sigma)``, which is the
    ``sigma_calibrated`` entry.
    """
    require_valid(params)
    m = params.matrix
    K = m.K
    reg = regime(params)
    lam2 = float(lambda2_of(params))
    w1, w2 = omegas(params)
    flags: list[str] = []

    rho = None
    if reg.tag is not RegimeTag.LLN_VIOLATED:
        rho = lln_limit(params)
    else:
        flags.append("lln_hypothesis_violated: lambda2 >= K, no deterministic limit")

    sigma_p = sigma_c = None
    cc = None
    scaling = None
    kexp = kexp_cal = None
    if reg.tag in (RegimeTag.DIFFUSIVE, RegimeTag.DEGENERATE):
        sigma_p = sigma_diffusive(params)
        sigma_c = sigma_diffusive_calibrated(params)
        scaling = "sqrt(n)"
        kexp, kexp_cal = lam2, lam2 / K
        if reg.tag is RegimeTag.DEGENERATE:
            flags.append("lambda2_zero: p = 1/2 or theta = 0; outside the Gaussian "
                         "statements' hypotheses, i.i.d.-style CLT still applies")
    elif reg.tag is RegimeTag.CRITICAL:
        sigma_p, cc = sigma_critical(params)
        sigma_c = sigma_critical_calibrated(params)
        scaling = "sqrt(n log n)"
        kexp, kexp_cal = 0.0, 0.0
        flags.append("critical_constants_attached")
    elif reg.tag is RegimeTag.SUPERDIFFUSIVE:
        flags.append("superdiffusive: 2*lambda2 > K, no Gaussian limit law available; "
                     "classification only")

    return LimitReport(rho=rho, regime=reg, omega1=w1, omega2=w2,
                       sigma_paper=sigma_p, sigma_calibrated=sigma_c,
                       kappa_hypothesis=float(K), critical_constants=cc,
                       scaling=scaling, kernel_exponent=kexp,
                       kernel_exponent_calibrated=kexp_cal, flags=tuple(flags))
