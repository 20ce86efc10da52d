"""Simulation and verification toolkit for a balanced two-color urn in which
each reinforcement step is taken either by a history-aware Polya-type player
(probability theta) or by an i.i.d. player (probability 1 - theta).

Modules
-------
model       urn types, tenability checks, transition law, path simulation
spectral    mean replacement matrix, eigenstructure, second moments, regimes
limits      strong-law limit, Gaussian covariances, FCLT kernels, presets
oracle      exact finite-n laws and moment recursions (the test ground truth)
montecarlo  replicated ensemble engine and statistical verification checks
cli         command-line front end
plots       optional figure rendering for the CLI report paths
"""

from .model import (LapseRecord, ModelParams, ReplacementMatrix, StepRecord,
                    Trajectory, UrnState, ValidationError, conditional_red_probability,
                    extract_lapses, marginal_red_probability, simulate, step,
                    validate_model)
from .spectral import (NormalizationError, RandomColumnLaw, Regime, RegimeError,
                       RegimeTag, SpectralData, column_laws, critical_p, eigen,
                       mean_matrix, regime, second_moment_matrix)
from .limits import (CriticalConstants, LimitReport, fclt_kernel,
                     fclt_kernel_calibrated, limit_report, lln_limit, omegas,
                     preset, sigma_critical, sigma_critical_calibrated,
                     sigma_diffusive, sigma_diffusive_calibrated)
from .oracle import (ExactDistribution, ExactMoments, exact_distribution,
                     exact_moments, iid_closed_form, mean_recursion,
                     moment_recursion)
from .montecarlo import (EnsembleStats, KappaCalibration, LapseStats,
                         VerificationReport, calibrate_kappa, lapse_statistics,
                         run_ensemble, verify_clt, verify_fclt, verify_lln)

__version__ = "0.1.0"
