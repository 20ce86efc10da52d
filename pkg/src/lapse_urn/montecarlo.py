"""Replicated simulation engine and statistical verification harness.

The engine advances all replicates of a chunk in lockstep with vectorised
numpy operations; replicate ``r`` consumes the Philox stream keyed
``(seed, r)`` in the same per-step order as the scalar simulator, so any
single ensemble member can be replayed with :func:`lapse_urn.model.simulate`.
Chunk results are reduced with the pairwise-merge accumulators of
:mod:`lapse_urn.moments` in fixed chunk-index order, which makes every
statistic byte-identical for any worker count.

Fluctuations are centered at ``T_m * rho`` (consistent with the
total-count normalisation of the proportions; ``--paper-centering`` switches
to the verbatim ``m * rho`` centering, which coincides for K = 1) and scaled
by ``sqrt(m)`` below criticality or ``sqrt(m log m)`` on the critical line.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .limits import LimitReport, limit_report
from .model import ModelParams, require_valid
from .moments import CovarianceAccumulator, MomentAccumulator
from .rng import stream_generator
from .spectral import RegimeError, RegimeTag

__all__ = [
    "EnsembleStats",
    "CheckpointStats",
    "PairStats",
    "VerificationReport",
    "KappaCalibration",
    "LapseStats",
    "run_ensemble",
    "verify_lln",
    "verify_clt",
    "verify_fclt",
    "calibrate_kappa",
    "lapse_statistics",
]

#: replicates advanced together; fixed by inputs only, never by worker count
BASE_CHUNK = 4096
#: cap on the per-chunk boolean lapse matrix (entries)
LAPSE_MATRIX_CAP = 1 << 27


def _chunk_size(n: int, collect_lapses: bool) -> int:
    if collect_lapses:
        return min(BASE_CHUNK, max(64, LAPSE_MATRIX_CAP // max(n, 1)))
    return BASE_CHUNK


@dataclass
class _ChunkResult:
    prop: dict
    fluct: dict
    pairs: dict
    hist_all: np.ndarray
    hist_unc: np.ndarray
    samples: dict


def _run_chunk(params: ModelParams, n: int, seed: int, lo: int, hi: int,
               record_steps: np.ndarray, scales: dict, pair_times: list,
               rho_r: float, paper_centering: bool, collect_lapses: bool,
               collect_samples: bool) -> _ChunkResult:
    m = params.matrix
    a, c, K, T0 = m.a, m.c, m.K, params.T0
    p, th = float(params.p), float(params.theta)
    one_minus_p, coef = 1.0 - p, 2.0 * p - 1.0
    C = hi - lo
    gens = [stream_generator(seed, r) for r in range(lo, hi)]
    R = np.full(C, params.R0, dtype=np.int64)
    snapshots: dict[int, np.ndarray] = {}
    record = set(int(s) for s in record_steps)

    ymat = np.zeros((n, C), dtype=bool) if collect_lapses else None
    block = max(1, (1 << 21) // max(C, 1))
    u = np.empty((C, 2 * block))
    done = 0
    while done < n:
        bs = min(block, n - done)
        for i, g in enumerate(gens):
            u[i, :2 * bs] = g.random(2 * bs)
        for j in range(bs):
            step_idx = done + j
            T = K * step_idx + T0
            y = u[:, 2 * j] < th
            if ymat is not None:
                ymat[step_idx, :] = y
            # same float expression as the scalar transition law
            q = one_minus_p + coef * y * (R / T)
            red = u[:, 2 * j + 1] < q
            R += np.where(red, a, c)
            if (step_idx + 1) in record:
                snapshots[step_idx + 1] = R.copy()
        done += bs

    prop, fluct, samples = {}, {}, {}
    for mm, Rm in snapshots.items():
        Tm = K * mm + T0
        center = (mm * rho_r) if paper_centering else (Tm * rho_r)
        F = Rm - center
        prop[mm] = MomentAccumulator.from_batch(Rm / Tm)
        g = F / scales[mm]
        fluct[mm] = MomentAccumulator.from_batch(g)
        if collect_samples:
            samples[mm] = g
    pairs = {}
    for (s, t, ms, mt, norm_s, norm_t) in pair_times:
        Ts, Tt = K * ms + T0, K * mt + T0
        cs = (ms * rho_r) if paper_centering else (Ts * rho_r)
        ct = (mt * rho_r) if paper_centering else (Tt * rho_r)
        ws = (snapshots[ms] - cs) / norm_s
        wt = (snapshots[mt] - ct) / norm_t
        pairs[(s, t)] = CovarianceAccumulator.from_batch(ws, wt)

    hist_all = np.zeros(0, dtype=np.int64)
    hist_unc = np.zeros(0, dtype=np.int64)
    if ymat is not None:
        z = ~ymat
        zpad = np.vstack([z, np.zeros((1, C), dtype=bool)])
        flat = zpad.ravel(order="F").astype(np.int8)
        d = np.diff(flat, prepend=np.int8(0))
        starts = np.flatnonzero(d == 1)
        ends = np.flatnonzero(d == -1)
        lengths = ends - starts
        censored = (ends % (n + 1)) == n   # run still open at the final step
        hist_all = np.bincount(lengths, minlength=n + 1)
        hist_unc = np.bincount(lengths[~censored], minlength=n + 1)
    return _ChunkResult(prop=prop, fluct=fluct, pairs=pairs,
                        hist_all=hist_all, hist_unc=hist_unc, samples=samples)


def _chunk_task(args) -> _ChunkResult:
    """Module-level wrapper so chunk jobs can cross a process boundary."""
    return _run_chunk(*args)


@dataclass(frozen=True)
class CheckpointStats:
    m: int
    T: int
    count: int
    mean_proportion: float
    se_mean_proportion: float
    fluct_scaled_var: float
    fluct_scaled_var_se: float
    cov: list                     # 2x2 of the scaled (R, B) fluctuations
    skewness: float
    excess_kurtosis: float

    def to_json_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "m", "T", "count", "mean_proportion", "se_mean_proportion",
            "fluct_scaled_var", "fluct_scaled_var_se", "cov",
            "skewness", "excess_kurtosis")}


@dataclass(frozen=True)
class PairStats:
    s: float
    t: float
    m_s: int
    m_t: int
    value: float                  # scaled empirical cross-time covariance
    se: float

    def to_json_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("s", "t", "m_s", "m_t", "value", "se")}


@dataclass(frozen=True)
class EnsembleStats:
    """Aggregated Monte Carlo estimators for one parameter point."""

    params: ModelParams
    n: int
    replicates: int
    seed: int
    regime: str
    rho: tuple[float, float]
    centering: str
    scaling: str
    checkpoints: tuple[CheckpointStats, ...]
    st_pairs: tuple[PairStats, ...]
    lapse_histogram: tuple[tuple[int, int], ...]
    lapse_histogram_uncensored: tuple[tuple[int, int], ...]
    kappa_estimate: float | None = None
    samples: dict = field(default_factory=dict, repr=False)

    @property
    def final_checkpoint(self) -> CheckpointStats:
        return self.checkpoints[-1]

    def checkpoint(self, m: int) -> CheckpointStats:
        for cp in self.checkpoints:
            if cp.m == m:
                return cp
        raise KeyError(f"no checkpoint at m = {m}")

    def to_json_dict(self) -> dict:
        return {
            "params": self.params.describe(),
            "n": self.n,
            "replicates": self.replicates,
            "seed": self.seed,
            "regime": self.regime,
            "rho": list(self.rho),
            "centering": self.centering,
            "scaling": self.scaling,
            "checkpoints": [cp.to_json_dict() for cp in self.checkpoints],
            "st_pairs": [pr.to_json_dict() for pr in self.st_pairs],
            "lapse_histogram": [list(x) for x in self.lapse_histogram],
            "lapse_histogram_uncensored": [list(x) for x in self.lapse_histogram_uncensored],
            "kappa_estimate": self.kappa_estimate,
        }

    def samples_csv(self, path=None) -> str | None:
        """Scaled fluctuation samples as ``replicate,m,R_fluct_scaled`` rows."""
        lines = ["replicate,m,R_fluct_scaled"]
        for mm in sorted(self.samples):
            for r, v in enumerate(self.samples[mm]):
                lines.append(f"{r},{mm},{v!r}")
        text = "\n".join(lines) + "\n"
        if path is None:
            return text
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        return None


def run_ensemble(params: ModelParams, n: int, replicates: int, seed: int,
                 checkpoints=None, st_pairs=None, workers: int = 1,
                 paper_centering: bool = False, collect_lapses: bool = False,
                 collect_samples: bool = False) -> EnsembleStats:
    """Simulate independent replicates and aggregate the verification statistics.

    Parameters
    ----------
    checkpoints : iterable of int, optional
        Steps at which proportions and scaled fluctuations are recorded; the
        final step ``n`` is always included.
    st_pairs : iterable of (s, t), optional
        Normalised time pairs, ``0 < s <= t <= 1``.  Below criticality the
        pair is read at steps ``floor(u n)`` and the cross-time covariance is
        scaled by ``1/n``; on the critical line the time change is
        ``floor(n**u)`` with ``sqrt(n**u log n)`` normalisation.
    workers : int
        Thread count; results are byte-identical for every value.

    A superdiffusive model is simulated (the strong law still holds there)
    but carries its no-limit-theorem flag in the regime field.
    """
    require_valid(params)
    if replicates < 2:
        raise ValueError("replicates must be at least 2")
    if n < 1:
        raise ValueError("n must be at least 1")
    report = limit_report(params)
    if report.rho is None:
        raise RegimeError("cannot center fluctuations: strong-law limit undefined "
                          "(lambda2 >= K)")
    rho_r = report.rho[0]
    critical = report.regime.tag is RegimeTag.CRITICAL

    cps = sorted(set(int(m) for m in (checkpoints or [])) | {n})
    if any(m < 1 or m > n for m in cps):
        raise ValueError("checkpoints must lie in [1, n]")
    pairs_in = [(float(s), float(t)) for s, t in (st_pairs or [])]
    for s, t in pairs_in:
        if not (0 < s <= t <= 1):
            raise ValueError("st pairs must satisfy 0 < s <= t <= 1")

    logn = math.log(n) if n > 1 else 1.0
    pair_times = []
    for s, t in pairs_in:
        if critical:
            ms, mt = max(2, int(n ** s)), max(2, int(n ** t))
            norm_s, norm_t = math.sqrt(ms * logn), math.sqrt(mt * logn)
        else:
            ms, mt = max(1, int(s * n)), max(1, int(t * n))
            norm_s = norm_t = math.sqrt(n)
        pair_times.append((s, t, ms, mt, norm_s, norm_t))

    record = sorted(set(cps) | {pt[2] for pt in pair_times} | {pt[3] for pt in pair_times})
    scales = {m: (math.sqrt(m * math.log(m)) if critical and m > 1 else math.sqrt(m))
              for m in record}

    chunk = _chunk_size(n, collect_lapses)
    bounds = [(lo, min(lo + chunk, replicates)) for lo in range(0, replicates, chunk)]
    tasks = [(params, n, seed, lo, hi, np.asarray(record), scales, pair_times,
              rho_r, paper_centering, collect_lapses, collect_samples)
             for lo, hi in bounds]

    # workers only changes the executor, never the chunking or merge order,
    # so results are byte-identical for every worker count
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_chunk_task, tasks))
    else:
        results = [_chunk_task(t) for t in tasks]

    # reduce in chunk-index order: identical output for any worker count
    prop = {m: MomentAccumulator() for m in record}
    fluct = {m: MomentAccumulator() for m in record}
    pair_acc = {(s, t): CovarianceAccumulator() for s, t, *_ in pair_times}
    max_len = max((r.hist_all.size for r in results), default=0)
    hist_all = np.zeros(max_len, dtype=np.int64)
    hist_unc = np.zeros(max_len, dtype=np.int64)
    samples: dict[int, list] = {m: [] for m in record} if collect_samples else {}
    for res in results:
        for m in record:
            prop[m] = prop[m].merge(res.prop[m])
            fluct[m] = fluct[m].merge(res.fluct[m])
        for key in pair_acc:
            pair_acc[key] = pair_acc[key].merge(res.pairs[key])
        if res.hist_all.size:
            hist_all[:res.hist_all.size] += res.hist_all
            hist_unc[:res.hist_unc.size] += res.hist_unc
        if collect_samples:
            for m in record:
                samples[m].append(res.samples[m])

    cp_stats = []
    for m in cps:
        acc = fluct[m]
        v = acc.variance
        cp_stats.append(CheckpointStats(
            m=m, T=params.matrix.K * m + params.T0, count=acc.count,
            mean_proportion=prop[m].mean, se_mean_proportion=prop[m].sem,
            fluct_scaled_var=v, fluct_scaled_var_se=acc.variance_se,
            cov=[[v, -v], [-v, v]],     # B-fluct = -R-fluct per replicate, exactly
            skewness=acc.skewness, excess_kurtosis=acc.excess_kurtosis))
    pair_stats = []
    for (s, t, ms, mt, _, _) in pair_times:
        acc = pair_acc[(s, t)]
        pair_stats.append(PairStats(s=s, t=t, m_s=ms, m_t=mt,
                                    value=acc.covariance, se=acc.covariance_se))

    def hist_pairs(h):
        return tuple((int(k), int(v)) for k, v in enumerate(h) if k > 0 and v > 0)

    return EnsembleStats(
        params=params, n=n, replicates=replicates, seed=seed,
        regime=report.regime.tag.value, rho=report.rho,
        centering="n*rho" if paper_centering else "T*rho",
        scaling=report.scaling or "sqrt(n)",
        checkpoints=tuple(cp_stats), st_pairs=tuple(pair_stats),
        lapse_histogram=hist_pairs(hist_all),
        lapse_histogram_uncensored=hist_pairs(hist_unc),
        samples={m: np.concatenate(v) for m, v in samples.items()} if collect_samples else {},
    )


@dataclass(frozen=True)
class VerificationReport:
    """Outcome of one statistical check, with every raw number attached."""

    kind: str
    passed: bool
    details: dict

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 4

    def to_json_dict(self) -> dict:
        return {"kind": self.kind, "passed": self.passed, "details": self.details}


def verify_lln(stats: EnsembleStats, report: LimitReport,
               se_multiple: float = 4.0, bias_coeff: float = 5.0) -> VerificationReport:
    """Mean proportion at the final checkpoint against the strong-law limit.

    Tolerance is ``se_multiple`` standard errors plus a finite-step bias
    allowance of ``bias_coeff * K / T_n``.
    """
    if report.rho is None:
        raise RegimeError("no strong-law limit to verify")
    cp = stats.final_checkpoint
    K = stats.params.matrix.K
    diff = abs(cp.mean_proportion - report.rho[0])
    allowance = bias_coeff * K / cp.T
    tol = se_multiple * cp.se_mean_proportion + allowance
    z = diff / cp.se_mean_proportion if cp.se_mean_proportion > 0 else math.inf * (diff > 0)
    return VerificationReport(kind="lln", passed=bool(diff <= tol), details={
        "m": cp.m, "mean_proportion": cp.mean_proportion, "rho_R": report.rho[0],
        "abs_diff": diff, "se": cp.se_mean_proportion, "z": float(z),
        "bias_allowance": allowance, "tolerance": tol,
        "replicates": stats.replicates,
    })


#: relative tolerance on the scaled variance, by regime
CLT_REL_TOL = {"diffusive": 0.05, "degenerate": 0.05, "critical": 0.12}
SKEW_WINDOW = 0.1
EXKURT_WINDOW = 0.25


def verify_clt(stats: EnsembleStats, report: LimitReport, kappa: float | None = None,
               rel_tol: float | None = None, skew_window: float = SKEW_WINDOW,
               kurt_window: float = EXKURT_WINDOW, ks: bool = False,
               ks_p_threshold: float = 1e-3) -> VerificationReport:
    """Scaled fluctuation variance against the calibrated Gaussian covariance.

    The target is ``kappa * sigma_signfix[0][0]`` where ``sigma_signfix`` is
    the sign-corrected covariance form and ``kappa`` defaults to the scale
    hypothesis ``K`` (equivalently, the target is ``sigma_calibrated``).
    Normality is checked through the standardized third and fourth moments;
    ``ks=True`` additionally runs a Kolmogorov-Smirnov test of the scaled
    red fluctuation against the target Gaussian (requires an ensemble run
    with ``collect_samples=True``; at large replicate counts this test also
    detects benign finite-n bias, hence the permissive default threshold).
    """
    if stats.regime not in CLT_REL_TOL:
        raise RegimeError(f"no Gaussian limit to verify in regime {stats.regime!r}")
    if report.sigma_calibrated is None:
        raise RegimeError("report carries no covariance")
    cp = stats.final_checkpoint
    base = report.sigma_calibrated[0][0] / report.kappa_hypothesis
    kap = report.kappa_hypothesis if kappa is None else kappa
    target = kap * base
    tol = CLT_REL_TOL[stats.regime] if rel_tol is None else rel_tol
    rel_err = abs(cp.fluct_scaled_var - target) / target
    variance_ok = rel_err < tol
    normal_ok = abs(cp.skewness) < skew_window and abs(cp.excess_kurtosis) < kurt_window
    flags = []
    if stats.regime == "degenerate":
        flags.append("outside_theorem: lambda2 = 0")
    details = {
        "m": cp.m, "empirical_var": cp.fluct_scaled_var,
        "empirical_var_se": cp.fluct_scaled_var_se,
        "target": target, "kappa": kap, "sigma_paper": None if report.sigma_paper is None
        else report.sigma_paper[0][0],
        "rel_err": rel_err, "rel_tol": tol, "variance_ok": bool(variance_ok),
        "skewness": cp.skewness, "excess_kurtosis": cp.excess_kurtosis,
        "skew_window": skew_window, "kurt_window": kurt_window,
        "normality_ok": bool(normal_ok), "replicates": stats.replicates,
        "flags": flags,
    }
    passed = variance_ok and normal_ok
    if ks:
        if cp.m not in stats.samples:
            raise ValueError("KS test needs samples: run the ensemble with "
                             "collect_samples=True")
        g = stats.samples[cp.m]
        ks_stat, ks_p = sps.kstest(g, "norm", args=(0.0, math.sqrt(target)))
        ks_ok = bool(ks_p > ks_p_threshold)
        details.update({"ks_stat": float(ks_stat), "ks_pvalue": float(ks_p),
                        "ks_p_threshold": ks_p_threshold, "ks_ok": ks_ok})
        passed = passed and ks_ok
    return VerificationReport(kind="clt", passed=bool(passed), details=details)


def verify_fclt(stats: EnsembleStats, report: LimitReport, kappa: float | None = None,
                rel_tol: float = 0.10, noise_multiple: float = 4.0) -> VerificationReport:
    """Cross-time covariances against the kernel, published exponent and corrected.

    Below criticality each pair is compared with
    ``kappa*s*(t/s)**e * sigma_signfix`` for both exponent conventions
    (``e = lambda2`` as published, ``e = lambda2/K`` as the conditional
    expectation identity requires; they coincide for K = 1).  ``passed``
    reflects the published-exponent target.  On the critical line the target
    is ``kappa*s*sigma_signfix`` and t-independence across pairs sharing s is
    additionally checked within ``noise_multiple`` combined standard errors.
    """
    if not stats.st_pairs:
        raise ValueError("ensemble carries no (s, t) pairs")
    if stats.regime not in CLT_REL_TOL:
        raise RegimeError(f"no kernel to verify in regime {stats.regime!r}")
    if report.sigma_calibrated is None:
        raise RegimeError("report carries no covariance")
    base = report.sigma_calibrated[0][0] / report.kappa_hypothesis
    kap = report.kappa_hypothesis if kappa is None else kappa
    lam2 = report.kernel_exponent
    K = stats.params.matrix.K
    critical = stats.regime == "critical"
    rows = []
    all_spec_ok = True
    all_corrected_ok = True
    for pr in stats.st_pairs:
        if critical:
            target_spec = target_corr = kap * pr.s * base
        else:
            ratio = pr.t / pr.s
            target_spec = kap * pr.s * ratio ** lam2 * base
            target_corr = kap * pr.s * ratio ** (lam2 / K) * base
        err_spec = abs(pr.value - target_spec) / abs(target_spec)
        err_corr = abs(pr.value - target_corr) / abs(target_corr)
        ok_spec = bool(err_spec < rel_tol)
        ok_corr = bool(err_corr < rel_tol)
        all_spec_ok &= ok_spec
        all_corrected_ok &= ok_corr
        rows.append({"s": pr.s, "t": pr.t, "m_s": pr.m_s, "m_t": pr.m_t,
                     "empirical": pr.value, "se": pr.se,
                     "target_published_exponent": target_spec,
                     "rel_err_published": err_spec, "ok_published": ok_spec,
                     "target_corrected_exponent": target_corr,
                     "rel_err_corrected": err_corr, "ok_corrected": ok_corr})
    details = {"pairs": rows, "rel_tol": rel_tol, "kappa": kap,
               "replicates": stats.replicates}
    passed = all_spec_ok
    if critical:
        by_s: dict[float, list] = {}
        for pr in stats.st_pairs:
            by_s.setdefault(pr.s, []).append(pr)
        indep = []
        indep_ok = True
        for s, group in by_s.items():
            for i in range(len(group)):
                for j in range(i + 1, len(group)):
                    gi, gj = group[i], group[j]
                    gap = abs(gi.value - gj.value)
                    tol = noise_multiple * (gi.se + gj.se)
                    ok = bool(gap <= tol)
                    indep_ok &= ok
                    indep.append({"s": s, "t1": gi.t, "t2": gj.t, "gap": gap,
                                  "noise_tolerance": tol, "ok": ok})
        details["t_independence"] = indep
        details["t_independence_ok"] = indep_ok
        passed = all_spec_ok and indep_ok
    details["ok_published_all"] = all_spec_ok
    details["ok_corrected_all"] = all_corrected_ok
    return VerificationReport(kind="fclt", passed=bool(passed), details=details)


@dataclass(frozen=True)
class KappaCalibration:
    """Per-point and family-level estimates of the covariance scale kappa."""

    kappa_hypothesis: float
    points: tuple[dict, ...]
    family_kappa: float
    family_se: float
    family_ci: tuple[float, float]
    hypothesis_contained: int
    hypothesis_rejected: bool

    def to_json_dict(self) -> dict:
        return {
            "kappa_hypothesis": self.kappa_hypothesis,
            "points": [dict(p) for p in self.points],
            "family_kappa": self.family_kappa,
            "family_se": self.family_se,
            "family_ci": list(self.family_ci),
            "hypothesis_contained": self.hypothesis_contained,
            "hypothesis_rejected": self.hypothesis_rejected,
        }


def calibrate_kappa(family, n: int, replicates: int, seed: int,
                    workers: int = 1) -> KappaCalibration:
    """Estimate kappa = empirical scaled variance / sigma_signfix over a family.

    Every point must share the balance constant K (kappa's hypothesised
    value).  Points with ``theta = 0`` use the exact i.i.d. per-step variance
    ``(a-c)^2 p (1-p)`` instead of Monte Carlo, giving a zero-width interval.
    The K-hypothesis is rejected when more than one point's 95% interval
    misses K.
    """
    family = list(family)
    if not family:
        raise ValueError("family must contain at least one parameter point")
    Ks = {prm.matrix.K for prm in family}
    if len(Ks) != 1:
        raise ValueError("all family members must share the same K")
    K = float(Ks.pop())
    points = []
    contained = 0
    for idx, prm in enumerate(family):
        rep = limit_report(prm)
        if rep.sigma_calibrated is None or rep.regime.tag is RegimeTag.CRITICAL:
            raise RegimeError("kappa calibration requires a subcritical model")
        base = rep.sigma_calibrated[0][0] / rep.kappa_hypothesis
        m = prm.matrix
        if float(prm.theta) == 0.0:
            p = float(prm.p)
            emp = (m.a - m.c) ** 2 * p * (1 - p)
            kap = emp / base
            se = 0.0
            inside = abs(kap - K) <= 1e-9
            mode = "exact"
        else:
            stats = run_ensemble(prm, n=n, replicates=replicates,
                                 seed=seed + idx, workers=workers)
            cp = stats.final_checkpoint
            emp = cp.fluct_scaled_var
            kap = emp / base
            se = cp.fluct_scaled_var_se / base
            inside = abs(kap - K) <= 1.96 * se
            mode = "monte_carlo"
        contained += bool(inside)
        points.append({
            "params": prm.describe(), "mode": mode, "empirical_var": emp,
            "sigma_signfix": base, "kappa": kap, "se": se,
            "ci95": [kap - 1.96 * se, kap + 1.96 * se],
            "contains_K": bool(inside),
        })
    kappas = [pt["kappa"] for pt in points]
    fam_k = float(np.mean(kappas))
    fam_se = float(math.sqrt(sum(pt["se"] ** 2 for pt in points)) / len(points))
    rejected = contained < len(family) - 1
    return KappaCalibration(
        kappa_hypothesis=K, points=tuple(points), family_kappa=fam_k,
        family_se=fam_se, family_ci=(fam_k - 1.96 * fam_se, fam_k + 1.96 * fam_se),
        hypothesis_contained=contained, hypothesis_rejected=rejected)


@dataclass(frozen=True)
class LapseStats:
    """Lapse-length histogram diagnostics and geometric goodness of fit."""

    theta: float
    n: int
    replicates: int
    total_lapses: int
    mean_count_per_trajectory: float
    expected_count_per_trajectory: float
    mean_length: float | None
    mean_length_se: float | None
    expected_length: float | None
    chi2_stat: float | None
    chi2_pvalue: float | None
    chi2_bins: int | None
    passed: bool
    details: dict

    def to_json_dict(self) -> dict:
        out = {k: getattr(self, k) for k in (
            "theta", "n", "replicates", "total_lapses",
            "mean_count_per_trajectory", "expected_count_per_trajectory",
            "mean_length", "mean_length_se", "expected_length",
            "chi2_stat", "chi2_pvalue", "chi2_bins", "passed")}
        out["details"] = self.details
        return out


def lapse_statistics(stats: EnsembleStats, p_threshold: float = 0.01,
                     min_expected: float = 5.0) -> LapseStats:
    """Compare lapse lengths with the geometric law P(L = k) = theta (1-theta)^(k-1).

    Runs cut off by the end of a trajectory are excluded from the fit (their
    length is censored) but counted in the histogram.  For ``theta`` 0 or 1
    only the structural facts are checked: a single lapse of length n per
    trajectory, or no lapses at all.
    """
    th = float(stats.params.theta)
    n, reps = stats.n, stats.replicates
    hist_all = dict(stats.lapse_histogram)
    total = sum(hist_all.values())
    mean_count = total / reps
    expected_count = n * th * (1 - th)

    if th == 1.0:
        return LapseStats(theta=th, n=n, replicates=reps, total_lapses=total,
                          mean_count_per_trajectory=mean_count,
                          expected_count_per_trajectory=0.0,
                          mean_length=None, mean_length_se=None, expected_length=None,
                          chi2_stat=None, chi2_pvalue=None, chi2_bins=None,
                          passed=total == 0, details={"note": "theta = 1: no lapses"})
    if th == 0.0:
        ok = hist_all == {n: reps}
        return LapseStats(theta=th, n=n, replicates=reps, total_lapses=total,
                          mean_count_per_trajectory=mean_count,
                          expected_count_per_trajectory=0.0,
                          mean_length=None, mean_length_se=None, expected_length=None,
                          chi2_stat=None, chi2_pvalue=None, chi2_bins=None,
                          passed=ok,
                          details={"note": "theta = 0: one full-length lapse each"})

    hist = dict(stats.lapse_histogram_uncensored)
    n_unc = sum(hist.values())
    if n_unc == 0:
        raise ValueError("no uncensored lapses observed; increase n or replicates")
    lengths = np.array(sorted(hist))
    counts = np.array([hist[k] for k in lengths], dtype=float)
    mean_len = float((lengths * counts).sum() / n_unc)
    var_len = float(((lengths - mean_len) ** 2 * counts).sum() / max(n_unc - 1, 1))
    se_len = math.sqrt(var_len / n_unc)

    # pool the geometric tail so every expected bin count stays >= min_expected
    L = 1
    while n_unc * th * (1 - th) ** L >= min_expected and L < n:
        L += 1
    obs = np.zeros(L + 1)
    for k, cnt in hist.items():
        obs[min(k, L + 1) - 1] += cnt
    exp = np.array([n_unc * th * (1 - th) ** (k - 1) for k in range(1, L + 1)]
                   + [n_unc * (1 - th) ** L])
    chi2, pval = sps.chisquare(obs, exp)
    count_se = math.sqrt(max(mean_count, 1.0) / reps)   # Poisson-scale noise
    count_ok = abs(mean_count - expected_count) <= 4 * count_se + 1.0
    passed = bool(pval > p_threshold and count_ok)
    return LapseStats(
        theta=th, n=n, replicates=reps, total_lapses=total,
        mean_count_per_trajectory=mean_count,
        expected_count_per_trajectory=expected_count,
        mean_length=mean_len, mean_length_se=se_len, expected_length=1.0 / th,
        chi2_stat=float(chi2), chi2_pvalue=float(pval), chi2_bins=L + 1,
        passed=passed,
        details={"p_threshold": p_threshold, "uncensored_lapses": int(n_unc),
                 "count_ok": bool(count_ok)})
