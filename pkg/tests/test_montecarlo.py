import json
import math

import numpy as np
import pytest

import lapse_urn.montecarlo as mc
from lapse_urn.limits import limit_report, preset
from lapse_urn.model import ModelParams, simulate
from lapse_urn.oracle import exact_moments, moment_recursion
from lapse_urn.spectral import RegimeError, lambda2_of


def make(matrix, p, theta, R0=1, B0=1):
    return ModelParams(matrix=matrix, p=p, theta=theta, R0=R0, B0=B0)


def ensemble_json(stats):
    return json.dumps(stats.to_json_dict(), sort_keys=True)


class TestEngine:
    def test_worker_count_invariance(self):
        params = make(preset("krw"), 0.6, 0.7)
        kw = dict(n=500, replicates=6000, seed=11, checkpoints=[100, 500],
                  st_pairs=[(0.5, 1.0)], collect_lapses=True)
        ref = ensemble_json(mc.run_ensemble(params, workers=1, **kw))
        for w in (2, 4, 8):
            assert ensemble_json(mc.run_ensemble(params, workers=w, **kw)) == ref

    def test_replicates_replayable_by_scalar_simulator(self):
        params = make(preset("a3c1"), 0.35, 0.8)
        n, seed = 200, 77
        stats = mc.run_ensemble(params, n=n, replicates=64, seed=seed,
                                collect_samples=True)
        cp = stats.final_checkpoint
        g = stats.samples[n]
        R = g * math.sqrt(n) + cp.T * stats.rho[0]
        for r in (0, 13, 63):
            traj = simulate(params, n, seed=seed, replicate=r)
            assert traj.states[-1].R == pytest.approx(R[r])

    def test_deterministic_replicates_zero_variance(self):
        params = make(preset("krw"), 1.0, 0.0)   # B-column always
        stats = mc.run_ensemble(params, n=100, replicates=50, seed=0)
        assert stats.final_checkpoint.fluct_scaled_var == 0.0

    def test_symmetric_mean_proportion(self):
        params = make(preset("krw"), 0.5, 0.5)
        stats = mc.run_ensemble(params, n=1000, replicates=1000, seed=5)
        cp = stats.final_checkpoint
        assert abs(cp.mean_proportion - 0.5) < 3 * cp.se_mean_proportion + 0.005

    def test_rank_one_covariance(self):
        stats = mc.run_ensemble(make(preset("a2c0"), 0.7, 0.6),
                                n=300, replicates=500, seed=9)
        cov = np.asarray(stats.final_checkpoint.cov)
        assert cov[0, 0] == -cov[0, 1] == -cov[1, 0] == cov[1, 1]

    def test_matches_exact_moments(self):
        params = make(preset("krw"), 0.75, 0.5)
        n = 500
        stats = mc.run_ensemble(params, n=n, replicates=20_000, seed=31)
        mean, cov = exact_moments(params, n)
        cp = stats.final_checkpoint
        assert abs(cp.mean_proportion * cp.T - mean[0]) < 4 * cp.se_mean_proportion * cp.T
        emp_var = cp.fluct_scaled_var * n
        assert abs(emp_var - cov[0, 0]) < 4 * cp.fluct_scaled_var_se * n

    def test_superdiffusive_runs_with_flag(self):
        params = make(preset("a2c0"), 1.0, 1.0)
        stats = mc.run_ensemble(params, n=100, replicates=100, seed=1)
        assert stats.regime == "superdiffusive"

    def test_lln_violated_rejected(self):
        with pytest.raises(RegimeError):
            mc.run_ensemble(make(preset("pure", K=1), 1.0, 1.0),
                            n=10, replicates=10, seed=0)

    def test_checkpoint_validation(self):
        params = make(preset("krw"), 0.6, 0.5)
        with pytest.raises(ValueError):
            mc.run_ensemble(params, n=10, replicates=4, seed=0, checkpoints=[50])
        with pytest.raises(ValueError):
            mc.run_ensemble(params, n=10, replicates=4, seed=0, st_pairs=[(0.0, 1.0)])
        with pytest.raises(ValueError):
            mc.run_ensemble(params, n=10, replicates=1, seed=0)

    def test_paper_centering_shifts_mean(self):
        params = make(preset("krw"), 0.75, 0.5)   # K = 3: centerings differ
        a = mc.run_ensemble(params, n=200, replicates=100, seed=3)
        b = mc.run_ensemble(params, n=200, replicates=100, seed=3,
                            paper_centering=True)
        assert a.centering == "T*rho" and b.centering == "n*rho"
        assert a.final_checkpoint.fluct_scaled_var == pytest.approx(
            b.final_checkpoint.fluct_scaled_var)   # variance unaffected by centering
        assert abs(a.final_checkpoint.mean_proportion
                   - b.final_checkpoint.mean_proportion) < 1e-12

    def test_samples_csv_format(self):
        stats = mc.run_ensemble(make(preset("krw"), 0.6, 0.5), n=50,
                                replicates=8, seed=2, collect_samples=True)
        lines = stats.samples_csv().splitlines()
        assert lines[0] == "replicate,m,R_fluct_scaled"
        assert len(lines) == 9


class TestVerifyLln:
    def test_pass(self):
        params = make(preset("krw"), 0.75, 0.5)
        rep = limit_report(params)
        stats = mc.run_ensemble(params, n=2000, replicates=5000, seed=21)
        out = mc.verify_lln(stats, rep)
        assert out.passed
        assert out.exit_code == 0

    def test_negative_control(self):
        import dataclasses
        params = make(preset("krw"), 0.75, 0.5)
        rep = limit_report(params)
        wrong = dataclasses.replace(rep, rho=(0.9, 0.1))
        stats = mc.run_ensemble(params, n=2000, replicates=5000, seed=21)
        out = mc.verify_lln(stats, wrong)
        assert not out.passed
        assert out.details["z"] > 50
        assert out.exit_code == 4


class TestVerifyClt:
    def test_matches_exact_finite_n_variance(self):
        # engine-level check: empirical variance against the exact recursion
        params = make(preset("a2c0"), 0.8, 0.7)
        n = 1500
        stats = mc.run_ensemble(params, n=n, replicates=20_000, seed=41)
        exact = moment_recursion(params, n).variance / n
        cp = stats.final_checkpoint
        assert abs(cp.fluct_scaled_var - exact) < 5 * cp.fluct_scaled_var_se

    def test_pass_elephant(self):
        params = make(preset("pure", K=1), 0.6, 1.0)
        rep = limit_report(params)
        stats = mc.run_ensemble(params, n=2000, replicates=20_000, seed=8)
        out = mc.verify_clt(stats, rep)
        assert out.passed
        assert out.details["target"] == pytest.approx(0.41667, rel=1e-3)

    def test_degenerate_flagged_but_testable(self):
        params = make(preset("krw"), 0.5, 0.0)
        rep = limit_report(params)
        stats = mc.run_ensemble(params, n=1000, replicates=20_000, seed=13)
        out = mc.verify_clt(stats, rep)
        assert out.passed
        assert out.details["target"] == pytest.approx(0.25)
        assert any("outside_theorem" in f for f in out.details["flags"])

    def test_regime_mismatch(self):
        params = make(preset("a2c0"), 1.0, 1.0)
        stats = mc.run_ensemble(params, n=50, replicates=10, seed=0)
        with pytest.raises(RegimeError):
            mc.verify_clt(stats, limit_report(make(preset("krw"), 0.6, 0.5)))

    def test_ks_option(self):
        params = make(preset("pure", K=1), 0.6, 1.0)
        rep = limit_report(params)
        stats = mc.run_ensemble(params, n=2000, replicates=20_000, seed=8,
                                collect_samples=True)
        out = mc.verify_clt(stats, rep, ks=True)
        assert out.details["ks_pvalue"] > 1e-3
        assert out.details["ks_ok"] and out.passed
        # samples are mandatory for the KS variant
        bare = mc.run_ensemble(params, n=200, replicates=50, seed=8)
        with pytest.raises(ValueError):
            mc.verify_clt(bare, rep, ks=True)


class TestVerifyFclt:
    def test_matches_exact_cross_covariance(self):
        # Cov(F_s, F_t) = Var(F_s) * prod(1 + lambda2/T_m): exact at finite n
        params = make(preset("krw"), 1.0, 1.0)
        n, s = 1600, 0.5
        ms = int(s * n)
        stats = mc.run_ensemble(params, n=n, replicates=30_000, seed=55,
                                st_pairs=[(s, 1.0)])
        var_s = moment_recursion(params, ms).variance
        lam2 = float(lambda2_of(params))
        grow = np.prod(1.0 + lam2 / (3.0 * np.arange(ms, n) + 2.0))
        exact = var_s * grow / n
        pr = stats.st_pairs[0]
        assert abs(pr.value - exact) < 5 * pr.se

    def test_published_exponent_fails_for_K3(self):
        # for K != 1 the raw-eigenvalue exponent overstates the kernel growth;
        # the conditional-expectation identity forces lambda2/K
        params = make(preset("krw"), 1.0, 1.0)
        rep = limit_report(params)
        stats = mc.run_ensemble(params, n=1600, replicates=30_000, seed=55,
                                st_pairs=[(0.5, 1.0)])
        out = mc.verify_fclt(stats, rep, rel_tol=0.25)
        row = out.details["pairs"][0]
        assert not row["ok_published"]
        assert row["rel_err_corrected"] < row["rel_err_published"]

    def test_corrected_exponent_passes_elephant(self):
        params = make(preset("pure", K=1), 0.65, 1.0)
        rep = limit_report(params)
        stats = mc.run_ensemble(params, n=2000, replicates=20_000, seed=19,
                                st_pairs=[(0.5, 1.0), (0.25, 0.75)])
        out = mc.verify_fclt(stats, rep, rel_tol=0.15)
        assert out.details["ok_corrected_all"]
        assert out.passed    # K = 1: published exponent coincides

    def test_requires_pairs(self):
        params = make(preset("krw"), 0.6, 0.5)
        stats = mc.run_ensemble(params, n=100, replicates=10, seed=0)
        with pytest.raises(ValueError):
            mc.verify_fclt(stats, limit_report(params))

    def test_equal_time_pair_reduces_to_variance(self):
        # (s, t) = (1, 1): the kernel value is just the scaled variance check
        params = make(preset("krw"), 0.7, 0.4)
        stats = mc.run_ensemble(params, n=400, replicates=2000, seed=23,
                                st_pairs=[(1.0, 1.0)])
        pr = stats.st_pairs[0]
        cp = stats.final_checkpoint
        assert pr.m_s == pr.m_t == 400
        assert pr.value == pytest.approx(cp.fluct_scaled_var, rel=1e-12)


class TestCalibration:
    def test_exact_points_give_K(self):
        for name in ("krw", "a2c0", "a3c1"):
            family = [make(preset(name), p, 0.0) for p in (0.3, 0.5, 0.7)]
            cal = mc.calibrate_kappa(family, n=100, replicates=10, seed=0)
            K = preset(name).K
            for pt in cal.points:
                assert pt["mode"] == "exact"
                assert pt["kappa"] == pytest.approx(K, abs=1e-9)
            assert not cal.hypothesis_rejected

    def test_monte_carlo_family(self):
        family = [make(preset("pure", K=2), p, th)
                  for p, th in [(0.6, 0.5), (0.3, 0.4), (0.55, 1.0)]]
        cal = mc.calibrate_kappa(family, n=2000, replicates=10_000, seed=17)
        assert cal.kappa_hypothesis == 2.0
        assert cal.hypothesis_contained >= 2
        assert not cal.hypothesis_rejected
        assert cal.family_kappa == pytest.approx(2.0, rel=0.05)

    def test_mixed_K_rejected(self):
        with pytest.raises(ValueError):
            mc.calibrate_kappa([make(preset("krw"), 0.5, 0.0),
                                make(preset("pure", K=1), 0.5, 0.0)],
                               n=10, replicates=10, seed=0)


class TestLapseStatistics:
    def test_geometric_fit(self):
        params = make(preset("krw"), 0.6, 0.5)
        stats = mc.run_ensemble(params, n=5000, replicates=100, seed=12,
                                collect_lapses=True)
        lap = mc.lapse_statistics(stats)
        assert lap.chi2_pvalue > 0.01
        assert abs(lap.mean_length - 2.0) < 3 * lap.mean_length_se
        assert abs(lap.mean_count_per_trajectory - lap.expected_count_per_trajectory) \
            < 0.05 * lap.expected_count_per_trajectory
        assert lap.passed

    def test_theta_one_no_lapses(self):
        stats = mc.run_ensemble(make(preset("krw"), 0.6, 1.0), n=500,
                                replicates=20, seed=3, collect_lapses=True)
        lap = mc.lapse_statistics(stats)
        assert lap.total_lapses == 0
        assert lap.passed

    def test_theta_zero_single_full_lapse(self):
        stats = mc.run_ensemble(make(preset("krw"), 0.6, 0.0), n=500,
                                replicates=20, seed=3, collect_lapses=True)
        lap = mc.lapse_statistics(stats)
        assert dict(stats.lapse_histogram) == {500: 20}
        assert lap.passed

    def test_mean_length_geometric_theta(self):
        for th in (0.3, 0.7):
            stats = mc.run_ensemble(make(preset("krw"), 0.6, th), n=4000,
                                    replicates=60, seed=29, collect_lapses=True)
            lap = mc.lapse_statistics(stats)
            assert abs(lap.mean_length - 1 / th) < 4 * lap.mean_length_se


class TestSchemas:
    def test_ensemble_schema(self):
        import jsonschema
        from importlib import resources
        schema = json.loads(resources.files("lapse_urn.schemas")
                            .joinpath("ensemble.json").read_text())
        stats = mc.run_ensemble(make(preset("krw"), 0.6, 0.5), n=100,
                                replicates=20, seed=1, st_pairs=[(0.5, 1.0)],
                                collect_lapses=True)
        jsonschema.validate(stats.to_json_dict(), schema)

    def test_calibration_schema(self):
        import jsonschema
        from importlib import resources
        schema = json.loads(resources.files("lapse_urn.schemas")
                            .joinpath("calibration.json").read_text())
        cal = mc.calibrate_kappa([make(preset("krw"), 0.4, 0.0)],
                                 n=10, replicates=10, seed=0)
        jsonschema.validate(cal.to_json_dict(), schema)
