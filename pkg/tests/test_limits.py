import json
from fractions import Fraction

import numpy as np
import pytest

from lapse_urn.limits import (fclt_kernel, fclt_kernel_calibrated, limit_report,
                              lln_limit, omegas, preset, sigma_critical,
                              sigma_critical_calibrated, sigma_diffusive,
                              sigma_diffusive_calibrated)
from lapse_urn.model import ModelParams
from lapse_urn.oracle import moment_recursion
from lapse_urn.spectral import RegimeError, eigen

GRID = [i / 10 for i in range(11)]


def make(matrix, p, theta):
    return ModelParams(matrix=matrix, p=p, theta=theta)


class TestPresets:
    def test_krw(self):
        m = preset("krw")
        assert (m.a, m.b, m.c, m.d, m.K) == (2, 1, 1, 2, 3)

    def test_a3c1(self):
        m = preset("a3c1")
        assert (m.a, m.b, m.c, m.d, m.K) == (3, 0, 1, 2, 3)

    def test_a2c0(self):
        m = preset("a2c0")
        assert (m.a, m.b, m.c, m.d, m.K) == (2, 1, 0, 3, 3)

    def test_pure(self):
        m = preset("pure", K=2)
        assert (m.a, m.b, m.c, m.d) == (2, 0, 0, 2)
        assert preset("pure(1)") == preset("pure", K=1)

    def test_unknown(self):
        with pytest.raises(ValueError):
            preset("nope")
        with pytest.raises(ValueError):
            preset("pure")


class TestLln:
    def test_symmetric_case(self):
        for th in (0.0, 0.3, 1.0):
            rho = lln_limit(make(preset("krw"), 0.5, th))
            assert rho == pytest.approx((0.5, 0.5))

    def test_krw_closed_form(self):
        for p in GRID:
            for th in GRID:
                rho = lln_limit(make(preset("krw"), p, th))
                assert rho[0] == pytest.approx((2 - p) / (3 - th * (2 * p - 1)))
                assert rho[0] + rho[1] == pytest.approx(1.0, abs=1e-14)

    def test_negative_lambda2(self):
        rho = lln_limit(make(preset("a2c0"), 0.25, 0.5))
        assert rho[0] == pytest.approx(3 / 7)

    def test_pure_closed_form(self):
        for K in (1, 3):
            for p in (0.2, 0.6):
                for th in (0.4, 1.0):
                    rho = lln_limit(make(preset("pure", K=K), p, th))
                    assert rho[0] == pytest.approx((1 - p) / (1 - th * (2 * p - 1)))

    def test_hypothesis_violated(self):
        with pytest.raises(RegimeError):
            lln_limit(make(preset("pure", K=1), 1.0, 1.0))


class TestOmegas:
    def test_krw_reduction(self):
        for p in GRID:
            for th in GRID:
                w1, w2 = omegas(make(preset("krw"), p, th))
                assert w1 == pytest.approx((1 - th) * (2 * p - 1), abs=1e-13)
                assert w2 == pytest.approx(2 - p)

    def test_pure_reduction(self):
        for K in (1, 2):
            for p in GRID:
                for th in GRID:
                    w1, w2 = omegas(make(preset("pure", K=K), p, th))
                    assert w1 == pytest.approx(K * (1 - th) * (2 * p - 1), abs=1e-13)
                    assert w2 == pytest.approx(K * (1 - p))

    def test_iid_symmetric(self):
        assert omegas(make(preset("krw"), 0.5, 0.0)) == pytest.approx((0.0, 1.5))

    def test_matches_u2(self):
        for p in (0.1, 0.4, 0.8):
            for th in (0.2, 0.7, 1.0):
                params = make(preset("a3c1"), p, th)
                sd = eigen(params)
                w1, w2 = omegas(params)
                assert w1 == pytest.approx(sd.u2[0] - sd.u2[1], abs=1e-14)
                assert w2 == pytest.approx(sd.u2[1], abs=1e-14)


class TestSigmaDiffusive:
    def test_special_case_b_d_zero(self):
        sig = sigma_diffusive(make(preset("pure", K=1), 0.6, 1.0))
        assert sig[0, 0] == pytest.approx(0.16 / 0.384)
        # published special form for b = d = 0
        p, th, K = 0.6, 1.0, 1
        expect = K * (1 - p) * ((2 * p - 1) * (1 - th) + (1 - p)) / (
            (1 - 2 * th * (2 * p - 1)) * (1 - th * (2 * p - 1)) ** 2)
        assert sig[0, 0] == pytest.approx(expect)

    def test_special_form_matches_general_on_grid(self):
        for K in (1, 2):
            m = preset("pure", K=K)
            for p in GRID:
                for th in GRID:
                    lam2 = th * (2 * p - 1) * K
                    if 2 * lam2 >= K:
                        continue
                    sig = sigma_diffusive(make(m, p, th))
                    expect = K * (1 - p) * ((2 * p - 1) * (1 - th) + (1 - p)) / (
                        (1 - 2 * th * (2 * p - 1)) * (1 - th * (2 * p - 1)) ** 2)
                    assert sig[0, 0] == pytest.approx(expect, rel=1e-12, abs=1e-12)

    def test_rank_one_structure(self):
        sig = sigma_diffusive(make(preset("a3c1"), 0.3, 0.8))
        assert sig[0, 0] == pytest.approx(-sig[0, 1])
        assert sig[0, 0] == pytest.approx(sig[1, 1])
        assert abs(sig.sum()) < 1e-12

    def test_iid_krw_paper_scalar(self):
        sig = sigma_diffusive(make(preset("krw"), 0.5, 0.0))
        assert sig[0, 0] == pytest.approx(20.25 / 27)

    def test_regime_errors(self):
        with pytest.raises(RegimeError):
            sigma_diffusive(make(preset("a2c0"), Fraction(7, 8), 1))
        with pytest.raises(RegimeError):
            sigma_diffusive(make(preset("a2c0"), 1.0, 1.0))

    def test_calibrated_iid_matches_ground_truth(self):
        # theta = 0: increments are i.i.d., per-step variance (a-c)^2 p(1-p)
        for name, p in [("krw", 0.5), ("krw", 0.3), ("a2c0", 0.4), ("a3c1", 0.7)]:
            m = preset(name)
            sig = sigma_diffusive_calibrated(make(m, p, 0.0))
            assert sig[0, 0] == pytest.approx((m.a - m.c) ** 2 * p * (1 - p))

    def test_calibrated_matches_exact_moments(self):
        # the calibrated scalar is the large-n limit of Var(R_n)/n
        cases = [("krw", 0.75, 0.5), ("a2c0", 0.8, 0.7), ("a3c1", 0.2, 0.4),
                 ("pure(2)", 0.6, 1.0)]
        for name, p, th in cases:
            params = make(preset(name), p, th)
            sig = sigma_diffusive_calibrated(params)[0, 0]
            exact = moment_recursion(params, 200_000)
            assert exact.variance / 200_000 == pytest.approx(sig, rel=0.02)

    def test_scalar_diverges_towards_criticality(self):
        m = preset("pure", K=1)
        vals = [sigma_diffusive(make(m, p, 1.0))[0, 0]
                for p in (0.6, 0.65, 0.7, 0.72, 0.74, 0.7499)]
        assert all(x < y for x, y in zip(vals, vals[1:]))
        assert vals[-1] > 100


class TestSigmaCritical:
    def test_elephant_critical(self):
        params = make(preset("pure", K=1), Fraction(3, 4), 1)
        sig, cc = sigma_critical(params)
        assert cc.omega1_c == pytest.approx(0.0)
        assert cc.alpha_c == pytest.approx(0.5)
        assert cc.beta_c == pytest.approx(0.5)
        assert sig[0, 0] == pytest.approx(0.25)
        assert sigma_critical_calibrated(params)[0, 0] == pytest.approx(0.25)

    def test_a2c0_critical(self):
        params = make(preset("a2c0"), Fraction(7, 8), 1)
        sig, cc = sigma_critical(params)
        assert cc.omega1_c == pytest.approx(1.0)
        assert cc.alpha_c == pytest.approx(1.0)
        assert cc.beta_c == pytest.approx(1.5)
        assert sig[0, 0] == pytest.approx(2.3125 / 2.25)
        assert abs(sig.sum()) < 1e-12

    def test_wrong_regime(self):
        with pytest.raises(RegimeError):
            sigma_critical(make(preset("krw"), 0.75, 0.5))

    def test_constants_match_pure_reduction(self):
        for K in (1, 2, 3):
            for p in GRID:
                params = make(preset("pure", K=K), p, 1.0)
                from lapse_urn.limits import critical_constants
                cc = critical_constants(params)
                assert cc.omega1_c == pytest.approx(K / 2 * (4 * p - 3), abs=1e-12)
                assert cc.alpha_c == pytest.approx(2 * K * K * (1 - p), abs=1e-12)
                assert cc.beta_c == pytest.approx(cc.alpha_c, abs=1e-12)


class TestKernel:
    def test_equal_times(self):
        params = make(preset("krw"), 0.75, 0.5)
        sig = sigma_diffusive(params)
        for t in (0.25, 1.0):
            assert np.allclose(fclt_kernel(params, t, t), t * sig)

    def test_krw_bagchi_pal_hand_value(self):
        params = make(preset("krw"), 1.0, 1.0)
        sig = sigma_diffusive(params)
        k = fclt_kernel(params, 0.5, 1.0)
        assert k[0, 0] == pytest.approx(1.0 * sig[0, 0])   # 0.5 * 2^1

    def test_critical_kernel_t_independent(self):
        params = make(preset("pure", K=1), Fraction(3, 4), 1)
        k1 = fclt_kernel(params, 0.5, 0.6)
        k2 = fclt_kernel(params, 0.5, 1.0)
        assert np.allclose(k1, k2)
        assert k1[0, 0] == pytest.approx(0.5 * 0.25)

    def test_calibrated_exponent_normalised(self):
        params = make(preset("krw"), 1.0, 1.0)
        k = fclt_kernel_calibrated(params, 0.5, 1.0)
        sig = sigma_diffusive_calibrated(params)
        assert k[0, 0] == pytest.approx(0.5 * 2 ** (1 / 3) * sig[0, 0])

    def test_domain_errors(self):
        params = make(preset("krw"), 0.75, 0.5)
        with pytest.raises(ValueError):
            fclt_kernel(params, 0.0, 1.0)
        with pytest.raises(ValueError):
            fclt_kernel(params, 0.7, 0.5)
        with pytest.raises(RegimeError):
            fclt_kernel(make(preset("a2c0"), 1.0, 1.0), 0.5, 1.0)

    def test_kernel_symmetric_matrix(self):
        params = make(preset("a3c1"), 0.8, 0.6)
        k = fclt_kernel(params, 0.3, 0.9)
        assert np.allclose(k, k.T)


class TestLimitReport:
    def test_json_keys(self):
        rep = limit_report(make(preset("krw"), 0.75, 0.5)).to_json_dict()
        for key in ("rho", "regime", "omega1", "omega2", "sigma_paper",
                    "sigma_calibrated", "kappa_hypothesis", "scaling",
                    "kernel_exponent", "flags"):
            assert key in rep
        assert rep["regime"] == "diffusive"
        assert rep["scaling"] == "sqrt(n)"
        assert rep["kappa_hypothesis"] == 3.0

    def test_critical_report(self):
        rep = limit_report(make(preset("a2c0"), 0.875, 1.0)).to_json_dict()
        assert rep["regime"] == "critical"
        assert rep["scaling"] == "sqrt(n log n)"
        assert rep["critical_constants"]["omega1_c"] == pytest.approx(1.0)

    def test_superdiffusive_report(self):
        rep = limit_report(make(preset("a2c0"), 1.0, 1.0)).to_json_dict()
        assert rep["regime"] == "superdiffusive"
        assert rep["sigma_paper"] is None
        assert rep["rho"] is not None
        assert any("superdiffusive" in f for f in rep["flags"])

    def test_degenerate_flagged(self):
        rep = limit_report(make(preset("krw"), 0.5, 0.5)).to_json_dict()
        assert rep["regime"] == "degenerate"
        assert any("lambda2_zero" in f for f in rep["flags"])
        assert rep["sigma_paper"] is not None

    def test_lln_violated_report(self):
        rep = limit_report(make(preset("pure", K=1), 1.0, 1.0)).to_json_dict()
        assert rep["regime"] == "lln_violated"
        assert rep["rho"] is None

    def test_serialization_deterministic(self):
        a = json.dumps(limit_report(make(preset("krw"), 0.3, 0.9)).to_json_dict(),
                       sort_keys=True)
        b = json.dumps(limit_report(make(preset("krw"), 0.3, 0.9)).to_json_dict(),
                       sort_keys=True)
        assert a == b
