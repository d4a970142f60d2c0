from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from fsvgmm.iv_moments import (
    MomentSpec,
    MomentVector,
    autocov_iv,
    autocov_tail_approx,
    fourth_moment_iv,
    lemma_a1_reduce,
    mean_iv,
    model_moment_vector,
    raw_second_moment_iv,
    tail_weight,
    third_moment_iv,
)
from fsvgmm.measurement import CorrectionMode
from fsvgmm.model_core import CovKernel, FsvParams, GbssParams

XI = 0.0225
PANEL_B = FsvParams(XI, 0.01, 0.75, 0.1)
PANEL_D = FsvParams(XI, 0.035, 0.3, 0.5)
KB = CovKernel.fsv(PANEL_B)
KD = CovKernel.fsv(PANEL_D)
CONST = CovKernel.constant()

# nested mpmath quadrature (18 digits) of the one-dimensional autocovariance
# integral with kappa from its defining integral
AUTOCOV_B_REF = {0: 2.77018301558107113e-4, 1: 2.28595253376363438e-4, 50: 2.97471636992918162e-5}
# fSV H = 1/2, lam = 1, nu = 0.1, xi = 1: cube integrals of exp(sum of kappa(|t_i - t_j|))
THIRD_CUBE_REF = 1.0110986677592948  # scipy nquad, error estimate 1e-14
FOURTH_CUBE_REF = 1.0223208413107896  # scrambled Sobol, 8 x 2^22 points, se 4e-13


def brute_2d(f, k):
    """int_{k-1}^{k} int_0^1 f(|s - t|) ds dt with the kink at s = t split off."""

    def inner(t):
        pts = [t] if 0 < t < 1 else None
        return integrate.quad(lambda s: f(abs(s - t)), 0, 1, points=pts, epsabs=0, epsrel=1e-12, limit=200)[0]

    return integrate.quad(inner, k - 1, k, epsabs=0, epsrel=1e-11, limit=200)[0]


class TestMomentSpec:
    def test_defaults(self):
        s = MomentSpec()
        assert s.lags == (0, 1, 2, 3, 5, 20, 50)
        assert s.size == 8

    @pytest.mark.parametrize("lags", [(0, 2, 1), (0, 0, 1), (-1, 0), ()])
    def test_bad_lags(self, lags):
        with pytest.raises(ValueError):
            MomentSpec(lags)

    def test_correction_needs_lag0_and_n(self):
        with pytest.raises(ValueError):
            MomentSpec((1, 2), CorrectionMode.CLT_RV, 78)
        with pytest.raises(ValueError):
            MomentSpec((0, 1), CorrectionMode.CLT_RV)
        MomentSpec((1, 2))

    def test_vector_length_checked(self):
        with pytest.raises(ValueError):
            MomentVector(np.ones(3), (0, 1, 2))


class TestMean:
    def test_preset_value(self):
        assert mean_iv(KB, 0.0225) == 0.0225

    def test_kernel_free(self):
        assert mean_iv(CONST, 0.0225) == mean_iv(KD, 0.0225) == 0.0225
        assert mean_iv(CONST, 1) == 1


class TestSecondMoments:
    def test_constant_kernel(self):
        assert raw_second_moment_iv(CONST, XI, 0) == pytest.approx(5.0625e-4, rel=1e-14)
        for ell in (0, 1, 7):
            assert autocov_iv(CONST, XI, ell) == 0.0

    @pytest.mark.parametrize("ell", sorted(AUTOCOV_B_REF))
    def test_panel_b_reference(self, ell):
        assert autocov_iv(KB, XI, ell) == pytest.approx(AUTOCOV_B_REF[ell], rel=1e-9)

    def test_half_lag1_against_2d_oracle(self):
        # E[IV_t IV_{t+1}] = xi^2 int_1^2 int_0^1 exp(kappa(|t - s|)) ds dt
        f = lambda x: math.exp(float(KD.kappa(x)))
        ref = XI**2 * brute_2d(f, 2)
        assert raw_second_moment_iv(KD, XI, 1) == pytest.approx(ref, rel=1e-7)

    def test_half_lag0_self_consistency(self):
        k0 = KD.variance
        f = lambda y: (1 - y) * math.expm1(k0 * math.exp(-0.035 * y))
        ref = 2 * XI**2 * integrate.quad(f, 0, 1, epsabs=0, epsrel=1e-13)[0]
        assert abs(autocov_iv(KD, XI, 0) - ref) <= 1e-9 * ref

    def test_panel_b_decay(self):
        a0, a1 = autocov_iv(KB, XI, 0), autocov_iv(KB, XI, 1)
        assert 0 < a1 < a0

    def test_panel_b_lag50_tail(self):
        raw = raw_second_moment_iv(KB, XI, 50)
        assert raw == pytest.approx(XI**2 * (1 + float(KB.kappa(50))), rel=0.02)

    def test_fractional_lag_matches_adaptive(self):
        ell = 0.4
        f = lambda y: (1 - y) * (math.expm1(float(KB.kappa(ell + y))) + math.expm1(float(KB.kappa(abs(ell - y)))))
        ref = XI**2 * integrate.quad(f, 0, 1, points=[ell], epsabs=0, epsrel=1e-12, limit=200)[0]
        assert autocov_iv(KB, XI, ell) == pytest.approx(ref, rel=1e-9)

    @pytest.mark.parametrize("h", [0.05, 0.3, 0.7])
    @pytest.mark.parametrize("ell", [0, 1, 3])
    def test_graded_rule_against_adaptive(self, h, ell):
        k = CovKernel.fsv(FsvParams(XI, 0.02, 0.6, h))
        f = lambda y: (1 - y) * (math.expm1(float(k.kappa(ell + y))) + math.expm1(float(k.kappa(abs(ell - y)))))
        ref = XI**2 * integrate.quad(f, 0, 1, epsabs=0, epsrel=1e-12, limit=500)[0]
        assert autocov_iv(k, XI, ell) == pytest.approx(ref, rel=1e-8)

    def test_negative_lag(self):
        with pytest.raises(ValueError):
            autocov_iv(KB, XI, -1)

    @settings(max_examples=25, deadline=None)
    @given(c=st.floats(0.1, 10.0), ell=st.sampled_from([0, 1, 2, 5, 20]))
    def test_xi_homogeneity(self, c, ell):
        assert raw_second_moment_iv(KB, c * XI, ell) == pytest.approx(c**2 * raw_second_moment_iv(KB, XI, ell), rel=1e-12)

    @pytest.mark.parametrize("ell", [0, 1, 5])
    def test_degenerate_collapse(self, ell):
        k = CovKernel.fsv(FsvParams(XI, 0.01, 1e-7, 0.1))
        assert autocov_iv(k, XI, ell) == pytest.approx(0.0, abs=1e-15)
        assert raw_second_moment_iv(k, XI, ell) == pytest.approx(XI**2, rel=1e-10)


class TestHigherMoments:
    def test_constant_kernel(self):
        assert third_moment_iv(CONST, 2.0) == pytest.approx(8.0, rel=1e-13)
        assert fourth_moment_iv(CONST, 2.0) == pytest.approx(16.0, rel=1e-13)

    def test_third_against_cube(self):
        k = CovKernel.fsv(FsvParams(1.0, 1.0, 0.1, 0.5))
        assert third_moment_iv(k, 1.0) == pytest.approx(THIRD_CUBE_REF, rel=1e-5)

    def test_fourth_against_cube(self):
        k = CovKernel.fsv(FsvParams(1.0, 1.0, 0.1, 0.5))
        assert fourth_moment_iv(k, 1.0) == pytest.approx(FOURTH_CUBE_REF, rel=1e-4)

    def test_third_rough_against_adaptive(self):
        k = CovKernel.fsv(FsvParams(1.0, 0.5, 0.8, 0.3))
        K = lambda u: float(k.kappa(abs(u)))
        f = lambda y, x: (1 - x) * math.exp(K(x - y) + K(x) + K(y))
        ref = 6 * integrate.dblquad(f, 0, 1, 0, lambda x: x, epsabs=1e-12, epsrel=1e-11)[0]
        assert third_moment_iv(k, 1.0) == pytest.approx(ref, rel=1e-6)

    def test_homogeneity(self):
        k = CovKernel.fsv(FsvParams(1.0, 1.0, 0.3, 0.5))
        assert third_moment_iv(k, 3.0) == pytest.approx(27 * third_moment_iv(k, 1.0), rel=1e-12)
        assert fourth_moment_iv(k, 3.0) == pytest.approx(81 * fourth_moment_iv(k, 1.0), rel=1e-12)

    def test_lower_bounds(self):
        k = CovKernel.fsv(FsvParams(1.0, 0.5, 0.5, 0.4))
        assert third_moment_iv(k, 1.0) >= 1.0
        assert fourth_moment_iv(k, 1.0) >= 1.0

    def test_rough_warning(self):
        with pytest.warns(RuntimeWarning):
            third_moment_iv(KB, XI)


class TestTail:
    def test_rough_ratio_lag200(self):
        ratio = autocov_iv(KB, XI, 200) / autocov_tail_approx(KB, XI, 200)
        assert 0.9 <= ratio <= 1.1

    def test_weight_integral(self):
        for rho in (0.01, 0.035, 1.0, 3.0):
            w = integrate.quad(lambda y: (1 - abs(y)) * math.exp(-rho * y), -1, 1, points=[0])[0]
            assert tail_weight(rho) == pytest.approx(w, rel=1e-12)
            assert tail_weight(rho) == pytest.approx(math.exp(-rho) * math.expm1(rho) ** 2 / rho**2, rel=1e-14)

    def test_half_ratio(self):
        k = CovKernel.fsv(FsvParams(XI, 0.3, 0.3, 0.5))
        assert autocov_iv(k, XI, 40) / autocov_tail_approx(k, XI, 40) == pytest.approx(1.0, rel=1e-3)

    @pytest.mark.parametrize("alpha,lam", [(0.2, 0.3), (-0.3, 0.1), (0.5, 1.0)])
    def test_gbss_explicit_form(self, alpha, lam):
        k = CovKernel.gbss(GbssParams(1.0, lam, 1.0, alpha))
        r = [autocov_iv(k, 1.0, ell) / autocov_tail_approx(k, 1.0, ell) for ell in (50, 200)]
        assert abs(r[1] - 1) < abs(r[0] - 1) < 0.02

    def test_degenerate(self):
        k = CovKernel.fsv(FsvParams(XI, 0.01, 1e-9, 0.1))
        assert autocov_tail_approx(k, XI, 10) == pytest.approx(0.0, abs=1e-20)

    def test_lag_below_one(self):
        with pytest.raises(ValueError):
            autocov_tail_approx(KB, XI, 0.5)


class TestDoubleIntegralReduction:
    def test_constant(self):
        for k in (1, 2, 5):
            assert lemma_a1_reduce(lambda x: 1.0, k) == pytest.approx(1.0, rel=1e-14)

    def test_identity_k1(self):
        assert lemma_a1_reduce(lambda x: x, 1) == pytest.approx(1 / 3, rel=1e-13)
        assert brute_2d(lambda x: x, 1) == pytest.approx(1 / 3, rel=1e-10)

    def test_panel_b_k3(self):
        f = lambda x: math.exp(float(KB.kappa(x)))
        assert lemma_a1_reduce(f, 3) == pytest.approx(brute_2d(f, 3), rel=1e-7)

    @settings(max_examples=15, deadline=None)
    @given(a=st.floats(0.1, 3.0), b=st.floats(-2.0, 2.0), k=st.integers(1, 5))
    def test_random_smooth(self, a, b, k):
        f = lambda x: math.exp(-a * x) + b * math.sin(x) + x * x
        assert lemma_a1_reduce(f, k) == pytest.approx(brute_2d(f, k), rel=1e-7, abs=1e-10)

    def test_k_positive(self):
        with pytest.raises(ValueError):
            lemma_a1_reduce(lambda x: x, 0)


class TestModelVector:
    def test_constant(self):
        v = model_moment_vector(CONST, XI, MomentSpec())
        assert v[0] == XI
        assert np.allclose(v.values[1:], XI**2, rtol=1e-14)

    def test_clt_correction_only_touches_lag0(self):
        plain = model_moment_vector(KB, XI, MomentSpec()).values
        corr = model_moment_vector(KB, XI, MomentSpec(correction="clt-rv", n_intraday=78)).values
        diff = corr - plain
        assert diff[1] == pytest.approx(2 * XI**2 * math.exp(KB.variance) / 78, rel=1e-13)
        assert np.all(diff[[0, 2, 3, 4, 5, 6, 7]] == 0)

    def test_panel_b_clt(self):
        spec = MomentSpec(correction=CorrectionMode.CLT_RV, n_intraday=78)
        v = model_moment_vector(KB, XI, spec)
        assert len(v) == 8
        assert v[1] > model_moment_vector(KB, XI, MomentSpec())[1]

    def test_entries_match_scalar_ops(self):
        spec = MomentSpec()
        v = model_moment_vector(KB, XI, spec).values
        for i, ell in enumerate(spec.lags, start=1):
            assert v[i] == pytest.approx(raw_second_moment_iv(KB, XI, ell), rel=1e-14)

    def test_lag_set_without_zero(self):
        v = model_moment_vector(KB, XI, MomentSpec((1, 5)))
        assert len(v) == 3
        assert v[1] == pytest.approx(raw_second_moment_iv(KB, XI, 1), rel=1e-14)
