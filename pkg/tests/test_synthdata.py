import math

import numpy as np
import pytest
from scipy import stats

from gpasmooth.bandwidth import WeightFn
from gpasmooth.kernels import epanechnikov
from gpasmooth.synthdata import (
    BETA23,
    MU1,
    MU2,
    MU3,
    SETTINGS,
    UNIFORM01,
    MeanFunction,
    amise_constants,
    bias_variance_fns,
    central_difference,
    generate,
    get_setting,
    mrae,
    optimal_bandwidth,
    rmpe,
    rmse,
)

# Setting 1 with a 5% trim: the Gaussian bump's tails past +-0.45 are ~exp(-51),
# so the trimmed bias integral equals the whole-line Gaussian moment integral.
B_BAR_SETTING1 = 122.88 * math.sqrt(math.pi)
V_BAR_SETTING1 = 0.6 * 0.9

XS = np.array([0.07, 0.21, 0.38, 0.5, 0.55, 0.73, 0.94])


class TestMeanFunctions:
    @pytest.mark.parametrize("mu", [MU1, MU2, MU3], ids=lambda m: m.name)
    def test_first_derivative(self, mu):
        ref = central_difference(mu.fn, XS, 1, 1e-6)
        np.testing.assert_allclose(mu.first(XS), ref, rtol=1e-6, atol=1e-6)

    @pytest.mark.parametrize("mu", [MU1, MU2, MU3], ids=lambda m: m.name)
    def test_second_derivative(self, mu):
        ref = central_difference(mu.fn, XS, 2, 1e-4)
        scale = np.maximum(np.abs(ref), 1.0)
        assert np.all(np.abs(mu.second(XS) - ref) <= 1e-3 * scale)

    def test_mu1_values(self):
        assert MU1(0.5) == pytest.approx(2.0)
        assert MU1(0.0) == pytest.approx(-2 + 2 * math.exp(-32))

    def test_mu3_vanishes_at_ends(self):
        assert MU3(0.0) == 0.0 and MU3(1.0) == 0.0

    def test_finite_difference_fallback(self):
        cubic = MeanFunction("cubic", lambda x: x**3)
        np.testing.assert_allclose(cubic.first(XS), 3 * XS**2, rtol=1e-8)
        np.testing.assert_allclose(cubic.second(XS), 6 * XS, rtol=1e-4)

    def test_fallback_detects_kink(self):
        kink = MeanFunction("abs", np.abs)
        with pytest.raises(ArithmeticError):
            kink.second(np.array([0.0]))


class TestCovariateLaws:
    def test_beta_pdf_against_scipy(self):
        x = np.linspace(0.01, 0.99, 50)
        np.testing.assert_allclose(BETA23.pdf(x), stats.beta(2, 3).pdf(x), rtol=1e-12)

    def test_beta_dpdf(self):
        x = np.linspace(0.05, 0.95, 19)
        np.testing.assert_allclose(BETA23.dpdf(x), central_difference(BETA23.pdf, x, 1, 1e-6), atol=1e-6)

    def test_uniform(self):
        np.testing.assert_array_equal(UNIFORM01.pdf([-0.1, 0.5, 1.1]), [0, 1, 0])

    def test_beta_sampler_moments(self):
        x = BETA23.sampler(np.random.default_rng(0), 200_000)
        assert x.mean() == pytest.approx(0.4, abs=3e-3)
        assert x.var() == pytest.approx(0.04, abs=1e-3)


class TestSettings:
    @pytest.mark.parametrize("key,mu,law", [("1", MU1, UNIFORM01), ("2", MU1, BETA23),
                                            ("3", MU2, UNIFORM01), ("4", MU2, BETA23)])
    def test_table(self, key, mu, law):
        s = get_setting(key)
        assert s.mean_fn is mu and s.covariate_law is law and s.sigma == 1.0

    def test_unknown(self):
        with pytest.raises(ValueError):
            get_setting("9")

    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            get_setting("1", sigma=-1)

    def test_generate_deterministic(self):
        a = generate(get_setting("1"), 100, seed=7)
        b = generate(get_setting("1"), 100, seed=7)
        np.testing.assert_array_equal(a.sample.x, b.sample.x)
        np.testing.assert_array_equal(a.sample.y, b.sample.y)
        np.testing.assert_array_equal(a.truth, MU1(a.sample.x1))

    def test_noise_level(self):
        d = generate(get_setting("3", sigma=0.5), 50_000, seed=1)
        assert np.std(d.sample.y - d.truth) == pytest.approx(0.5, rel=0.02)

    def test_all_settings_generate(self):
        for key in SETTINGS:
            assert generate(get_setting(key), 10, seed=0).sample.n == 10


class TestAmiseOracle:
    def test_setting1_constants(self, epa):
        b, v = amise_constants(get_setting("1"), epa, WeightFn(0.05))
        assert b == pytest.approx(B_BAR_SETTING1, rel=1e-9)
        assert v == pytest.approx(V_BAR_SETTING1, rel=1e-12)

    @pytest.mark.parametrize("N", [1e4, 2e4, 5e4, 1e8])
    def test_setting1_bandwidth(self, epa, N):
        ref = (V_BAR_SETTING1 / (4 * B_BAR_SETTING1)) ** 0.2 * N**-0.2
        assert optimal_bandwidth(get_setting("1"), epa, N) == pytest.approx(ref, rel=1e-9)

    def test_oracle_rejects_higher_order(self, k4):
        with pytest.raises(ValueError):
            optimal_bandwidth(get_setting("1"), k4, 10_000)

    def test_variance_scales_with_sigma(self, epa):
        _, v1 = amise_constants(get_setting("2", sigma=1.0), epa)
        _, v2 = amise_constants(get_setting("2", sigma=2.0), epa)
        assert v2 == pytest.approx(4 * v1)

    def test_beta_variance_integral(self, epa):
        # V f = nu0 sigma^2 on the trimmed support whatever the density
        _, v = amise_constants(get_setting("4"), epa, WeightFn(0.1))
        assert v == pytest.approx(0.6 * 0.8, rel=1e-10)

    def test_bias_undefined_where_density_vanishes(self, epa):
        bias, _ = bias_variance_fns(get_setting("2"), epa)
        with pytest.raises(ValueError):
            bias(np.array([0.0]))

    def test_uniform_bias_is_curvature(self, epa):
        bias, var = bias_variance_fns(get_setting("1"), epa)
        np.testing.assert_allclose(bias(XS), 0.1 * MU1.second(XS))
        np.testing.assert_allclose(var(XS), 0.6)


class TestMetrics:
    def test_rmse(self):
        assert rmse([1.0, 3.0], [0.0, 0.0]) == pytest.approx(math.sqrt(5))

    def test_undefined_excluded(self):
        val, excluded = rmse([1.0, np.nan], [0.0, 5.0], return_excluded=True)
        assert val == 1.0 and excluded == 1

    def test_all_undefined(self):
        with pytest.raises(ValueError):
            rmpe([np.nan], [1.0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            rmse([1.0], [1.0, 2.0])

    def test_mrae(self):
        assert mrae([0.9, 1.2], 1.0) == pytest.approx(0.15)
