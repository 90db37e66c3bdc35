import math

import numpy as np
import pytest

from dlc.model import Architecture, DomainError, Scenario
from dlc.optimal import (
    Regime,
    depth_ratio,
    fd_gradient,
    nn_width_monotonicity,
    rf_equal_width_epsilon,
    rf_optimal_depth,
    rf_optimal_width,
    verify_stationarity,
)
from dlc.theory import epsilon_rf


class TestOptimalWidth:
    def test_value(self):
        rep = rf_optimal_width(1, Scenario(0.5, 4, 0))
        assert rep.regime is Regime.FINITE_OPTIMUM
        assert rep.optimum[0] == pytest.approx(1.0, rel=1e-15)

    def test_wider_when_small_prior(self):
        assert rf_optimal_width(1, Scenario(0.5, 1, 0)).regime is Regime.WIDER_ALWAYS_BETTER
        assert rf_optimal_width(3, Scenario(0.5, 0.3, 0)).optimum is None

    def test_increasing_in_depth(self):
        g = [rf_optimal_width(ell, Scenario(0.5, 4, 0)).optimum[0] for ell in range(1, 40)]
        assert np.all(np.diff(g) > 0)

    def test_near_unit_prior(self):
        # expm1 keeps gamma* finite and accurate just above st2 = 1
        rep = rf_optimal_width(2, Scenario(0.5, 1 + 1e-10, 0))
        t = (1 + 1e-10) ** (1 / 3)
        assert rep.optimum[0] == pytest.approx(0.5 * t / (t - 1), rel=1e-5)

    def test_gradient_positive_beyond_optimum(self):
        s = Scenario(0.5, 4, 0)
        for ell in (1, 2, 3):
            gs = rf_optimal_width(ell, s).optimum[0]
            g = fd_gradient(np.full(ell, 2 * gs), s, 1e-5)
            assert np.all(g > 0)


class TestOptimalDepth:
    def test_value(self):
        rep = rf_optimal_depth(1.5, Scenario(0.5, 4, 0))
        assert rep.optimum == (3,)
        assert depth_ratio(1.5, Scenario(0.5, 4, 0)) == pytest.approx(math.log(4) / math.log(1.5), rel=1e-15)

    def test_ties(self):
        s = Scenario(0.5, 4, 0)
        # log 4 / log(gamma/(gamma-alpha)) = 2 at gamma = 1, = 1 at gamma = 2/3
        assert rf_optimal_depth(1.0, s).optimum == (2, 1)
        assert rf_optimal_depth(2 / 3, s).optimum == (1, 0)

    def test_tie_reproduces_width_formula(self):
        s = Scenario(0.3, 9.0, 0)
        for j in (1, 2, 3, 4):
            t = 9.0 ** (1 / j)
            g = t * 0.3 / (t - 1)
            assert rf_optimal_depth(g, s).optimum == (j, j - 1)

    def test_shallower(self):
        rep = rf_optimal_depth(2.0, Scenario(0.5, 1, 0))
        assert rep.regime is Regime.SHALLOWER_ALWAYS_BETTER and rep.optimum == (0,)

    def test_domain(self):
        with pytest.raises(DomainError):
            rf_optimal_depth(0.4, Scenario(0.5, 4, 0))
        with pytest.raises(DomainError):
            rf_optimal_width(1, Scenario(1.5, 4, 0))

    def test_continuation_matches_integer_depths(self):
        s = Scenario(0.4, 3.0, 0.2)
        for ell in (1, 2, 5):
            ref = epsilon_rf(Architecture.equal(1.3, ell), s).epsilon
            assert rf_equal_width_epsilon(1.3, ell, s) == pytest.approx(ref, rel=1e-12)


class TestNNMonotonicity:
    @pytest.mark.parametrize(
        "sigma2, regime",
        [(1.0, Regime.WIDTH_IRRELEVANT), (0.25, Regime.WIDER_ALWAYS_BETTER), (4.0, Regime.NARROWER_ALWAYS_BETTER)],
    )
    def test_examples(self, sigma2, regime):
        rep = nn_width_monotonicity(Scenario(0.5, sigma2, 0))
        assert rep.regime is regime and rep.optimum is None


class TestStationarity:
    def test_one_layer(self):
        rep = verify_stationarity(1, Scenario(0.5, 4, 0))
        assert rep.ok and rep.eigenvalues.shape == (1,)
        np.testing.assert_allclose(rep.eigenvalues, rep.analytic_eigenvalues, rtol=1e-3)

    def test_multiplicities(self):
        rep = verify_stationarity(3, Scenario(0.5, 4, 0))
        assert rep.ok and rep.multiplicities == (2, 1)

    def test_needs_finite_optimum(self):
        with pytest.raises(DomainError):
            verify_stationarity(2, Scenario(0.5, 0.5, 0))
