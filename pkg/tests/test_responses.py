"""Response functions against high-precision mpmath evaluations."""

import mpmath
import numpy as np
import pytest

from learndiag.errors import DimensionMismatch, LengthMismatch
from learndiag.psych import (
    dina_ideal_response,
    dina_response,
    hodina_attr_prob,
    irt_response,
    mirt_response,
)

mpmath.mp.dps = 50


def mp_logistic(z):
    return 1 / (1 + mpmath.e ** (-mpmath.mpf(z)))


def mp_irt(theta, b, a, c, d=1.702):
    return float(c + (1 - mpmath.mpf(c)) * mp_logistic(d * a * (mpmath.mpf(theta) - b)))


class TestIrtResponse:
    def test_midpoint(self):
        assert irt_response(0.3, 0.3, 1.7, 0.0) == pytest.approx(0.5, abs=1e-15)

    def test_lower_asymptote(self):
        assert irt_response(-60.0, 0.0, 1.0, 0.2) == pytest.approx(0.2, abs=1e-12)

    def test_unit_logit_value(self):
        expected = float(1 / (1 + mpmath.e ** mpmath.mpf("-1.702")))
        assert irt_response(1.0, 0.0, 1.0, 0.0) == pytest.approx(expected, abs=1e-12)

    def test_strictly_increasing_in_theta(self):
        grid = np.linspace(-4, 4, 200)
        values = irt_response(grid, 0.5, 1.3, 0.15)
        assert (np.diff(values) > 0).all()

    def test_matches_mpmath_on_random_draws(self, rng):
        for _ in range(1000):
            theta = rng.uniform(-4, 4)
            b = rng.uniform(-4, 4)
            a = rng.uniform(0.1, 4)
            c = rng.uniform(0, 0.5)
            got = irt_response(theta, b, a, c)
            assert abs(got - mp_irt(theta, b, a, c)) < 1e-12


class TestDinaIdealResponse:
    def test_exact_match(self):
        assert dina_ideal_response([1, 1, 0], [1, 1, 0]) == 1

    def test_missing_required_skill(self):
        assert dina_ideal_response([1, 0], [1, 1]) == 0

    def test_superset_of_requirements(self):
        assert dina_ideal_response([1, 1], [0, 1]) == 1

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            dina_ideal_response([1, 0], [1, 0, 1])


class TestDinaResponse:
    def test_mastered(self):
        assert dina_response(1, 0.1, 0.2) == pytest.approx(0.9, abs=1e-15)

    def test_not_mastered(self):
        assert dina_response(0, 0.1, 0.2) == pytest.approx(0.2, abs=1e-15)

    def test_noiseless(self):
        assert dina_response(1, 0.0, 0.2) == pytest.approx(1.0, abs=1e-15)

    def test_matches_mpmath_on_random_draws(self, rng):
        for _ in range(1000):
            slip = rng.uniform(0.001, 0.5)
            guess = rng.uniform(0.001, 0.5)
            eta = int(rng.integers(0, 2))
            expected = float(
                mpmath.mpf(guess) ** (1 - eta) * (1 - mpmath.mpf(slip)) ** eta
            )
            assert abs(dina_response(eta, slip, guess) - expected) < 1e-12


class TestMirtResponse:
    def test_midpoint(self):
        # loadings . ability + intercept = 0
        assert mirt_response([1.0, -1.0], [1.0, 1.0], 0.0, 0.0) == pytest.approx(0.5, abs=1e-15)

    def test_upper_asymptote(self):
        assert mirt_response([60.0, 60.0], [1.0, 1.0], 0.0, 0.0) == pytest.approx(1.0, abs=1e-12)

    def test_zero_loading_insensitivity(self):
        p1 = mirt_response([0.5, 0.5, 9.0], [1.0, 1.0, 0.0], -1.0, 0.0)
        p2 = mirt_response([0.5, 0.5, -9.0], [1.0, 1.0, 0.0], -1.0, 0.0)
        assert p1 == pytest.approx(0.5, abs=1e-15)
        assert p1 == p2

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            mirt_response([0.5, 0.5], [1.0, 1.0, 1.0], 0.0, 0.0)

    def test_nondecreasing_in_each_component(self, rng):
        loadings = np.array([0.8, 0.0, 1.5])
        for axis in range(3):
            base = rng.normal(size=3)
            grid = np.linspace(-3, 3, 50)
            points = np.tile(base, (50, 1))
            points[:, axis] = grid
            values = mirt_response(points, loadings, -0.3, 0.1)
            assert (np.diff(values) >= -1e-15).all()

    def test_matches_mpmath_on_random_draws(self, rng):
        for _ in range(1000):
            m = int(rng.integers(1, 5))
            ability = rng.uniform(-3, 3, m)
            loadings = rng.uniform(0, 2.5, m)
            d = rng.uniform(-3, 3)
            c = rng.uniform(0, 0.5)
            linear = mpmath.mpf(0)
            for k in range(m):
                linear += mpmath.mpf(loadings[k]) * mpmath.mpf(ability[k])
            expected = float(c + (1 - mpmath.mpf(c)) * mp_logistic(mpmath.mpf("1.702") * (linear + d)))
            assert abs(mirt_response(ability, loadings, d, c) - expected) < 1e-12


class TestHodinaAttrProb:
    def test_midpoint(self):
        assert hodina_attr_prob(0.0, 0.0, 1.0) == pytest.approx(0.5, abs=1e-15)

    def test_sigma_two(self):
        expected = float(mp_logistic(2))
        assert hodina_attr_prob(0.5, 1.0, 2.0) == pytest.approx(expected, abs=1e-12)

    def test_asymptote(self):
        assert hodina_attr_prob(80.0, 0.0, 1.0) == pytest.approx(1.0, abs=1e-12)

    def test_strictly_increasing(self):
        grid = np.linspace(-5, 5, 100)
        values = hodina_attr_prob(grid, -0.4, 1.7)
        assert (np.diff(values) > 0).all()

    def test_matches_mpmath_on_random_draws(self, rng):
        for _ in range(1000):
            theta = rng.uniform(-4, 4)
            l0 = rng.uniform(-3, 3)
            l1 = rng.uniform(0.1, 3)
            expected = float(mp_logistic(mpmath.mpf(l0) + mpmath.mpf(l1) * mpmath.mpf(theta)))
            assert abs(hodina_attr_prob(theta, l0, l1) - expected) < 1e-12
