"""
Tests for the built-in convex function families.
"""

import numpy as np
import pytest

from shqp.errors import ValidationError
from shqp.functions import (
    GluedExponential,
    MaxAffine,
    MaxOfFunctions,
    NormMinusRadius,
    QuadraticMaxAffine,
)


def families(rng):
    A = rng.standard_normal((2, 2))
    return [
        MaxAffine.zigzag(),
        MaxAffine([(rng.standard_normal(2), rng.standard_normal()) for _ in range(4)]),
        NormMinusRadius(rng.standard_normal(2), 0.7),
        QuadraticMaxAffine(A @ A.T, rng.standard_normal(2), 0.5, [((1.0, 1.0), 0.3)]),
        MaxOfFunctions([NormMinusRadius([0, 0], 1.0), MaxAffine([((1.0, -2.0), 0.5)])]),
    ]


class TestMaxAffine:
    """Test max-affine functions"""

    def test_zigzag_values(self):
        """max(2x1 - x2, 2x2 - x1) at a few points"""
        f = MaxAffine.zigzag()
        assert f([1, 1]) == pytest.approx(1.0)
        assert f([0, 0]) == 0.0
        value, y = f.evaluate(np.array([0.6, 1.2]))
        assert value == pytest.approx(1.8)
        np.testing.assert_allclose(y, [-1, 2])

    def test_tie_break(self):
        """Ties go to the lowest piece unless configured otherwise"""
        x = np.array([1.0, 1.0])
        _, low = MaxAffine.zigzag().evaluate(x)
        _, high = MaxAffine.zigzag(tie_break="highest").evaluate(x)
        np.testing.assert_allclose(low, [2, -1])
        np.testing.assert_allclose(high, [-1, 2])

    def test_bad_tie_break(self):
        """Should reject unknown tie-break names"""
        with pytest.raises(ValidationError, match="tie_break"):
            MaxAffine.zigzag(tie_break="random")

    def test_empty(self):
        """Should require at least one piece"""
        with pytest.raises(ValidationError):
            MaxAffine([])


class TestSmoothFamilies:
    """Test norm and quadratic families"""

    def test_norm_gradient(self):
        """Gradient should be the unit direction from the center"""
        value, y = NormMinusRadius([1, 0], 1.0).evaluate(np.array([4.0, 4.0]))
        assert value == pytest.approx(4.0)
        np.testing.assert_allclose(y, [0.6, 0.8])

    def test_quadratic_piece(self):
        """Quadratic piece is index 0 with gradient P (x - c)"""
        f = QuadraticMaxAffine(np.diag([2.0, 4.0]), [0, 0], 1.0)
        value, y = f.evaluate(np.array([1.0, 1.0]))
        assert value == pytest.approx(2.0)
        np.testing.assert_allclose(y, [2, 4])

    def test_affine_piece_wins(self):
        """An affine piece above the quadratic supplies the subgradient"""
        f = QuadraticMaxAffine(np.eye(2), [0, 0], 1.0, [((0.0, 5.0), 0.0)])
        value, y = f.evaluate(np.array([0.0, 1.0]))
        assert value == pytest.approx(5.0)
        np.testing.assert_allclose(y, [0, 5])

    def test_indefinite_rejected(self):
        """P must be positive semidefinite"""
        with pytest.raises(ValidationError, match="semidefinite"):
            QuadraticMaxAffine(np.diag([1.0, -1.0]), [0, 0], 1.0)


class TestGluedExponential:
    """Test the one-dimensional exp(-1/|x|) example"""

    def test_values(self):
        """exp(-1/x) near 0 and continuity at the knot"""
        f = GluedExponential()
        assert f([0.0]) == 0.0
        assert f([0.25]) == pytest.approx(np.exp(-4.0))
        assert f([0.5]) == pytest.approx(np.exp(-2.0))
        assert f([-0.25]) == pytest.approx(np.exp(-4.0))

    def test_newton_step(self):
        """x - f/f' equals x - x^2 below the knot"""
        f = GluedExponential()
        for x in (0.5, 0.3, 0.01):
            value, y = f.evaluate(np.array([x]))
            assert x - value / y[0] == pytest.approx(x - x * x, rel=1e-12)

    def test_tangent_continuation(self):
        """Beyond the knot f is the tangent line"""
        f = GluedExponential()
        slope = np.exp(-2.0) / 0.25
        assert f([1.5]) == pytest.approx(np.exp(-2.0) + slope)
        _, y = f.evaluate(np.array([-1.5]))
        assert y[0] == pytest.approx(-slope)


class TestSubgradientInequality:
    """Test f(z) >= f(x) + y.(z - x) on random pairs"""

    def test_all_families(self, rng):
        """Should hold for every two-dimensional family"""
        for f in families(rng):
            for _ in range(50):
                x, z = 3.0 * rng.standard_normal(2), 3.0 * rng.standard_normal(2)
                value, y = f.evaluate(x)
                assert f(z) >= value + y @ (z - x) - 1e-10 * (1.0 + abs(value))

    def test_glued_exponential(self):
        """Should hold on a grid including both sides of the knot"""
        f = GluedExponential()
        grid = np.linspace(-2.0, 2.0, 81)
        for x in grid:
            value, y = f.evaluate(np.array([x]))
            for z in grid:
                assert f([z]) >= value + y[0] * (z - x) - 1e-12


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
