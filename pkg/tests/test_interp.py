"""Tensor interpolants: grid enumeration, interpolation property,
polynomial exactness, linearity."""

import numpy as np
import pytest

from miscuq.interp import TensorInterpolant, build_grid
from miscuq.leja import SymmetricLeja, level_to_knots


def unit_families(dim):
    return tuple(SymmetricLeja(-1.0, 1.0) for _ in range(dim))


def eval_poly(coeffs, pts):
    """Evaluate a dense tensor polynomial sum_k c_k prod_n x_n^k_n."""
    pts = np.atleast_2d(pts)
    out = np.zeros(pts.shape[0])
    for k, c in np.ndenumerate(coeffs):
        term = np.full(pts.shape[0], c)
        for n, power in enumerate(k):
            term = term * pts[:, n] ** power
        out += term
    return out


class TestBuildGrid:
    def test_single_point_grid_is_midpoint(self):
        grid = build_grid((1, 1), unit_families(2))
        assert grid.points.tolist() == [[0.0, 0.0]]

    def test_three_by_one_grid(self):
        grid = build_grid((2, 1), unit_families(2))
        assert grid.points.tolist() == [[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0]]

    def test_point_count_is_product(self):
        grid = build_grid((2, 2), unit_families(2))
        assert len(grid) == 9

    def test_row_major_enumeration(self):
        grid = build_grid((1, 2), unit_families(2))
        # second dimension varies fastest
        assert grid.points.tolist() == [[0.0, 0.0], [0.0, 1.0], [0.0, -1.0]]

    def test_per_dim_lengths_follow_level_map(self):
        grid = build_grid((3, 2), unit_families(2))
        assert grid.shape == (level_to_knots(3), level_to_knots(2))

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            build_grid((1, 1, 1), unit_families(2))

    def test_zero_level_rejected(self):
        with pytest.raises(ValueError):
            build_grid((0, 1), unit_families(2))


class TestInterpolate:
    def test_constant_reproduced_anywhere(self):
        grid = build_grid((2, 2), unit_families(2))
        itp = TensorInterpolant(grid, np.full(len(grid), 3.25))
        for v in [(0.1, -0.9), (0.0, 0.0), (0.77, 0.13)]:
            assert itp.evaluate(v)[0] == pytest.approx(3.25, abs=1e-13)

    def test_univariate_square(self):
        grid = build_grid((2,), unit_families(1))
        assert grid.per_dim_knots[0].tolist() == [0.0, 1.0, -1.0]
        itp = TensorInterpolant(grid, np.array([0.0, 1.0, 1.0]))
        assert itp.evaluate([0.5])[0] == pytest.approx(0.25, abs=1e-14)

    def test_bilinear_closed_form(self):
        f = lambda x, y: 3 * x + 2 * y - x * y
        grid = build_grid((2, 2), unit_families(2))
        itp = TensorInterpolant(grid, [f(x, y) for x, y in grid.points])
        assert itp.evaluate([0.3, -0.7])[0] == pytest.approx(-0.29, abs=1e-13)

    def test_values_reproduced_at_grid_points(self):
        rng = np.random.default_rng(5)
        grid = build_grid((3, 2), unit_families(2))
        values = rng.uniform(-4, 4, len(grid))
        itp = TensorInterpolant(grid, values)
        for p, val in zip(grid.points, values):
            assert abs(itp.evaluate(p)[0] - val) <= 1e-12 * (1 + abs(val))

    @pytest.mark.parametrize("beta", [(2,), (4,), (2, 3), (3, 2), (2, 2, 2), (4, 2, 3)])
    def test_polynomial_exactness(self, beta):
        rng = np.random.default_rng(sum(beta))
        dim = len(beta)
        degrees = tuple(level_to_knots(b) - 1 for b in beta)
        coeffs = rng.uniform(-1, 1, tuple(d + 1 for d in degrees))
        grid = build_grid(beta, unit_families(dim))
        itp = TensorInterpolant(grid, eval_poly(coeffs, grid.points))
        test_pts = rng.uniform(-1, 1, (100, dim))
        err = np.abs(itp.evaluate_many(test_pts)[:, 0] - eval_poly(coeffs, test_pts))
        assert err.max() <= 1e-9

    def test_linearity(self):
        rng = np.random.default_rng(11)
        grid = build_grid((3, 2), unit_families(2))
        f, g = rng.uniform(-1, 1, (2, len(grid)))
        a, b = 2.5, -1.75
        combined = TensorInterpolant(grid, a * f + b * g)
        itp_f = TensorInterpolant(grid, f)
        itp_g = TensorInterpolant(grid, g)
        pts = rng.uniform(-1, 1, (40, 2))
        lhs = combined.evaluate_many(pts)
        rhs = a * itp_f.evaluate_many(pts) + b * itp_g.evaluate_many(pts)
        assert np.abs(lhs - rhs).max() <= 1e-12

    def test_vector_values_share_grid(self):
        grid = build_grid((2, 2), unit_families(2))
        vals = np.column_stack([[x + y for x, y in grid.points],
                                [x * y for x, y in grid.points]])
        itp = TensorInterpolant(grid, vals)
        out = itp.evaluate([0.25, -0.5])
        assert out[0] == pytest.approx(-0.25, abs=1e-13)
        assert out[1] == pytest.approx(-0.125, abs=1e-13)

    def test_exact_hit_on_knot_returns_slice(self):
        grid = build_grid((3,), unit_families(1))
        vals = np.arange(len(grid), dtype=float)
        itp = TensorInterpolant(grid, vals)
        for j, knot in enumerate(grid.per_dim_knots[0]):
            assert itp.evaluate([knot])[0] == vals[j]

    def test_duplicate_knots_rejected(self):
        grid = build_grid((2,), unit_families(1))
        dup = grid.__class__((2,), (np.array([0.0, 1.0, 1.0 + 1e-16]),), grid.points)
        with pytest.raises(ValueError):
            TensorInterpolant(dup, np.zeros(3))

    def test_value_length_mismatch_rejected(self):
        grid = build_grid((2, 1), unit_families(2))
        with pytest.raises(ValueError):
            TensorInterpolant(grid, np.zeros(4))

    def test_dimension_mismatch_on_evaluate(self):
        grid = build_grid((2, 2), unit_families(2))
        itp = TensorInterpolant(grid, np.zeros(9))
        with pytest.raises(ValueError):
            itp.evaluate([0.0, 0.0, 0.0])
