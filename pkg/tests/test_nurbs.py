"""Rational B-spline surface tests.

Basis values are checked against a naive textbook recursion written
independently of the production triangular algorithm, analytic gradients
against central finite differences, and midpoint evaluations against hand
computed bilinear and Bezier values.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roadsurf.grid import Raster
from roadsurf.nurbs import (
    BasisSpan,
    NurbsSurface,
    basis_functions,
    basis_matrix,
    evaluate,
    evaluate_grid,
    find_span,
    gradients,
    lattice_surface,
    load_surface,
    rasterize,
    save_surface,
    uniform_clamped_knots,
)


def naive_basis(knots, degree, i, u):
    """Cox-de Boor recursion, one basis function at a time.

    Degree-0 boxes are half-open on the right except the last nonempty box,
    which also contains the upper domain end.
    """
    hi = knots[-1]
    if degree == 0:
        if knots[i] <= u < knots[i + 1]:
            return 1.0
        if u == hi and knots[i + 1] == hi and knots[i] < knots[i + 1]:
            return 1.0
        return 0.0
    left_den = knots[i + degree] - knots[i]
    right_den = knots[i + degree + 1] - knots[i + 1]
    total = 0.0
    if left_den > 0:
        total += (u - knots[i]) / left_den * naive_basis(knots, degree - 1, i, u)
    if right_den > 0:
        total += (knots[i + degree + 1] - u) / right_den * naive_basis(knots, degree - 1, i + 1, u)
    return total


def span_by_scan(knots, degree, u):
    n = len(knots) - degree - 2
    if u >= knots[n + 1]:
        return n
    if u <= knots[degree]:
        return degree
    for s in range(degree, n + 1):
        if knots[s] <= u < knots[s + 1]:
            return s
    raise AssertionError("unreachable")


def random_lattice(rng, num_u=None, num_v=None, degree_u=None, degree_v=None):
    degree_u = degree_u if degree_u is not None else int(rng.integers(1, 4))
    degree_v = degree_v if degree_v is not None else int(rng.integers(1, 4))
    num_u = num_u if num_u is not None else int(rng.integers(degree_u + 1, 8))
    num_v = num_v if num_v is not None else int(rng.integers(degree_v + 1, 8))
    z = rng.normal(2.0, 1.5, size=(num_u, num_v))
    w = rng.uniform(0.5, 2.0, size=(num_u, num_v))
    return lattice_surface((0.0, 6.0), (-3.0, 5.0), num_u, num_v,
                           degree_u, degree_v, control_z=z, weights=w)


class TestKnots:
    def test_bezier_case(self):
        np.testing.assert_array_equal(
            uniform_clamped_knots(4, 3),
            [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0])

    def test_interior_knots_evenly_spaced(self):
        np.testing.assert_allclose(
            uniform_clamped_knots(6, 3),
            [0, 0, 0, 0, 1 / 3, 2 / 3, 1, 1, 1, 1], atol=1e-15)

    def test_custom_range(self):
        knots = uniform_clamped_knots(5, 2, low=-2.0, high=2.0)
        assert knots[0] == -2.0 and knots[-1] == 2.0
        assert len(knots) == 5 + 2 + 1

    def test_rejects_bad_configs(self):
        with pytest.raises(ValueError):
            uniform_clamped_knots(4, 0)
        with pytest.raises(ValueError):
            uniform_clamped_knots(3, 3)
        with pytest.raises(ValueError):
            uniform_clamped_knots(4, 2, low=1.0, high=1.0)


class TestFindSpan:
    def test_interior_knot_starts_right_span(self):
        knots = uniform_clamped_knots(5, 3)  # one interior knot at 0.5
        assert find_span(knots, 3, 0.5) == 4
        assert find_span(knots, 3, 0.5 - 1e-12) == 3

    def test_domain_ends(self):
        knots = uniform_clamped_knots(6, 2)
        assert find_span(knots, 2, 0.0) == 2
        assert find_span(knots, 2, 1.0) == len(knots) - 2 - 2

    def test_matches_linear_scan(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            degree = int(rng.integers(1, 4))
            num = int(rng.integers(degree + 1, 10))
            knots = uniform_clamped_knots(num, degree)
            queries = np.concatenate([rng.uniform(0, 1, 12), np.unique(knots)])
            for u in queries:
                assert find_span(knots, degree, float(u)) == span_by_scan(knots, degree, float(u))


class TestBasisFunctions:
    def test_matches_naive_recursion(self):
        rng = np.random.default_rng(4)
        for _ in range(25):
            degree = int(rng.integers(1, 4))
            num = int(rng.integers(degree + 1, 9))
            knots = uniform_clamped_knots(num, degree)
            queries = np.concatenate([rng.uniform(0, 1, 10), np.unique(knots)])
            for u in queries:
                u = float(u)
                row = basis_matrix(knots, degree, np.array([u]))[0]
                expected = np.array([naive_basis(knots, degree, i, u) for i in range(num)])
                np.testing.assert_allclose(row, expected, atol=1e-12)

    def test_degree_zero_box_convention(self):
        knots = np.array([0.0, 0.5, 1.0])
        assert basis_functions(knots, 0, 0.25).span == 0
        # the shared knot belongs to the right box
        assert basis_functions(knots, 0, 0.5).span == 1
        # the final box is closed at the domain end
        bs = basis_functions(knots, 0, 1.0)
        assert bs.span == 1
        assert bs.values[0] == 1.0

    @settings(max_examples=60, deadline=None)
    @given(num=st.integers(4, 9), degree=st.integers(1, 3),
           t=st.floats(0.0, 1.0, allow_nan=False))
    def test_window_is_a_partition_of_unity(self, num, degree, t):
        knots = uniform_clamped_knots(num, degree)
        bs = basis_functions(knots, degree, t)
        assert isinstance(bs, BasisSpan)
        assert abs(bs.values.sum() - 1.0) <= 1e-12
        assert (bs.values >= -1e-15).all()

    def test_outside_domain_raises(self):
        knots = uniform_clamped_knots(5, 2)
        with pytest.raises(ValueError, match="outside domain"):
            basis_functions(knots, 2, 1.5)
        with pytest.raises(ValueError, match="outside domain"):
            basis_functions(knots, 2, -0.2)


class TestSurfaceValidation:
    def kwargs(self):
        return dict(
            degree_u=1, degree_v=1,
            knots_u=np.array([0.0, 0.0, 1.0, 1.0]),
            knots_v=np.array([0.0, 0.0, 1.0, 1.0]),
            control_points=np.zeros((2, 2, 3)),
            weights=np.ones((2, 2)))

    def test_valid_config_accepted(self):
        NurbsSurface(**self.kwargs())

    def test_rejects_bad_control_shape(self):
        kw = self.kwargs()
        kw["control_points"] = np.zeros((2, 2, 2))
        with pytest.raises(ValueError, match="shape"):
            NurbsSurface(**kw)

    def test_rejects_weight_shape_mismatch(self):
        kw = self.kwargs()
        kw["weights"] = np.ones((2, 3))
        with pytest.raises(ValueError, match="weights"):
            NurbsSurface(**kw)

    def test_rejects_nonpositive_weights(self):
        kw = self.kwargs()
        kw["weights"] = np.array([[1.0, 0.0], [1.0, 1.0]])
        with pytest.raises(ValueError, match="positive"):
            NurbsSurface(**kw)

    def test_rejects_wrong_knot_count(self):
        kw = self.kwargs()
        kw["knots_u"] = np.array([0.0, 0.0, 0.5, 1.0, 1.0])
        with pytest.raises(ValueError, match="knots_u"):
            NurbsSurface(**kw)

    def test_rejects_decreasing_knots(self):
        kw = self.kwargs()
        kw["knots_v"] = np.array([0.0, 1.0, 0.5, 1.0])
        with pytest.raises(ValueError, match="non-decreasing"):
            NurbsSurface(**kw)

    def test_rejects_unclamped_knots(self):
        kw = self.kwargs()
        kw["knots_u"] = np.array([0.0, 0.25, 1.0, 1.0])
        with pytest.raises(ValueError, match="clamped"):
            NurbsSurface(**kw)

    def test_rejects_degree_zero(self):
        kw = self.kwargs()
        kw["degree_u"] = 0
        kw["knots_u"] = np.array([0.0, 0.5, 1.0])
        with pytest.raises(ValueError, match="degree_u"):
            NurbsSurface(**kw)


class TestEvaluate:
    def test_bilinear_midpoint(self):
        surf = lattice_surface((0.0, 2.0), (0.0, 10.0), 2, 2, 1, 1,
                               control_z=np.array([[0.0, 1.0], [2.0, 4.0]]))
        np.testing.assert_allclose(evaluate(surf, 0.5, 0.5), [1.0, 5.0, 1.75], atol=1e-12)

    def test_rational_midpoint_hand_value(self):
        surf = lattice_surface((0.0, 2.0), (0.0, 10.0), 2, 2, 1, 1,
                               control_z=np.array([[0.0, 1.0], [2.0, 4.0]]),
                               weights=np.array([[1.0, 2.0], [3.0, 4.0]]))
        # weighted average with weights 1,2,3,4 over the four corners
        np.testing.assert_allclose(evaluate(surf, 0.5, 0.5), [1.4, 6.0, 2.4], atol=1e-12)

    def test_quadratic_ridge_midpoint(self):
        z = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 0.0]])
        surf = lattice_surface((0.0, 4.0), (0.0, 1.0), 3, 2, 2, 1, control_z=z)
        for v in (0.0, 0.3, 1.0):
            point = evaluate(surf, 0.5, v)
            assert point[0] == pytest.approx(2.0, abs=1e-12)
            assert point[2] == pytest.approx(0.5, abs=1e-12)

    def test_corners_interpolate_control_net(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            surf = random_lattice(rng)
            u0, u1 = surf.domain_u
            v0, v1 = surf.domain_v
            np.testing.assert_allclose(
                evaluate(surf, u0, v0), surf.control_points[0, 0], atol=1e-9)
            np.testing.assert_allclose(
                evaluate(surf, u1, v0), surf.control_points[-1, 0], atol=1e-9)
            np.testing.assert_allclose(
                evaluate(surf, u0, v1), surf.control_points[0, -1], atol=1e-9)
            np.testing.assert_allclose(
                evaluate(surf, u1, v1), surf.control_points[-1, -1], atol=1e-9)

    def test_weight_scaling_leaves_surface_unchanged(self):
        rng = np.random.default_rng(6)
        surf = random_lattice(rng)
        scaled = surf.with_updates(weights=surf.weights * 3.7)
        for _ in range(40):
            u = rng.uniform(*surf.domain_u)
            v = rng.uniform(*surf.domain_v)
            np.testing.assert_allclose(evaluate(surf, u, v), evaluate(scaled, u, v),
                                       rtol=0, atol=1e-12)

    def test_constant_control_z_gives_constant_height(self):
        rng = np.random.default_rng(7)
        surf = random_lattice(rng)
        flat = surf.with_updates(control_z=np.full((surf.num_ctrl_u, surf.num_ctrl_v), 4.25))
        for _ in range(200):
            u = rng.uniform(*flat.domain_u)
            v = rng.uniform(*flat.domain_v)
            assert evaluate(flat, u, v)[2] == pytest.approx(4.25, abs=1e-12)

    def test_with_updates_does_not_mutate_original(self):
        rng = np.random.default_rng(8)
        surf = random_lattice(rng)
        z_before = surf.control_points[:, :, 2].copy()
        surf.with_updates(control_z=z_before + 10.0,
                          weights=np.ones_like(surf.weights))
        np.testing.assert_array_equal(surf.control_points[:, :, 2], z_before)


class TestGradients:
    def fd_check(self, surf, u, v, h=1e-6):
        d_ctrl, d_w = gradients(surf, u, v)
        z = surf.control_points[:, :, 2]
        rng = np.random.default_rng(0)
        num_u, num_v = surf.num_ctrl_u, surf.num_ctrl_v
        picks = {(int(rng.integers(num_u)), int(rng.integers(num_v))) for _ in range(6)}
        for a, b in picks:
            bump = np.zeros_like(z)
            bump[a, b] = h
            fd = (evaluate(surf.with_updates(control_z=z + bump), u, v)[2]
                  - evaluate(surf.with_updates(control_z=z - bump), u, v)[2]) / (2 * h)
            assert d_ctrl[a, b] == pytest.approx(fd, abs=1e-7, rel=1e-5)
            w_hi = surf.weights.copy()
            w_lo = surf.weights.copy()
            w_hi[a, b] += h
            w_lo[a, b] -= h
            fd_w = (evaluate(surf.with_updates(weights=w_hi), u, v)[2]
                    - evaluate(surf.with_updates(weights=w_lo), u, v)[2]) / (2 * h)
            assert d_w[a, b] == pytest.approx(fd_w, abs=1e-7, rel=1e-5)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        for _ in range(4):
            surf = random_lattice(rng)
            for _ in range(3):
                u = rng.uniform(*surf.domain_u)
                v = rng.uniform(*surf.domain_v)
                self.fd_check(surf, u, v)

    def test_zero_outside_active_window(self):
        rng = np.random.default_rng(10)
        surf = random_lattice(rng, num_u=7, num_v=7, degree_u=2, degree_v=2)
        d_ctrl, d_w = gradients(surf, 0.01, 0.01)
        assert np.count_nonzero(d_ctrl) <= 9
        assert np.count_nonzero(d_w) <= 9
        assert d_ctrl[-1, -1] == 0.0 and d_w[-1, -1] == 0.0

    def test_control_gradient_sums_to_one(self):
        rng = np.random.default_rng(11)
        surf = random_lattice(rng)
        for _ in range(20):
            u = rng.uniform(*surf.domain_u)
            v = rng.uniform(*surf.domain_v)
            d_ctrl, _ = gradients(surf, u, v)
            assert d_ctrl.sum() == pytest.approx(1.0, abs=1e-12)


class TestGridEvaluation:
    def test_matches_pointwise_evaluation(self):
        rng = np.random.default_rng(12)
        surf = random_lattice(rng)
        x0, x1, y0, y1 = surf.xy_extent()
        xs = np.linspace(x0, x1, 7)
        ys = np.linspace(y0, y1, 5)
        grid = evaluate_grid(surf, xs, ys)
        assert grid.shape == (5, 7)
        for r, y in enumerate(ys):
            for c, x in enumerate(xs):
                u, v = surf.world_to_param(x, y)
                assert grid[r, c] == pytest.approx(evaluate(surf, float(u), float(v))[2],
                                                   abs=1e-12)

    def test_query_outside_extent_raises(self):
        rng = np.random.default_rng(13)
        surf = random_lattice(rng)
        x0, x1, y0, y1 = surf.xy_extent()
        with pytest.raises(ValueError, match="outside the surface extent"):
            evaluate_grid(surf, np.array([x1 + 1.0]), np.array([y0]))

    def test_rasterize_constant_surface(self):
        surf = lattice_surface((0.0, 4.0), (0.0, 3.0), 4, 4,
                               control_z=np.full((4, 4), 2.5))
        template = Raster(5, 4, 1.0, 1.0, 0.0, 0.0, np.zeros((4, 5)))
        out = rasterize(surf, template)
        np.testing.assert_allclose(out.values, 2.5, atol=1e-12)
        assert (out.width, out.height) == (5, 4)
        assert (out.origin_x, out.origin_y) == (0.0, 0.0)

    def test_rasterize_bilinear_corners(self):
        z = np.array([[1.0, 3.0], [5.0, 9.0]])
        surf = lattice_surface((0.0, 4.0), (0.0, 3.0), 2, 2, 1, 1, control_z=z)
        template = Raster(5, 4, 1.0, 1.0, 0.0, 0.0, np.zeros((4, 5)))
        out = rasterize(surf, template)
        # row 0 is the southern row, so the y=0 lattice edge lands there
        assert out.values[0, 0] == pytest.approx(1.0, abs=1e-12)
        assert out.values[0, -1] == pytest.approx(5.0, abs=1e-12)
        assert out.values[-1, 0] == pytest.approx(3.0, abs=1e-12)
        assert out.values[-1, -1] == pytest.approx(9.0, abs=1e-12)


class TestWorldToParam:
    def test_extent_corners_hit_domain_ends(self):
        rng = np.random.default_rng(14)
        surf = random_lattice(rng)
        x0, x1, y0, y1 = surf.xy_extent()
        u, v = surf.world_to_param(x0, y0)
        assert (u, v) == surf.domain_u[:1] + surf.domain_v[:1]
        u, v = surf.world_to_param(x1, y1)
        assert u == surf.domain_u[1] and v == surf.domain_v[1]

    def test_small_overhang_is_clamped(self):
        rng = np.random.default_rng(15)
        surf = random_lattice(rng)
        x0, x1, y0, y1 = surf.xy_extent()
        u, v = surf.world_to_param(x1 + 1e-7 * (x1 - x0), y0 - 1e-7 * (y1 - y0))
        assert u == surf.domain_u[1] and v == surf.domain_v[0]

    def test_far_outside_raises(self):
        rng = np.random.default_rng(16)
        surf = random_lattice(rng)
        x0, x1, y0, y1 = surf.xy_extent()
        with pytest.raises(ValueError, match="outside"):
            surf.world_to_param(x1 + 0.1 * (x1 - x0), y0)

    def test_requires_frozen_lattice(self):
        surf = NurbsSurface(
            1, 1, np.array([0.0, 0.0, 1.0, 1.0]), np.array([0.0, 0.0, 1.0, 1.0]),
            np.zeros((2, 2, 3)), np.ones((2, 2)), xy_frozen=False)
        with pytest.raises(ValueError, match="xy_frozen"):
            surf.world_to_param(0.0, 0.0)


class TestSerialization:
    def test_roundtrip_is_exact(self, tmp_path):
        rng = np.random.default_rng(17)
        surf = random_lattice(rng)
        path = tmp_path / "surface.txt"
        save_surface(surf, path)
        back = load_surface(path)
        assert (back.degree_u, back.degree_v) == (surf.degree_u, surf.degree_v)
        assert back.xy_frozen == surf.xy_frozen
        np.testing.assert_array_equal(back.knots_u, surf.knots_u)
        np.testing.assert_array_equal(back.knots_v, surf.knots_v)
        np.testing.assert_array_equal(back.control_points, surf.control_points)
        np.testing.assert_array_equal(back.weights, surf.weights)

    def test_rejects_wrong_signature(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("something-else 1\n")
        with pytest.raises(ValueError, match="not a surface file"):
            load_surface(path)

    def test_rejects_missing_field(self, tmp_path):
        rng = np.random.default_rng(18)
        surf = random_lattice(rng)
        path = tmp_path / "surface.txt"
        save_surface(surf, path)
        lines = [l for l in path.read_text().splitlines() if not l.startswith("knots_u")]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="missing field"):
            load_surface(path)

    def test_rejects_wrong_control_count(self, tmp_path):
        rng = np.random.default_rng(19)
        surf = random_lattice(rng)
        path = tmp_path / "surface.txt"
        save_surface(surf, path)
        lines = path.read_text().splitlines()
        lines = lines[:-1]  # drop one cp line
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="cp x y z w"):
            load_surface(path)
