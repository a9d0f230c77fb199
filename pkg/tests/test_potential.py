"""Tests for synthetic fields, PGM decoding, edge maps and polar quantities."""

import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from dynsnake.errors import (
    DegenerateFrameError,
    DomainError,
    InvalidSpecError,
    NoValidSampleError,
    PgmParseError,
)
from dynsnake.models import FieldKind, FieldSpec, Region
from dynsnake.potential import (
    ScalarField,
    build_synthetic,
    default_grid_step,
    edge_potential,
    evaluate,
    load_pgm,
    polar_quantities,
    rasterize,
    region_min_A,
    sample,
)


def _grid(values, spacing=1.0, origin=(0.0, 0.0)):
    return ScalarField(kind=FieldKind.GRID, values=np.asarray(values, dtype=float), spacing=spacing, origin=origin)


class TestBuildSynthetic:
    def test_quadratic_bowl(self):
        f = build_synthetic({"kind": "quadratic", "k": 1})
        p, grad, hess = sample(f, (3, 4))
        assert p == pytest.approx(12.5)
        np.testing.assert_allclose(grad, [3, 4])
        np.testing.assert_allclose(hess, np.eye(2))

    def test_quadratic_bowl_k2(self):
        f = build_synthetic(FieldSpec(k=2))
        p, grad, hess = sample(f, (1, 1))
        assert p == pytest.approx(2.0)
        np.testing.assert_allclose(grad, [2, 2])
        np.testing.assert_allclose(hess, 2 * np.eye(2))

    def test_gaussian_center(self):
        f = build_synthetic({"kind": "gaussian", "amplitude": 1, "width": 1})
        p, grad, _ = sample(f, (0, 0))
        assert p == pytest.approx(-1.0)
        np.testing.assert_allclose(grad, [0, 0])

    def test_gaussian_derivatives_match_finite_differences(self):
        f = build_synthetic({"kind": "gaussian", "amplitude": 2, "width": 1.5, "center": (0.5, -0.5)})
        x = np.array([1.1, 0.3])
        h = 1e-5
        _, grad, hess = sample(f, x)
        for a in range(2):
            e = np.zeros(2)
            e[a] = h
            pp, gp, _ = sample(f, x + e)
            pm, gm, _ = sample(f, x - e)
            assert grad[a] == pytest.approx((pp - pm) / (2 * h), rel=1e-6)
            np.testing.assert_allclose(hess[:, a], (gp - gm) / (2 * h), rtol=1e-5, atol=1e-8)

    def test_annulus_polar_values(self):
        f = build_synthetic({"kind": "annulus", "k": 2, "radius": 1})
        p, _, _ = sample(f, (2, 0))
        q = polar_quantities(f, (2, 0))
        assert p == pytest.approx(1.0)
        assert q.P_r == pytest.approx(2.0)
        assert q.P_rr == pytest.approx(2.0)

    def test_annulus_center_is_singular(self):
        f = build_synthetic({"kind": "annulus"})
        with pytest.raises(DomainError, match="singular"):
            sample(f, (0, 0))

    def test_hessian_is_symmetric(self):
        f = build_synthetic({"kind": "gaussian", "center": (0.2, 0.1)})
        s = evaluate(f, np.array([[0.7, -0.4], [1.3, 0.9]]))
        np.testing.assert_array_equal(s.hessian, np.transpose(s.hessian, (0, 2, 1)))

    def test_invalid_spec(self):
        with pytest.raises(InvalidSpecError, match="width"):
            build_synthetic({"kind": "gaussian", "width": -1})

    def test_default_bounds_follow_center(self):
        f = build_synthetic({"center": (10, 0)})
        assert f.bounds == (-90, -100, 110, 100)


class TestLoadPgm:
    def test_p2(self):
        f = load_pgm(b"P2\n2 2\n255\n0 255\n255 0\n")
        assert f.is_grid
        np.testing.assert_array_equal(f.values, [[0, 1], [1, 0]])
        assert f.spacing == 1.0

    def test_p5_matches_p2(self):
        p2 = load_pgm(b"P2\n2 2\n255\n0 255\n255 0\n")
        p5 = load_pgm(b"P5\n2 2\n255\n" + bytes([0, 255, 255, 0]))
        np.testing.assert_array_equal(p2.values, p5.values)

    def test_p5_sixteen_bit(self):
        f = load_pgm(b"P5 1 2 1000\n" + (500).to_bytes(2, "big") + (1000).to_bytes(2, "big"))
        np.testing.assert_allclose(f.values, [[0.5], [1.0]])

    def test_header_comments(self):
        f = load_pgm(b"P2\n# made by hand\n2 1 # width height\n4\n1 4\n")
        np.testing.assert_allclose(f.values, [[0.25, 1.0]])

    def test_missing_height(self):
        with pytest.raises(PgmParseError):
            load_pgm(b"P2\n2\n")

    def test_bad_magic(self):
        with pytest.raises(PgmParseError, match="magic") as exc:
            load_pgm(b"P6\n1 1\n255\n\x00\x00\x00")
        assert exc.value.offset == 0

    def test_maxval_out_of_range(self):
        with pytest.raises(PgmParseError, match="maxval"):
            load_pgm(b"P2\n1 1\n70000\n1\n")

    def test_zero_maxval(self):
        with pytest.raises(PgmParseError, match="maxval"):
            load_pgm(b"P2\n1 1\n0\n0\n")

    def test_truncated_p5(self):
        with pytest.raises(PgmParseError, match="truncated") as exc:
            load_pgm(b"P5\n2 2\n255\n\x00\x01")
        assert exc.value.offset == 13

    def test_truncated_p2(self):
        with pytest.raises(PgmParseError, match="truncated"):
            load_pgm(b"P2\n2 2\n255\n0 1 2\n")

    def test_sample_above_maxval(self):
        with pytest.raises(PgmParseError, match="invalid sample"):
            load_pgm(b"P2\n1 1\n10\n11\n")

    def test_spacing_and_origin(self):
        f = load_pgm(b"P2\n3 2\n1\n0 1 0\n1 0 1\n", spacing=0.5, origin=(1.0, 2.0))
        assert f.bounds == (1.0, 2.0, 2.0, 2.5)


class TestEdgePotential:
    def _step(self, width=21, height=9, column=10):
        values = np.zeros((height, width))
        values[:, column:] = 1.0
        return _grid(values)

    def test_constant_image(self):
        edge = edge_potential(_grid(np.full((5, 6), 0.7)), sigma=1.0)
        np.testing.assert_array_equal(edge.values, 0.0)

    def test_non_positive(self):
        rng = np.random.default_rng(7)
        edge = edge_potential(_grid(rng.random((12, 10))), sigma=0.8)
        assert np.all(edge.values <= 0)

    def test_valley_on_step(self):
        edge = edge_potential(self._step(), sigma=0)
        row = edge.values[4]
        assert set(np.flatnonzero(row == row.min())) == {9, 10}

    def test_smoothing_widens_and_flattens_valley(self):
        sharp = edge_potential(self._step(), sigma=0).values[4]
        smooth = edge_potential(self._step(), sigma=1).values[4]
        assert np.count_nonzero(smooth < 0) > np.count_nonzero(sharp < 0)
        assert abs(smooth.min()) < abs(sharp.min())

    def test_rejects_negative_sigma(self):
        with pytest.raises(InvalidSpecError, match="sigma"):
            edge_potential(self._step(), sigma=-1)

    def test_rejects_analytic_field(self):
        with pytest.raises(InvalidSpecError, match="grid"):
            edge_potential(build_synthetic({}), sigma=1)


class TestGridSampling:
    def test_second_derivatives_of_parabola(self):
        xs = np.arange(11) * 0.1
        values = np.tile(xs**2, (11, 1))
        f = _grid(values, spacing=0.1)
        _, grad, hess = sample(f, (0.5, 0.5))
        assert grad[0] == pytest.approx(1.0, abs=1e-6)
        assert hess[0, 0] == pytest.approx(2.0, abs=1e-6)
        assert hess[0, 1] == pytest.approx(0.0, abs=1e-6)

    def test_bilinear_value(self):
        f = _grid([[0.0, 1.0], [2.0, 3.0]])
        s = evaluate(f, np.array([[0.5, 0.5]]), derivatives=False)
        assert s.value[0] == pytest.approx(1.5)

    def test_small_grid_has_no_derivatives(self):
        f = _grid([[0.0, 1.0], [2.0, 3.0]])
        assert evaluate(f, np.array([[1.0, 1.0]]), derivatives=False).value[0] == pytest.approx(3.0)
        with pytest.raises(DomainError):
            sample(f, (0.5, 0.5))

    def test_border_needs_margin_for_derivatives(self):
        f = _grid(np.zeros((5, 5)))
        with pytest.raises(DomainError, match="outside"):
            sample(f, (0.5, 2.0))
        evaluate(f, np.array([[0.5, 2.0]]), derivatives=False)

    def test_domain_error_reports_offset_index(self):
        f = _grid(np.zeros((5, 5)))
        with pytest.raises(DomainError) as exc:
            evaluate(f, np.array([[2, 2], [9, 9]]), index_offset=1)
        assert exc.value.index == 2
        assert exc.value.point == (9.0, 9.0)

    def test_rasterized_derivatives_converge(self):
        source = build_synthetic({"kind": "gaussian", "width": 1.0})
        points = np.array([[0.3, -0.2], [0.71, 0.45], [-0.5, 0.6]])
        exact = evaluate(source, points)
        errors = []
        for spacing in (0.1, 0.05):
            grid = rasterize(source, (-2, -2, 2, 2), spacing)
            approx = evaluate(grid, points)
            errors.append(np.max(np.abs(approx.hessian - exact.hessian)))
        assert errors[0] / errors[1] >= 3.0

    def test_rasterize_passes_grids_through(self):
        f = _grid(np.zeros((3, 3)))
        assert rasterize(f) is f


class TestPolarQuantities:
    def test_annulus(self):
        f = build_synthetic({"kind": "annulus", "k": 1, "radius": 1})
        q = polar_quantities(f, (2, 0))
        assert q.P_r == pytest.approx(1.0)
        assert q.P_rr == pytest.approx(1.0)
        assert q.r == pytest.approx(2.0)
        assert q.e1 == pytest.approx(0.5)
        assert q.e2 == pytest.approx(0.25)

    @pytest.mark.parametrize("point", [(1, 0), (0.3, -2.5), (-4, 4)])
    def test_bowl_is_isotropic(self, point):
        q = polar_quantities(build_synthetic({"k": 3}), point)
        assert q.e1 == pytest.approx(1.5)
        assert q.e2 == pytest.approx(1.5)

    def test_radial_derivatives_match_profile(self):
        f = build_synthetic({"kind": "gaussian", "amplitude": 1, "width": 1})
        rho = 0.8
        q = polar_quantities(f, (rho, 0))
        g = math.exp(-(rho**2) / 2)
        assert q.P_r == pytest.approx(rho * g, abs=1e-8)
        assert q.P_rr == pytest.approx((1 - rho**2) * g, abs=1e-8)

    def test_flat_field_is_degenerate(self):
        f = build_synthetic({"k": 0})
        with pytest.raises(DegenerateFrameError):
            polar_quantities(f, (1, 1))

    def test_straight_isopotentials_have_infinite_radius(self):
        xs = np.arange(7, dtype=float)
        f = _grid(np.tile(xs, (7, 1)))
        q = polar_quantities(f, (3, 3))
        assert math.isinf(q.r)
        assert q.e2 == 0.0


class TestRegionMinA:
    def test_bowl_off_center_disk(self):
        f = build_synthetic({"k": 1})
        rm = region_min_A(f, Region.disk((3, 1), 1), grid_step=0.1)
        assert rm.A == pytest.approx(0.5)
        assert rm.skipped == 0

    def test_inverted_bowl_annulus(self):
        f = build_synthetic({"k": -1})
        rm = region_min_A(f, Region.annulus((0, 0), 1, 3), grid_step=0.1)
        assert rm.A == pytest.approx(-0.5)

    def test_bowl_center_is_skipped(self):
        f = build_synthetic({"k": 1})
        rm = region_min_A(f, Region.disk((0, 0), 1), grid_step=0.25)
        assert rm.skipped == 1
        assert rm.A == pytest.approx(0.5)

    def test_flat_field(self):
        f = build_synthetic({"k": 0})
        with pytest.raises(NoValidSampleError):
            region_min_A(f, Region.disk((0, 0), 1), grid_step=0.25)

    def test_too_few_samples(self):
        f = build_synthetic({"k": 1})
        with pytest.raises(InvalidSpecError, match="at least 9"):
            region_min_A(f, Region.disk((3, 0), 1), grid_step=1.0)

    def test_monotone_under_inclusion(self):
        f = build_synthetic({"kind": "gaussian", "amplitude": 1, "width": 1})
        outer = region_min_A(f, Region.rectangle((-2, -2), (2, 2)), grid_step=0.05)
        inner = region_min_A(f, Region.rectangle((0.5, -1), (1.5, 1)), grid_step=0.05)
        assert inner.A >= outer.A

    def test_annulus_center_sample_skipped(self):
        f = build_synthetic({"kind": "annulus", "k": 1, "radius": 1})
        rm = region_min_A(f, Region.disk((0, 0), 0.5), grid_step=0.125)
        assert rm.skipped >= 1

    def test_default_step_uses_region_for_analytic_fields(self):
        f = build_synthetic({"k": 1})
        region = Region.rectangle((0, 0), (3, 4))
        assert default_grid_step(f, region) == pytest.approx(5 / 200)

    def test_default_step_is_spacing_for_grids(self):
        assert default_grid_step(_grid(np.zeros((4, 4)), spacing=0.5)) == 0.5
