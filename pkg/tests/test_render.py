"""Tests for SVG overlays and PGM export."""

import os
import re
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from dynsnake.contour import Contour, circle, line
from dynsnake.errors import InvalidSpecError
from dynsnake.models import FieldKind
from dynsnake.potential import ScalarField, build_synthetic, load_pgm
from dynsnake.render import STROKES, render_overlay, to_gray, view_bounds, write_pgm


def _grid(values):
    return ScalarField(kind=FieldKind.GRID, values=np.asarray(values, dtype=float))


class TestToGray:
    def test_flat_field_is_mid_gray(self):
        assert to_gray(np.full((2, 2), 3.0)).tolist() == [[128, 128], [128, 128]]

    def test_range_maps_to_full_scale(self):
        assert to_gray(np.array([-1.0, 0.0, 1.0])).tolist() == [0, 128, 255]


class TestWritePgm:
    def test_header_and_raster(self, tmp_path):
        path = write_pgm(_grid([[0, 1, 2], [3, 4, 5]]), tmp_path / "f.pgm")
        data = path.read_bytes()
        assert data.startswith(b"P5\n3 2\n255\n")
        assert list(data[-6:]) == [0, 51, 102, 153, 204, 255]

    def test_reloads(self, tmp_path):
        path = write_pgm(_grid([[0, 2], [4, 8]]), tmp_path / "f.pgm")
        field = load_pgm(path.read_bytes())
        np.testing.assert_allclose(field.values, [[0, 64 / 255], [128 / 255, 1]], atol=1 / 255)

    def test_rejects_analytic_field(self, tmp_path):
        with pytest.raises(InvalidSpecError, match="rasterize"):
            write_pgm(build_synthetic({"k": 1}), tmp_path / "f.pgm")


class TestViewBounds:
    def test_grid_uses_lattice(self):
        assert view_bounds(_grid(np.zeros((3, 5))), [line((1, 1), (2, 1), 3)]) == (0.0, 0.0, 4.0, 2.0)

    def test_analytic_pads_contours(self):
        bounds = view_bounds(build_synthetic({"k": 1}), [line((0, 0), (4, 2), 3)])
        assert bounds == pytest.approx((-1.0, -1.0, 5.0, 3.0))

    def test_analytic_clipped_to_field(self):
        field = build_synthetic({"k": 1, "bounds": (-0.5, -0.5, 10, 10)})
        assert view_bounds(field, [line((0, 0), (4, 2), 3)]) == pytest.approx((-0.5, -0.5, 5.0, 3.0))


class TestRenderOverlay:
    def test_svg_structure(self, tmp_path):
        field = _grid(np.arange(12).reshape(3, 4))
        contours = [line((0, 0), (3, 2), 3), circle((1.5, 1), 0.5, 4)]
        path = render_overlay(field, contours, tmp_path / "o.svg", labels=["start", "ring"])
        svg = path.read_text(encoding="utf-8")
        assert svg.startswith('<?xml version="1.0" encoding="UTF-8"?>\n<svg')
        assert svg.rstrip().endswith("</svg>")
        assert svg.count("<rect ") == 12
        assert svg.count("<polyline ") == 2
        assert f"legend: start stroke {STROKES[0]}" in svg
        assert f"legend: ring stroke {STROKES[1]}" in svg

    def test_y_points_down(self, tmp_path):
        field = _grid(np.zeros((3, 5)))
        svg = render_overlay(field, [line((0, 0), (4, 2), 3)], tmp_path / "o.svg").read_text(encoding="utf-8")
        points = re.search(r'<polyline[^>]*points="([^"]+)"', svg).group(1).split()
        assert points[0] == "0.000,0.000"
        assert points[-1] == "800.000,400.000"

    def test_closed_contour_repeats_first_point(self, tmp_path):
        field = build_synthetic({"k": 1})
        svg = render_overlay(field, [circle((0, 0), 1, 6)], tmp_path / "o.svg").read_text(encoding="utf-8")
        points = re.search(r'points="([^"]+)"', svg).group(1).split()
        assert len(points) == 7
        assert points[0] == points[-1]

    def test_default_labels(self, tmp_path):
        contour = Contour(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]]))
        svg = render_overlay(build_synthetic({"k": 1}), [contour], tmp_path / "o.svg").read_text(encoding="utf-8")
        assert "legend: contour 0" in svg
