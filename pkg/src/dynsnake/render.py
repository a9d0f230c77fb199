"""SVG overlays of contours on a potential, and 8-bit PGM export."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from pathlib import Path

import numpy as np

from dynsnake.contour import Contour
from dynsnake.errors import InvalidSpecError
from dynsnake.models import Topology
from dynsnake.potential import ScalarField, evaluate

logger = logging.getLogger(__name__)

VIEW_WIDTH = 800
MAX_CELLS = 200
STROKES = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]


def view_bounds(field: ScalarField, contours: Sequence[Contour] = ()) -> tuple[float, float, float, float]:
    """Grid fields show their lattice; analytic fields show the contours with a 25% margin."""
    if field.is_grid or not contours:
        return field.bounds
    pts = np.vstack([c.points for c in contours])
    xmin, ymin = pts.min(axis=0)
    xmax, ymax = pts.max(axis=0)
    pad = 0.25 * max(xmax - xmin, ymax - ymin, 1e-6)
    fx0, fy0, fx1, fy1 = field.bounds
    return (
        max(xmin - pad, fx0),
        max(ymin - pad, fy0),
        min(xmax + pad, fx1),
        min(ymax + pad, fy1),
    )


def _gray_cells(
    field: ScalarField, bounds: tuple[float, float, float, float]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xmin, ymin, xmax, ymax = bounds
    w, h = xmax - xmin, ymax - ymin
    cols = min(MAX_CELLS, field.width) if field.is_grid else MAX_CELLS
    rows = max(1, round(cols * h / w)) if w > 0 else 1
    if field.is_grid:
        rows = min(rows, field.height)
    rows = min(rows, MAX_CELLS)
    xs = xmin + (np.arange(cols) + 0.5) * (w / cols)
    ys = ymin + (np.arange(rows) + 0.5) * (h / rows)
    gx, gy = np.meshgrid(xs, ys)
    values = evaluate(field, np.column_stack([gx.ravel(), gy.ravel()]), derivatives=False).value
    return values.reshape(rows, cols), xs, ys


def to_gray(values: np.ndarray) -> np.ndarray:
    """Linear map of the value range onto 0..255; a flat field maps to mid-gray."""
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi - lo <= 0:
        return np.full(values.shape, 128, dtype=np.uint8)
    return np.round(255 * (values - lo) / (hi - lo)).astype(np.uint8)


def render_overlay(
    field: ScalarField,
    contours: Sequence[Contour],
    path: str | Path,
    labels: Sequence[str] | None = None,
    bounds: tuple[float, float, float, float] | None = None,
) -> Path:
    """Write an SVG 1.1 overlay: grayscale field cells plus one polyline per contour.

    Field units are scaled to an 800 px wide viewport with y pointing down, as
    in image rows.
    """
    bounds = bounds or view_bounds(field, contours)
    xmin, ymin, xmax, ymax = bounds
    scale = VIEW_WIDTH / (xmax - xmin)
    height = max(1, round((ymax - ymin) * scale))
    values, xs, ys = _gray_cells(field, bounds)
    gray = to_gray(values)
    cell_w = (xmax - xmin) / len(xs) * scale
    cell_h = (ymax - ymin) / len(ys) * scale

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{VIEW_WIDTH}" height="{height}" '
        f'viewBox="0 0 {VIEW_WIDTH} {height}">',
        f"<!-- field {field.kind.value} bounds {xmin:.6g} {ymin:.6g} {xmax:.6g} {ymax:.6g} -->",
        '<g id="field" shape-rendering="crispEdges">',
    ]
    for j in range(gray.shape[0]):
        for i in range(gray.shape[1]):
            g = int(gray[j, i])
            lines.append(
                f'<rect x="{i * cell_w:.3f}" y="{j * cell_h:.3f}" width="{cell_w:.3f}" height="{cell_h:.3f}" '
                f'fill="rgb({g},{g},{g})"/>'
            )
    lines.append("</g>")
    labels = list(labels) if labels is not None else [f"contour {i}" for i in range(len(contours))]
    for i, contour in enumerate(contours):
        stroke = STROKES[i % len(STROKES)]
        pts = contour.points
        if contour.topology == Topology.CLOSED:
            pts = np.vstack([pts, pts[:1]])
        coords = " ".join(f"{(x - xmin) * scale:.3f},{(y - ymin) * scale:.3f}" for x, y in pts)
        lines.append(f"<!-- legend: {labels[i]} stroke {stroke} -->")
        lines.append(f'<polyline fill="none" stroke="{stroke}" stroke-width="2" points="{coords}"/>')
    lines.append("</svg>")

    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("wrote overlay %s (%d contours)", path, len(contours))
    return path


def write_pgm(field: ScalarField, path: str | Path) -> Path:
    """Write a grid field as an 8-bit binary PGM (values rescaled to 0..255)."""
    if not field.is_grid:
        raise InvalidSpecError("write_pgm needs a grid field; rasterize analytic fields first")
    gray = to_gray(np.asarray(field.values))
    header = f"P5\n{field.width} {field.height}\n255\n".encode("ascii")
    path = Path(path)
    path.write_bytes(header + gray.tobytes())
    logger.info("wrote %s", path)
    return path
