"""External potential P: synthetic analytic fields, PGM images and edge maps.

Every evaluation returns the value, the gradient and the (symmetric) Hessian,
plus the local polar quantities e1/e2 used by the convexity certificate.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any, NamedTuple

import numpy as np
from pydantic import ValidationError
from scipy import ndimage

from dynsnake.errors import (
    DegenerateFrameError,
    DomainError,
    InvalidSpecError,
    NoValidSampleError,
    PgmParseError,
    SizeError,
)
from dynsnake.models import FieldKind, FieldSpec, Region

logger = logging.getLogger(__name__)

GRADIENT_FLOOR = 1e-8
DEFAULT_HALF_WIDTH = 100.0
MIN_REGION_SAMPLES = 9

PGM_TYPES = {
    b"P2": False,  # ASCII raster
    b"P5": True,  # binary raster
}


@dataclass(frozen=True)
class ScalarField:
    """Immutable 2-D potential, analytic or sampled on a regular grid.

    Grid values are stored as a (height, width) array; lattice node (row j,
    column i) sits at (origin_x + i * spacing, origin_y + j * spacing).
    """

    kind: FieldKind
    center: tuple[float, float] = (0.0, 0.0)
    k: float = 1.0
    amplitude: float = 1.0
    width_param: float = 1.0
    radius: float = 1.0
    bounds: tuple[float, float, float, float] = (
        -DEFAULT_HALF_WIDTH,
        -DEFAULT_HALF_WIDTH,
        DEFAULT_HALF_WIDTH,
        DEFAULT_HALF_WIDTH,
    )
    values: np.ndarray | None = field(default=None, repr=False, compare=False)
    spacing: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)
    # Px, Py, Pxx, Pyy, Pxy on lattice nodes; NaN on the one-pixel border
    _derivs: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.kind != FieldKind.GRID:
            return
        if self.values is None:
            raise InvalidSpecError("grid field needs a values array")
        if not (math.isfinite(self.spacing) and self.spacing > 0):
            raise InvalidSpecError(f"grid spacing must be > 0, got {self.spacing}")
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.size == 0:
            raise InvalidSpecError("grid values must be a non-empty 2-D array")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        h, w = values.shape
        x0, y0 = self.origin
        object.__setattr__(self, "bounds", (x0, y0, x0 + (w - 1) * self.spacing, y0 + (h - 1) * self.spacing))
        if h >= 3 and w >= 3:
            object.__setattr__(self, "_derivs", _lattice_derivatives(values, self.spacing))

    @property
    def is_grid(self) -> bool:
        return self.kind == FieldKind.GRID

    @property
    def width(self) -> int:
        return 0 if self.values is None else int(self.values.shape[1])

    @property
    def height(self) -> int:
        return 0 if self.values is None else int(self.values.shape[0])

    @property
    def diagonal(self) -> float:
        xmin, ymin, xmax, ymax = self.bounds
        return math.hypot(xmax - xmin, ymax - ymin)

    def contains(self, points: np.ndarray, derivatives: bool = True) -> np.ndarray:
        """Mask of points where the field (and optionally its derivatives) can be evaluated."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        xmin, ymin, xmax, ymax = self.bounds
        margin = self.spacing if (self.is_grid and derivatives) else 0.0
        tol = 1e-9 * (self.spacing if self.is_grid else max(self.diagonal, 1.0))
        finite = np.all(np.isfinite(pts), axis=1)
        return (
            finite
            & (pts[:, 0] >= xmin + margin - tol)
            & (pts[:, 0] <= xmax - margin + tol)
            & (pts[:, 1] >= ymin + margin - tol)
            & (pts[:, 1] <= ymax - margin + tol)
        )


class FieldSample(NamedTuple):
    value: np.ndarray  # (n,)
    gradient: np.ndarray  # (n, 2)
    hessian: np.ndarray  # (n, 2, 2)


class PolarQuantities(NamedTuple):
    r: float
    P_r: float
    P_rr: float
    e1: float
    e2: float


class RegionMinimum(NamedTuple):
    A: float
    argmin: tuple[float, float]
    skipped: int
    sample_count: int


def _lattice_derivatives(values: np.ndarray, h: float) -> np.ndarray:
    out = np.full((5, *values.shape), np.nan)
    v = values
    c = (slice(1, -1), slice(1, -1))
    out[0][c] = (v[1:-1, 2:] - v[1:-1, :-2]) / (2 * h)
    out[1][c] = (v[2:, 1:-1] - v[:-2, 1:-1]) / (2 * h)
    out[2][c] = (v[1:-1, 2:] - 2 * v[1:-1, 1:-1] + v[1:-1, :-2]) / h**2
    out[3][c] = (v[2:, 1:-1] - 2 * v[1:-1, 1:-1] + v[:-2, 1:-1]) / h**2
    out[4][c] = (v[2:, 2:] - v[2:, :-2] - v[:-2, 2:] + v[:-2, :-2]) / (4 * h**2)
    return out


def build_synthetic(spec: FieldSpec | Mapping[str, Any]) -> ScalarField:
    """Build an analytic test potential (quadratic bowl, Gaussian well or annulus edge)."""
    if not isinstance(spec, FieldSpec):
        try:
            spec = FieldSpec.model_validate(dict(spec))
        except ValidationError as exc:
            raise InvalidSpecError(f"invalid field spec: {exc.errors()[0]['msg']}") from exc
    bounds = spec.bounds
    if bounds is None:
        cx, cy = spec.center
        bounds = (cx - DEFAULT_HALF_WIDTH, cy - DEFAULT_HALF_WIDTH, cx + DEFAULT_HALF_WIDTH, cy + DEFAULT_HALF_WIDTH)
    return ScalarField(
        kind=spec.kind,
        center=spec.center,
        k=spec.k,
        amplitude=spec.amplitude,
        width_param=spec.width,
        radius=spec.radius,
        bounds=bounds,
    )


def _next_token(data: bytes, pos: int) -> tuple[bytes, int, int]:
    """Return (token, token_offset, next_pos), skipping whitespace and '#' comments."""
    n = len(data)
    while pos < n:
        ch = data[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            end = data.find(b"\n", pos)
            pos = n if end < 0 else end + 1
        else:
            break
    if pos >= n:
        raise PgmParseError("unexpected end of header", pos)
    start = pos
    while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
        pos += 1
    return data[start:pos], start, pos


def _header_int(data: bytes, pos: int, name: str) -> tuple[int, int]:
    token, offset, pos = _next_token(data, pos)
    if not token.isdigit():
        raise PgmParseError(f"invalid {name} {token!r}", offset)
    return int(token), pos


def load_pgm(data: bytes, spacing: float = 1.0, origin: tuple[float, float] = (0.0, 0.0)) -> ScalarField:
    """Decode a P2 or P5 PGM stream into a grid field normalised to [0, 1]."""
    magic = data[:2]
    if magic not in PGM_TYPES:
        raise PgmParseError(f"unsupported magic number {magic!r}", 0)
    binary = PGM_TYPES[magic]
    pos = 2
    if len(data) > pos and not (data[pos : pos + 1].isspace() or data[pos : pos + 1] == b"#"):
        raise PgmParseError("missing whitespace after magic number", pos)
    width, pos = _header_int(data, pos, "width")
    height, pos = _header_int(data, pos, "height")
    maxval_offset = pos
    maxval, pos = _header_int(data, pos, "maxval")
    if width < 1 or height < 1:
        raise PgmParseError(f"image size {width}x{height} is empty", maxval_offset)
    if not 1 <= maxval <= 65535:
        raise PgmParseError(f"maxval {maxval} outside [1, 65535]", maxval_offset)
    count = width * height

    if binary:
        if pos >= len(data) or not data[pos : pos + 1].isspace():
            raise PgmParseError("expected a single whitespace byte after maxval", pos)
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        needed = count * dtype.itemsize
        if len(data) - pos < needed:
            raise PgmParseError(f"truncated raster: need {needed} bytes, have {len(data) - pos}", len(data))
        raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(float)
        if raw.max(initial=0) > maxval:
            bad = int(np.argmax(raw > maxval))
            raise PgmParseError(f"sample {int(raw[bad])} exceeds maxval {maxval}", pos + bad * dtype.itemsize)
    else:
        samples = []
        for _ in range(count):
            try:
                token, offset, pos = _next_token(data, pos)
            except PgmParseError as exc:
                raise PgmParseError(f"truncated raster: expected {count} samples, got {len(samples)}", exc.offset) from None
            if not token.isdigit() or int(token) > maxval:
                raise PgmParseError(f"invalid sample {token!r}", offset)
            samples.append(int(token))
        raw = np.asarray(samples, dtype=float)

    logger.debug("decoded %s image %dx%d maxval=%d", magic.decode(), width, height, maxval)
    return ScalarField(
        kind=FieldKind.GRID,
        values=(raw / maxval).reshape(height, width),
        spacing=spacing,
        origin=origin,
    )


def edge_potential(image: ScalarField, sigma: float) -> ScalarField:
    """Edge map P = -|grad(G_sigma * I)|^2 with clamped-edge borders."""
    if not image.is_grid:
        raise InvalidSpecError("edge_potential needs a grid field")
    if not (math.isfinite(sigma) and sigma >= 0):
        raise InvalidSpecError(f"sigma must be >= 0, got {sigma}")
    h = image.spacing
    smoothed = np.asarray(image.values, dtype=float)
    if sigma > 0:
        sigma_px = sigma / h
        radius = math.ceil(3 * sigma_px)
        smoothed = ndimage.gaussian_filter(smoothed, sigma_px, mode="nearest", truncate=radius / sigma_px)
    padded = np.pad(smoothed, 1, mode="edge")
    gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) / (2 * h)
    gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / (2 * h)
    return ScalarField(kind=FieldKind.GRID, values=-(gx**2 + gy**2), spacing=h, origin=image.origin)


def rasterize(
    source: ScalarField, bounds: tuple[float, float, float, float] | None = None, spacing: float = 1.0
) -> ScalarField:
    """Sample an analytic field on a regular lattice anchored at (xmin, ymin)."""
    if source.is_grid:
        return source
    if not (math.isfinite(spacing) and spacing > 0):
        raise InvalidSpecError(f"spacing must be > 0, got {spacing}")
    xmin, ymin, xmax, ymax = bounds or source.bounds
    nx = int(math.floor((xmax - xmin) / spacing + 1e-9)) + 1
    ny = int(math.floor((ymax - ymin) / spacing + 1e-9)) + 1
    gx, gy = np.meshgrid(xmin + spacing * np.arange(nx), ymin + spacing * np.arange(ny))
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    values = evaluate(source, pts, derivatives=False).value
    return ScalarField(kind=FieldKind.GRID, values=values.reshape(ny, nx), spacing=spacing, origin=(xmin, ymin))


def _analytic(f: ScalarField, pts: np.ndarray) -> FieldSample:
    d = pts - np.asarray(f.center, dtype=float)
    n = len(pts)
    hess = np.zeros((n, 2, 2))
    if f.kind == FieldKind.QUADRATIC:
        value = 0.5 * f.k * np.sum(d * d, axis=1)
        grad = f.k * d
        hess[:, 0, 0] = hess[:, 1, 1] = f.k
    elif f.kind == FieldKind.GAUSSIAN:
        s2 = f.width_param**2
        g = np.exp(-np.sum(d * d, axis=1) / (2 * s2))
        value = -f.amplitude * g
        grad = (f.amplitude * g / s2)[:, None] * d
        scale = f.amplitude * g / s2
        hess[:, 0, 0] = scale * (1 - d[:, 0] ** 2 / s2)
        hess[:, 1, 1] = scale * (1 - d[:, 1] ** 2 / s2)
        hess[:, 0, 1] = hess[:, 1, 0] = -scale * d[:, 0] * d[:, 1] / s2
    else:
        rho = np.hypot(d[:, 0], d[:, 1])
        if np.any(rho == 0):
            i = int(np.argmax(rho == 0))
            raise DomainError(pts[i], index=i, message="annulus potential is singular at its center")
        nrm = d / rho[:, None]
        dp = f.k * (rho - f.radius)
        value = 0.5 * f.k * (rho - f.radius) ** 2
        grad = dp[:, None] * nrm
        tangential = dp / rho
        for a in range(2):
            for b in range(a, 2):
                eye = 1.0 if a == b else 0.0
                hess[:, a, b] = f.k * nrm[:, a] * nrm[:, b] + tangential * (eye - nrm[:, a] * nrm[:, b])
        hess[:, 1, 0] = hess[:, 0, 1]
    return FieldSample(value, grad, hess)


def _blend(grid: np.ndarray, fy: np.ndarray, fx: np.ndarray, lo: int, hi_x: int, hi_y: int) -> np.ndarray:
    i0 = np.clip(np.floor(fx).astype(int), lo, max(hi_x - 1, lo))
    j0 = np.clip(np.floor(fy).astype(int), lo, max(hi_y - 1, lo))
    i1 = np.minimum(i0 + 1, hi_x)
    j1 = np.minimum(j0 + 1, hi_y)
    tx = np.clip(fx - i0, 0.0, 1.0)
    ty = np.clip(fy - j0, 0.0, 1.0)
    return (
        grid[..., j0, i0] * (1 - tx) * (1 - ty)
        + grid[..., j0, i1] * tx * (1 - ty)
        + grid[..., j1, i0] * (1 - tx) * ty
        + grid[..., j1, i1] * tx * ty
    )


def _grid(f: ScalarField, pts: np.ndarray, derivatives: bool) -> FieldSample:
    fx = (pts[:, 0] - f.origin[0]) / f.spacing
    fy = (pts[:, 1] - f.origin[1]) / f.spacing
    w, h = f.width, f.height
    value = _blend(f.values, fy, fx, 0, w - 1, h - 1)
    n = len(pts)
    if not derivatives:
        return FieldSample(value, np.zeros((n, 2)), np.zeros((n, 2, 2)))
    if f._derivs is None:
        raise SizeError(f"grid {w}x{h} is too small for derivatives (need at least 3x3)")
    d = _blend(f._derivs, fy, fx, 1, w - 2, h - 2)
    grad = np.column_stack([d[0], d[1]])
    hess = np.empty((n, 2, 2))
    hess[:, 0, 0] = d[2]
    hess[:, 1, 1] = d[3]
    hess[:, 0, 1] = hess[:, 1, 0] = d[4]
    return FieldSample(value, grad, hess)


def evaluate(f: ScalarField, points: np.ndarray, derivatives: bool = True, index_offset: int = 0) -> FieldSample:
    """Vectorised evaluation of value, gradient and Hessian at an (n, 2) array of points.

    Raises DomainError for the first point outside the evaluable domain; its
    index is reported as ``index_offset + position``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    inside = f.contains(pts, derivatives=derivatives)
    if not np.all(inside):
        i = int(np.argmin(inside))
        raise DomainError(pts[i], index=index_offset + i)
    if f.is_grid:
        return _grid(f, pts, derivatives)
    return _analytic(f, pts)


def sample(f: ScalarField, point: Any) -> tuple[float, np.ndarray, np.ndarray]:
    """Value, gradient (2,) and symmetric Hessian (2, 2) at one point."""
    s = evaluate(f, np.asarray(point, dtype=float).reshape(1, 2))
    return float(s.value[0]), s.gradient[0], s.hessian[0]


def _polar_arrays(grad: np.ndarray, hess: np.ndarray) -> tuple[np.ndarray, ...]:
    px, py = grad[:, 0], grad[:, 1]
    pxx, pyy, pxy = hess[:, 0, 0], hess[:, 1, 1], hess[:, 0, 1]
    g = np.hypot(px, py)
    with np.errstate(divide="ignore", invalid="ignore"):
        nx, ny = px / g, py / g
        p_rr = nx * nx * pxx + 2 * nx * ny * pxy + ny * ny * pyy
        kappa = (px * px * pyy - 2 * px * py * pxy + py * py * pxx) / g**3
        r = np.where(kappa == 0, np.inf, 1.0 / kappa)
    e1 = p_rr / 2
    e2 = g * kappa / 2
    return g, r, p_rr, e1, e2


def polar_quantities(f: ScalarField, point: Any) -> PolarQuantities:
    """Radial derivatives and e1 = P_rr/2, e2 = P_r/(2r) in the isopotential frame.

    r is signed with the isopotential curvature; zero curvature gives r = inf
    and e2 = 0.
    """
    _, grad, hess = sample(f, point)
    g, r, p_rr, e1, e2 = _polar_arrays(grad[None, :], hess[None, :, :])
    if not g[0] > GRADIENT_FLOOR:
        raise DegenerateFrameError(point, float(g[0]))
    return PolarQuantities(float(r[0]), float(g[0]), float(p_rr[0]), float(e1[0]), float(e2[0]))


def default_grid_step(f: ScalarField, region: Region | None = None) -> float:
    """One lattice spacing for grid fields; 1/200 of the sampled diagonal for analytic ones."""
    if f.is_grid:
        return f.spacing
    if region is not None:
        return math.hypot(region.bounds[2] - region.bounds[0], region.bounds[3] - region.bounds[1]) / 200.0
    return f.diagonal / 200.0


def region_min_A(f: ScalarField, region: Region, grid_step: float | None = None) -> RegionMinimum:
    """Minimum of min(e1, e2) over lattice samples of the region, skipping degenerate frames.

    Ties go to the first sample in row-major order.
    """
    step = grid_step if grid_step is not None else default_grid_step(f, region)
    if not (math.isfinite(step) and step > 0):
        raise InvalidSpecError(f"grid_step must be > 0, got {step}")
    pts = region.sample_grid(step)
    if len(pts) < MIN_REGION_SAMPLES:
        raise InvalidSpecError(
            f"grid_step {step} gives {len(pts)} region samples, need at least {MIN_REGION_SAMPLES}"
        )
    singular = np.zeros(len(pts), dtype=bool)
    if f.kind == FieldKind.ANNULUS:
        singular = np.all(pts == np.asarray(f.center), axis=1)
    g = np.zeros(len(pts))
    e1 = np.full(len(pts), np.nan)
    e2 = np.full(len(pts), np.nan)
    if not np.all(singular):
        s = evaluate(f, pts[~singular])
        g[~singular], _, _, e1[~singular], e2[~singular] = _polar_arrays(s.gradient, s.hessian)
    valid = g > GRADIENT_FLOOR
    skipped = int(np.count_nonzero(~valid))
    if skipped == len(pts):
        raise NoValidSampleError(skipped)
    if skipped:
        logger.warning("skipped %d of %d region samples with a degenerate polar frame", skipped, len(pts))
    scores = np.where(valid, np.minimum(e1, e2), np.inf)
    i = int(np.argmin(scores))
    return RegionMinimum(float(scores[i]), (float(pts[i, 0]), float(pts[i, 1])), skipped, len(pts))
