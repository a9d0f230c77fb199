"""Validated parameter, region and report models."""

from __future__ import annotations

import math
from enum import Enum
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Topology(str, Enum):
    OPEN = "open"  # first and last points fixed
    CLOSED = "closed"

    @classmethod
    def from_value(cls, value: str | Topology) -> Topology:
        if isinstance(value, Topology):
            return value
        normalized = str(value).strip().lower().replace("_", "-")
        if normalized in ("open", "open-fixed-ends"):
            return cls.OPEN
        return cls(normalized)


class FieldKind(str, Enum):
    QUADRATIC = "quadratic"
    GAUSSIAN = "gaussian"
    ANNULUS = "annulus"
    GRID = "grid"


class RegionShape(str, Enum):
    RECTANGLE = "rectangle"
    DISK = "disk"
    ANNULUS = "annulus"


class StopCriterion(str, Enum):
    STEADY_STATE = "steady-state"
    STEADY_SUPPORT = "steady-support"
    BOTH = "both"


class EquilibriumLabel(str, Enum):
    STABLE_NODE = "stable-node"
    STABLE_FOCUS = "stable-focus"
    MIXED_STABLE = "mixed-stable"
    SADDLE_UNSTABLE = "saddle/unstable"
    NON_HYPERBOLIC = "non-hyperbolic"

    @property
    def is_stable(self) -> bool:
        return self in (EquilibriumLabel.STABLE_NODE, EquilibriumLabel.STABLE_FOCUS, EquilibriumLabel.MIXED_STABLE)


def _finite(name: str, value: float) -> float:
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    return value


class SnakeParams(BaseModel):
    """Physical and numerical parameters of the snake.

    The segment count N is not stored here; it is implied by the contour.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    omega1: float = Field(0.0, ge=0, description="elasticity weight")
    omega2: float = Field(0.0, ge=0, description="rigidity weight")
    mu: float = Field(1.0, gt=0, description="mass density")
    gamma: float = Field(0.0, ge=0, description="damping density")
    tau: float = Field(0.1, gt=0, description="time step")

    @field_validator("omega1", "omega2", "mu", "gamma", "tau")
    @classmethod
    def check_finite(cls, v: float, info: Any) -> float:
        return _finite(info.field_name, v)

    @property
    def beta(self) -> float:
        """Mass/damping coefficient of the step matrix, mu/tau^2 + gamma/(2 tau)."""
        return self.mu / self.tau**2 + self.gamma / (2.0 * self.tau)


class FieldSpec(BaseModel):
    """Parameters of a synthetic analytic potential."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: FieldKind = FieldKind.QUADRATIC
    center: tuple[float, float] = (0.0, 0.0)
    k: float = 1.0  # bowl / annulus stiffness, may be negative (inverted bowl)
    amplitude: float = 1.0  # gaussian depth a
    width: float = 1.0  # gaussian s
    radius: float = 1.0  # annulus R
    bounds: tuple[float, float, float, float] | None = None  # xmin, ymin, xmax, ymax

    @field_validator("k", "amplitude")
    @classmethod
    def check_finite(cls, v: float, info: Any) -> float:
        return _finite(info.field_name, v)

    @field_validator("width", "radius")
    @classmethod
    def check_positive(cls, v: float, info: Any) -> float:
        _finite(info.field_name, v)
        if v <= 0:
            raise ValueError(f"{info.field_name} must be > 0, got {v}")
        return v

    @field_validator("center")
    @classmethod
    def check_center(cls, v: tuple[float, float]) -> tuple[float, float]:
        for c in v:
            _finite("center", c)
        return v

    @model_validator(mode="after")
    def check_kind(self) -> FieldSpec:
        if self.kind == FieldKind.GRID:
            raise ValueError("grid fields are loaded from images, not built from a synthetic spec")
        if self.bounds is not None:
            xmin, ymin, xmax, ymax = self.bounds
            for b in self.bounds:
                _finite("bounds", b)
            if not (xmax > xmin and ymax > ymin):
                raise ValueError("bounds must satisfy xmin < xmax and ymin < ymax")
        return self


class Region(BaseModel):
    """A closed planar region R' used by the convexity and capture certificates."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    shape: RegionShape = RegionShape.DISK
    # rectangle
    min_corner: tuple[float, float] | None = None
    max_corner: tuple[float, float] | None = None
    # disk / annulus
    center: tuple[float, float] | None = None
    radius: float | None = None
    inner_radius: float | None = None
    boundary_samples: int = Field(360, ge=4)

    @model_validator(mode="after")
    def check_shape(self) -> Region:
        if self.shape == RegionShape.RECTANGLE:
            if self.min_corner is None or self.max_corner is None:
                raise ValueError("rectangle region needs min_corner and max_corner")
            if not (self.max_corner[0] > self.min_corner[0] and self.max_corner[1] > self.min_corner[1]):
                raise ValueError("rectangle region has non-positive area")
        else:
            if self.center is None or self.radius is None:
                raise ValueError(f"{self.shape.value} region needs center and radius")
            if not (math.isfinite(self.radius) and self.radius > 0):
                raise ValueError("region radius must be > 0")
            if self.shape == RegionShape.ANNULUS:
                if self.inner_radius is None or not (0 <= self.inner_radius < self.radius):
                    raise ValueError("annulus region needs 0 <= inner_radius < radius")
        return self

    @classmethod
    def disk(cls, center: tuple[float, float], radius: float, boundary_samples: int = 360) -> Region:
        return cls(shape=RegionShape.DISK, center=center, radius=radius, boundary_samples=boundary_samples)

    @classmethod
    def rectangle(
        cls, min_corner: tuple[float, float], max_corner: tuple[float, float], boundary_samples: int = 360
    ) -> Region:
        return cls(
            shape=RegionShape.RECTANGLE,
            min_corner=min_corner,
            max_corner=max_corner,
            boundary_samples=boundary_samples,
        )

    @classmethod
    def annulus(
        cls, center: tuple[float, float], inner_radius: float, radius: float, boundary_samples: int = 360
    ) -> Region:
        return cls(
            shape=RegionShape.ANNULUS,
            center=center,
            inner_radius=inner_radius,
            radius=radius,
            boundary_samples=boundary_samples,
        )

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """Bounding box (xmin, ymin, xmax, ymax)."""
        if self.shape == RegionShape.RECTANGLE:
            return (self.min_corner[0], self.min_corner[1], self.max_corner[0], self.max_corner[1])
        cx, cy = self.center
        r = self.radius
        return (cx - r, cy - r, cx + r, cy + r)

    @property
    def scale(self) -> float:
        xmin, ymin, xmax, ymax = self.bounds
        return max(xmax - xmin, ymax - ymin)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Membership mask for an (n, 2) array of points; the boundary counts as inside."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        tol = 1e-12 * max(self.scale, 1.0)
        if self.shape == RegionShape.RECTANGLE:
            xmin, ymin, xmax, ymax = self.bounds
            return (
                (pts[:, 0] >= xmin - tol)
                & (pts[:, 0] <= xmax + tol)
                & (pts[:, 1] >= ymin - tol)
                & (pts[:, 1] <= ymax + tol)
            )
        rho = np.hypot(pts[:, 0] - self.center[0], pts[:, 1] - self.center[1])
        inside = rho <= self.radius + tol
        if self.shape == RegionShape.ANNULUS:
            inside &= rho >= self.inner_radius - tol
        return inside

    def boundary_points(self, count: int | None = None) -> np.ndarray:
        """Evenly spaced samples of the region boundary as an (n, 2) array."""
        n = count or self.boundary_samples
        if self.shape == RegionShape.RECTANGLE:
            xmin, ymin, xmax, ymax = self.bounds
            w, h = xmax - xmin, ymax - ymin
            s = np.arange(n) * (2 * (w + h) / n)
            pts = np.empty((n, 2))
            for i, d in enumerate(s):
                if d < w:
                    pts[i] = (xmin + d, ymin)
                elif d < w + h:
                    pts[i] = (xmax, ymin + d - w)
                elif d < 2 * w + h:
                    pts[i] = (xmax - (d - w - h), ymax)
                else:
                    pts[i] = (xmin, ymax - (d - 2 * w - h))
            return pts
        cx, cy = self.center
        if self.shape == RegionShape.DISK or not self.inner_radius:
            theta = 2 * np.pi * np.arange(n) / n
            return np.column_stack([cx + self.radius * np.cos(theta), cy + self.radius * np.sin(theta)])
        n_outer = max(int(round(n * self.radius / (self.radius + self.inner_radius))), 1)
        n_inner = max(n - n_outer, 1)
        t_out = 2 * np.pi * np.arange(n_outer) / n_outer
        t_in = 2 * np.pi * np.arange(n_inner) / n_inner
        outer = np.column_stack([cx + self.radius * np.cos(t_out), cy + self.radius * np.sin(t_out)])
        inner = np.column_stack([cx + self.inner_radius * np.cos(t_in), cy + self.inner_radius * np.sin(t_in)])
        return np.vstack([outer, inner])

    def sample_grid(self, step: float) -> np.ndarray:
        """Lattice points k*step (k integer) inside the region, in row-major order.

        The lattice is anchored at the origin, so nested regions sample nested point sets.
        """
        xmin, ymin, xmax, ymax = self.bounds
        tol = 1e-9 * step
        xs = np.arange(math.ceil(xmin / step - tol), math.floor(xmax / step + tol) + 1) * step
        ys = np.arange(math.ceil(ymin / step - tol), math.floor(ymax / step + tol) + 1) * step
        if xs.size == 0 or ys.size == 0:
            return np.empty((0, 2))
        gx, gy = np.meshgrid(xs, ys)
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        return pts[self.contains(pts)]


class ContourSource(str, Enum):
    CSV = "csv"
    CIRCLE = "circle"
    LINE = "line"


class ContourSpec(BaseModel):
    """Where the initial contour comes from: a CSV file or a generator."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    source: ContourSource = ContourSource.CIRCLE
    path: str | None = None
    count: int = Field(16, ge=3)
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 1.0
    start: tuple[float, float] | None = None
    end: tuple[float, float] | None = None

    @model_validator(mode="after")
    def check_source(self) -> ContourSpec:
        if self.source == ContourSource.CSV and not self.path:
            raise ValueError("csv contour source needs a path")
        if self.source == ContourSource.CIRCLE:
            if not (math.isfinite(self.radius) and self.radius > 0):
                raise ValueError("circle radius must be > 0")
            if self.count < 4:
                raise ValueError("closed contours need at least 4 points")
        if self.source == ContourSource.LINE and (self.start is None or self.end is None):
            raise ValueError("line contour source needs start and end")
        return self


class StopSpec(BaseModel):
    """Which stopping criterion to apply, its threshold and the iteration cap."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    criterion: StopCriterion = StopCriterion.STEADY_STATE
    epsilon: float = Field(1e-6, gt=0)
    max_iter: int = Field(1000, ge=0)


CONVEXITY_CSV_COLUMNS = ["A", "argmin_x", "argmin_y", "omega1", "omega2", "condition_value", "holds", "skipped"]


class ConvexityReport(BaseModel):
    """Outcome of the region convexity certificate A(R') + w1 pi^2 + w2 pi^4 > 0."""

    A: float
    argmin: tuple[float, float]
    elastic_bound: float  # lower bound on lambda_min of the elastic Hessian for n_used segments
    condition_value: float
    holds: bool
    skipped_samples: int = 0
    n_used: int
    omega1: float = 0.0
    omega2: float = 0.0
    finite_n_value: float | None = None  # finite-N cross-check, never the verdict
    sample_count: int = 0

    @model_validator(mode="after")
    def check_verdict(self) -> ConvexityReport:
        if self.holds != (self.condition_value > 0):
            raise ValueError("holds must equal condition_value > 0")
        return self

    def to_text(self) -> str:
        """Flat key=value block."""
        lines = [
            f"A={self.A!r}",
            f"argmin_x={self.argmin[0]!r}",
            f"argmin_y={self.argmin[1]!r}",
            f"omega1={self.omega1!r}",
            f"omega2={self.omega2!r}",
            f"elastic_bound={self.elastic_bound!r}",
            f"condition_value={self.condition_value!r}",
            f"holds={'true' if self.holds else 'false'}",
            f"skipped={self.skipped_samples}",
            f"samples={self.sample_count}",
            f"N_used={self.n_used}",
            f"finite_N_value={self.finite_n_value!r}",
        ]
        return "\n".join(lines) + "\n"

    def to_csv_row(self) -> list[str]:
        return [
            repr(self.A),
            repr(self.argmin[0]),
            repr(self.argmin[1]),
            repr(self.omega1),
            repr(self.omega2),
            repr(self.condition_value),
            "true" if self.holds else "false",
            str(self.skipped_samples),
        ]


class EquilibriumClassification(BaseModel):
    """Attractor label of an equilibrium derived from its modal rates."""

    label: EquilibriumLabel
    min_beta: float
    max_beta: float
    spectral_abscissa: float

    def to_text(self) -> str:
        return (
            f"label={self.label.value}\n"
            f"stable={'true' if self.label.is_stable else 'false'}\n"
            f"min_beta={self.min_beta!r}\n"
            f"max_beta={self.max_beta!r}\n"
            f"spectral_abscissa={self.spectral_abscissa!r}\n"
        )


class CaptureReport(BaseModel):
    """Hamiltonian capture test H(Q0, P0) <= min E_p on the region boundary."""

    holds: bool
    H0: float
    T0: float
    E_p0: float
    boundary_min: float
    margin: float
    exit_point_index: int  # contour index of the point moved to the boundary
    exit_location: tuple[float, float]
    estimate: str = "single-point-exit"
    convexity_held: bool | None = None  # verdict of a supplied convexity report, if any

    @model_validator(mode="after")
    def check_verdict(self) -> CaptureReport:
        if self.holds != (self.H0 <= self.boundary_min):
            raise ValueError("holds must equal H0 <= boundary_min")
        return self

    def to_text(self) -> str:
        convexity = "unknown" if self.convexity_held is None else ("true" if self.convexity_held else "false")
        return (
            f"holds={'true' if self.holds else 'false'}\n"
            f"H0={self.H0!r}\n"
            f"T0={self.T0!r}\n"
            f"E_p0={self.E_p0!r}\n"
            f"boundary_min={self.boundary_min!r}\n"
            f"boundary_min_estimate={self.estimate}\n"
            f"margin={self.margin!r}\n"
            f"exit_point_index={self.exit_point_index}\n"
            f"exit_x={self.exit_location[0]!r}\n"
            f"exit_y={self.exit_location[1]!r}\n"
            f"convexity_held={convexity}\n"
        )
