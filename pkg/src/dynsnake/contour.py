"""Discrete contour state, stiffness/mass matrices and potential energy.

Free coordinates are stacked as ``[x_free..., y_free...]``. Open contours keep
their first and last points fixed; closed contours have every point free.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import TextIO

import numpy as np
from scipy import linalg

from dynsnake.errors import (
    DefinitenessError,
    DimensionMismatchError,
    InvalidSpecError,
    SizeError,
)
from dynsnake.models import SnakeParams, Topology
from dynsnake.potential import ScalarField, evaluate

logger = logging.getLogger(__name__)

MIN_OPEN_POINTS = 3
MIN_CLOSED_POINTS = 4
CSV_COLUMNS = ["index", "x", "y", "fixed"]


def _min_points(topology: Topology) -> int:
    return MIN_OPEN_POINTS if topology == Topology.OPEN else MIN_CLOSED_POINTS


@dataclass(frozen=True, eq=False)
class Contour:
    """Ordered control points with open (fixed ends) or closed topology."""

    points: np.ndarray
    topology: Topology = Topology.OPEN

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise InvalidSpecError(f"contour points must have shape (n, 2), got {pts.shape}")
        topology = Topology.from_value(self.topology)
        if len(pts) < _min_points(topology):
            raise SizeError(f"{topology.value} contour needs at least {_min_points(topology)} points, got {len(pts)}")
        if not np.all(np.isfinite(pts)):
            raise InvalidSpecError("contour coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "topology", topology)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def n_segments(self) -> int:
        """N: segment count, len-1 for open contours and len for closed ones."""
        return len(self.points) - 1 if self.topology == Topology.OPEN else len(self.points)

    @property
    def free_slice(self) -> slice:
        return slice(1, -1) if self.topology == Topology.OPEN else slice(None)

    @property
    def free_offset(self) -> int:
        return 1 if self.topology == Topology.OPEN else 0

    @property
    def free_points(self) -> np.ndarray:
        return self.points[self.free_slice]

    @property
    def n_free(self) -> int:
        return len(self.free_points)

    @property
    def fixed_mask(self) -> np.ndarray:
        mask = np.zeros(len(self.points), dtype=bool)
        if self.topology == Topology.OPEN:
            mask[0] = mask[-1] = True
        return mask

    def free_vector(self) -> np.ndarray:
        fp = self.free_points
        return np.concatenate([fp[:, 0], fp[:, 1]])

    def with_free(self, d: np.ndarray) -> Contour:
        """Copy of this contour with the free coordinates replaced by the stacked vector d."""
        d = np.asarray(d, dtype=float)
        n = self.n_free
        if d.shape != (2 * n,):
            raise DimensionMismatchError(f"free vector must have length {2 * n}, got {d.shape}")
        pts = np.array(self.points)
        pts[self.free_slice, 0] = d[:n]
        pts[self.free_slice, 1] = d[n:]
        return Contour(pts, self.topology)

    def length(self) -> float:
        pts = self.points
        if self.topology == Topology.CLOSED:
            pts = np.vstack([pts, pts[:1]])
        return float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))


@dataclass(frozen=True, eq=False)
class StiffnessSet:
    """Matrices for one contour size and topology.

    B1, B2 act on one coordinate of the free points; A1, A2, M0 and K act on the
    stacked free vector. D1/D2 are the first/second difference operators over
    all points and give the boundary coupling of open contours.
    """

    n_points: int
    topology: Topology
    omega1: float
    omega2: float
    B1: np.ndarray
    B2: np.ndarray
    A1: np.ndarray
    A2: np.ndarray
    M0: np.ndarray
    K: np.ndarray
    D1: np.ndarray
    D2: np.ndarray

    @property
    def n_segments(self) -> int:
        return self.n_points - 1 if self.topology == Topology.OPEN else self.n_points

    @property
    def n_free(self) -> int:
        return self.B1.shape[0]

    @property
    def w1(self) -> float:
        return self.omega1 * self.n_segments

    @property
    def w2(self) -> float:
        return self.omega2 * self.n_segments**3

    @property
    def point_stiffness(self) -> np.ndarray:
        """Per-coordinate stiffness over all points, w1 D1'D1 + w2 D2'D2."""
        return self.w1 * (self.D1.T @ self.D1) + self.w2 * (self.D2.T @ self.D2)


def _difference_operators(n_points: int, topology: Topology) -> tuple[np.ndarray, np.ndarray]:
    eye = np.eye(n_points)
    if topology == Topology.OPEN:
        return np.diff(eye, n=1, axis=0), np.diff(eye, n=2, axis=0)
    forward = np.roll(eye, 1, axis=1)
    backward = np.roll(eye, -1, axis=1)
    return forward - eye, forward - 2 * eye + backward


def build_matrices(
    n_points: int, topology: Topology | str, params: SnakeParams, mass: np.ndarray | None = None
) -> StiffnessSet:
    """Assemble B1, B2 = B1 @ B1, A1, A2, M0 and K = w1 N A1 + w2 N^3 A2."""
    topology = Topology.from_value(topology)
    if n_points < _min_points(topology):
        raise SizeError(f"{topology.value} contour needs at least {_min_points(topology)} points, got {n_points}")
    n_seg = n_points - 1 if topology == Topology.OPEN else n_points
    n_free = n_points - 2 if topology == Topology.OPEN else n_points

    first = np.zeros(n_free)
    first[0] = 2.0
    if n_free > 1:
        first[1] = -1.0
    if topology == Topology.OPEN:
        B1 = linalg.toeplitz(first)
    else:
        first[-1] = -1.0
        B1 = linalg.circulant(first)
    B2 = B1 @ B1
    A1 = linalg.block_diag(B1, B1)
    A2 = linalg.block_diag(B2, B2)
    K = params.omega1 * n_seg * A1 + params.omega2 * n_seg**3 * A2

    if mass is None:
        M0 = np.eye(2 * n_free) / n_seg
    else:
        M0 = np.array(mass, dtype=float)
        if M0.shape != (2 * n_free, 2 * n_free):
            raise DimensionMismatchError(f"mass matrix must be {2 * n_free}x{2 * n_free}, got {M0.shape}")
        if not np.allclose(M0, M0.T, rtol=0, atol=1e-12 * max(1.0, float(np.abs(M0).max()))):
            raise DefinitenessError("mass matrix is not symmetric")
        try:
            linalg.cholesky(M0, lower=True)
        except linalg.LinAlgError as exc:
            raise DefinitenessError("mass matrix is not positive definite") from exc

    D1, D2 = _difference_operators(n_points, topology)
    for m in (B1, B2, A1, A2, M0, K, D1, D2):
        m.setflags(write=False)
    logger.debug("built %s matrices for N=%d (free=%d)", topology.value, n_seg, n_free)
    return StiffnessSet(
        n_points=n_points,
        topology=topology,
        omega1=params.omega1,
        omega2=params.omega2,
        B1=B1,
        B2=B2,
        A1=A1,
        A2=A2,
        M0=M0,
        K=K,
        D1=D1,
        D2=D2,
    )


def _check(contour: Contour, stiffness: StiffnessSet) -> None:
    if len(contour) != stiffness.n_points or contour.topology != stiffness.topology:
        raise DimensionMismatchError(
            f"contour ({len(contour)} points, {contour.topology.value}) does not match "
            f"matrices ({stiffness.n_points} points, {stiffness.topology.value})"
        )


def _stack(per_point: np.ndarray) -> np.ndarray:
    return np.concatenate([per_point[:, 0], per_point[:, 1]])


def elastic_energy(contour: Contour, stiffness: StiffnessSet) -> float:
    """w1 N sum |q_{i+1} - q_i|^2 + w2 N^3 sum |q_{i+1} - 2 q_i + q_{i-1}|^2."""
    _check(contour, stiffness)
    q = contour.points
    first = stiffness.D1 @ q
    second = stiffness.D2 @ q
    return float(stiffness.w1 * np.sum(first * first) + stiffness.w2 * np.sum(second * second))


def _field_sample(contour: Contour, field: ScalarField, derivatives: bool):
    return evaluate(field, contour.free_points, derivatives=derivatives, index_offset=contour.free_offset)


def field_energy(contour: Contour, field: ScalarField) -> float:
    """(1/N) times the sum of P over the free points."""
    s = _field_sample(contour, field, derivatives=False)
    return float(np.sum(s.value) / contour.n_segments)


def total_energy(contour: Contour, field: ScalarField, stiffness: StiffnessSet) -> float:
    return elastic_energy(contour, stiffness) + field_energy(contour, field)


def elastic_gradient(contour: Contour, stiffness: StiffnessSet) -> np.ndarray:
    """2 K d - b on the stacked free vector."""
    _check(contour, stiffness)
    g = 2.0 * stiffness.point_stiffness[contour.free_slice] @ contour.points
    return _stack(g)


def boundary_vector(contour: Contour, stiffness: StiffnessSet) -> np.ndarray:
    """b such that the elastic gradient equals 2 K d - b; zero for closed contours."""
    _check(contour, stiffness)
    if contour.topology == Topology.CLOSED:
        return np.zeros(2 * contour.n_free)
    fixed = stiffness.point_stiffness[contour.free_slice][:, contour.fixed_mask]
    return _stack(-2.0 * fixed @ contour.points[contour.fixed_mask])


def external_force(contour: Contour, field: ScalarField) -> np.ndarray:
    """F = -(1/N) grad P at every free point, stacked."""
    s = _field_sample(contour, field, derivatives=True)
    return -_stack(s.gradient) / contour.n_segments


def energy_gradient(contour: Contour, field: ScalarField, stiffness: StiffnessSet) -> np.ndarray:
    return elastic_gradient(contour, stiffness) - external_force(contour, field)


def hessian_Ep(contour: Contour, field: ScalarField, stiffness: StiffnessSet) -> np.ndarray:
    """2K plus the per-point field blocks (1/N)[[Pxx, Pxy], [Pxy, Pyy]] in stacked layout."""
    _check(contour, stiffness)
    s = _field_sample(contour, field, derivatives=True)
    n = contour.n_free
    scale = 1.0 / contour.n_segments
    H = 2.0 * np.array(stiffness.K)
    idx = np.arange(n)
    H[idx, idx] += scale * s.hessian[:, 0, 0]
    H[n + idx, n + idx] += scale * s.hessian[:, 1, 1]
    H[idx, n + idx] += scale * s.hessian[:, 0, 1]
    H[n + idx, idx] += scale * s.hessian[:, 0, 1]
    return H


def circle(center: tuple[float, float], radius: float, count: int) -> Contour:
    """Closed contour of ``count`` points evenly spaced on a circle."""
    if not (math.isfinite(radius) and radius > 0):
        raise InvalidSpecError(f"circle radius must be > 0, got {radius}")
    theta = 2 * np.pi * np.arange(count) / count
    pts = np.column_stack([center[0] + radius * np.cos(theta), center[1] + radius * np.sin(theta)])
    return Contour(pts, Topology.CLOSED)


def line(start: tuple[float, float], end: tuple[float, float], count: int) -> Contour:
    """Open contour of ``count`` equally spaced points; the end points are fixed."""
    t = np.linspace(0.0, 1.0, count)[:, None]
    pts = (1 - t) * np.asarray(start, dtype=float) + t * np.asarray(end, dtype=float)
    return Contour(pts, Topology.OPEN)


def write_contour_csv(contour: Contour, dest: str | Path | TextIO) -> None:
    """Write ``index,x,y,fixed`` rows; floats use repr so reloads are bit-identical."""
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8", newline="") as f:
            write_contour_csv(contour, f)
        return
    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for i, ((x, y), fixed) in enumerate(zip(contour.points, contour.fixed_mask, strict=True)):
        writer.writerow([i, repr(float(x)), repr(float(y)), int(fixed)])


def read_contour_csv(source: str | Path | TextIO) -> Contour:
    """Read a contour CSV; all-free rows give a closed contour, fixed end rows an open one."""
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8", newline="") as f:
            return read_contour_csv(f)
    reader = csv.DictReader(source)
    if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != CSV_COLUMNS:
        raise InvalidSpecError(f"contour CSV header must be {','.join(CSV_COLUMNS)}, got {reader.fieldnames}")
    rows: list[tuple[int, float, float, bool]] = []
    for line_no, row in enumerate(reader, start=2):
        try:
            fixed = row["fixed"].strip()
            if fixed not in ("0", "1"):
                raise ValueError(f"fixed must be 0 or 1, got {fixed!r}")
            rows.append((int(row["index"]), float(row["x"]), float(row["y"]), fixed == "1"))
        except (TypeError, ValueError) as exc:
            raise InvalidSpecError(f"contour CSV line {line_no}: {exc}") from exc
    rows.sort(key=lambda r: r[0])
    if [r[0] for r in rows] != list(range(len(rows))):
        raise InvalidSpecError("contour CSV indices must be 0..n-1 without gaps")
    fixed_flags = [r[3] for r in rows]
    if not any(fixed_flags):
        topology = Topology.CLOSED
    elif len(rows) >= 2 and fixed_flags[0] and fixed_flags[-1] and not any(fixed_flags[1:-1]):
        topology = Topology.OPEN
    else:
        raise InvalidSpecError("only the first and last points of an open contour may be fixed")
    return Contour(np.array([[r[1], r[2]] for r in rows]), topology)

