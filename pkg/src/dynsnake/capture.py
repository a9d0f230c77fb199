"""Capture-region test: enough dissipation keeps the snake inside a convex basin.

If the initial energy H(Q0, P0) does not exceed the smallest potential energy
reachable on the region boundary, a damped trajectory can never cross it.
"""

from __future__ import annotations

import logging
from typing import NamedTuple

import numpy as np

from dynsnake.contour import Contour, StiffnessSet, elastic_energy, field_energy
from dynsnake.dynamics import Trace, TraceRecord, evolve
from dynsnake.errors import CaptureRegionError, DimensionMismatchError, EvolutionError
from dynsnake.models import CaptureReport, ConvexityReport, Region, SnakeParams, StopSpec
from dynsnake.potential import ScalarField, evaluate
from dynsnake.spectral import hamiltonian

logger = logging.getLogger(__name__)

VERIFY_EPSILON = 1e-10


class CaptureVerification(NamedTuple):
    never_exited: bool
    trace: Trace
    exit_iteration: int | None
    contour: Contour
    stop_reason: str


def _require_in_region(region: Region, contour: Contour) -> None:
    inside = region.contains(contour.free_points)
    if not np.all(inside):
        i = contour.free_offset + int(np.argmin(inside))
        x, y = contour.points[i]
        raise CaptureRegionError(f"initial point {i} at ({x:.6g}, {y:.6g}) is outside the capture region")


def boundary_min_single_point_exit(
    field: ScalarField, stiffness: StiffnessSet, region: Region, contour0: Contour
) -> tuple[float, int, tuple[float, float]]:
    """Smallest E_p over configurations that move one free point of contour0 onto a boundary sample.

    Returns (energy, contour index of the moved point, boundary location).
    """
    boundary = region.boundary_points()
    p_boundary = evaluate(field, boundary, derivatives=False).value
    q = contour0.points
    free = np.flatnonzero(~contour0.fixed_mask)
    p_free = evaluate(field, q[free], derivatives=False, index_offset=contour0.free_offset).value
    lap = stiffness.point_stiffness
    lq = lap @ q  # (n_points, 2)
    e_e0 = elastic_energy(contour0, stiffness)
    e_c0 = field_energy(contour0, field)
    n = contour0.n_segments

    # moving q_i by delta changes w1|D1 q|^2 + w2|D2 q|^2 by 2 delta.(L q)_i + L_ii |delta|^2
    delta = boundary[None, :, :] - q[free][:, None, :]  # (n_free, m, 2)
    d_elastic = 2.0 * np.einsum("imk,ik->im", delta, lq[free]) + lap[free, free][:, None] * np.sum(delta**2, axis=2)
    d_field = (p_boundary[None, :] - p_free[:, None]) / n
    energies = e_e0 + e_c0 + d_elastic + d_field
    i, b = np.unravel_index(int(np.argmin(energies)), energies.shape)
    return float(energies[i, b]), int(free[i]), (float(boundary[b, 0]), float(boundary[b, 1]))


def capture_certificate(
    field: ScalarField,
    stiffness: StiffnessSet,
    params: SnakeParams,
    region: Region,
    contour0: Contour,
    velocity0: np.ndarray | None = None,
    convexity: ConvexityReport | None = None,
) -> CaptureReport:
    """Compare H(Q0, mu M0 V0) with the single-point-exit estimate of min E_p on the boundary."""
    _require_in_region(region, contour0)
    v0 = np.zeros(2 * contour0.n_free) if velocity0 is None else np.asarray(velocity0, dtype=float)
    if v0.shape != (2 * contour0.n_free,):
        raise DimensionMismatchError(f"velocity0 must have length {2 * contour0.n_free}, got {v0.shape}")
    h0 = hamiltonian(contour0, v0, field, stiffness, params)
    boundary_min, index, location = boundary_min_single_point_exit(field, stiffness, region, contour0)
    if convexity is not None and not convexity.holds:
        logger.warning("capture test on a region whose convexity certificate failed")
    report = CaptureReport(
        holds=h0.H <= boundary_min,
        H0=h0.H,
        T0=h0.T,
        E_p0=h0.E_p,
        boundary_min=boundary_min,
        margin=boundary_min - h0.H,
        exit_point_index=index,
        exit_location=location,
        convexity_held=None if convexity is None else convexity.holds,
    )
    logger.info(
        "capture certificate %s: H0=%.6g boundary_min=%.6g", "holds" if report.holds else "fails", h0.H, boundary_min
    )
    return report


def verify_capture(
    field: ScalarField,
    stiffness: StiffnessSet,
    params: SnakeParams,
    region: Region,
    contour0: Contour,
    velocity0: np.ndarray | None = None,
    max_iter: int = 1000,
    stop: StopSpec | None = None,
) -> CaptureVerification:
    """Evolve from (Q0, V0) and report whether every iterate kept its free points in the region.

    The run halts at the first exit; leaving the field domain counts as an exit.
    """
    _require_in_region(region, contour0)
    exits: list[int] = []

    def watch(record: TraceRecord, contour: Contour) -> bool:
        if np.all(region.contains(contour.free_points)):
            return True
        exits.append(record.iteration)
        return False

    stop = stop or StopSpec(epsilon=VERIFY_EPSILON, max_iter=max_iter)
    try:
        result = evolve(
            contour0, velocity0, field, params, stop=stop, max_iter=max_iter, observer=watch, stiffness=stiffness
        )
    except EvolutionError as exc:
        logger.info("capture verification: evolution error at iteration %d counts as exit", exc.iteration)
        trace = exc.trace if exc.trace is not None else Trace()
        last = contour0 if len(trace) == 0 else contour0.with_free(trace.last.q)
        return CaptureVerification(False, trace, exc.iteration, last, "error")
    never_exited = not exits
    logger.info(
        "capture verification: %s after %d iterations",
        "stayed inside" if never_exited else f"exited at iteration {exits[0]}",
        len(result.trace) - 1,
    )
    return CaptureVerification(
        never_exited, result.trace, exits[0] if exits else None, result.contour, result.stop_reason
    )
