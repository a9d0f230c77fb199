"""Semi-implicit evolution of the dynamic snake.

Equation of motion on the free coordinates Q:

    mu M0 Q'' + gamma M0 Q' + grad E_p(Q) = 0,   grad E_p = 2K Q - b - F(Q)

discretised with central differences in time, the elastic term implicit and
the field force F lagged by one step:

    A Q(t+tau) = F(Q(t-tau)) + b + (2 mu/tau^2) M0 Q(t) - (mu/tau^2 - gamma/(2 tau)) M0 Q(t-tau)

with the constant system matrix A = beta M0 + 2K, beta = mu/tau^2 + gamma/(2 tau).
"""

from __future__ import annotations

import csv
import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, TextIO

import numpy as np
from scipy import linalg

from dynsnake.contour import (
    Contour,
    StiffnessSet,
    boundary_vector,
    build_matrices,
    elastic_energy,
    external_force,
    field_energy,
)
from dynsnake.convexity import lambda_max_B1
from dynsnake.errors import (
    DefinitenessError,
    DegenerateContourError,
    DimensionMismatchError,
    DivergenceError,
    DomainError,
    EvolutionError,
    SizeError,
)
from dynsnake.models import SnakeParams, StopCriterion, StopSpec
from dynsnake.potential import ScalarField
from dynsnake.spectral import dissipation_rate, kinetic_energy

logger = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e6

TRACE_COLUMNS = [
    "iteration",
    "t",
    "E_e",
    "E_c",
    "E_p",
    "T",
    "H",
    "dissipation",
    "delta",
    "E1",
    "dE1",
    "max_displacement",
]

STOP_CRITERION = "criterion"
STOP_MAX_ITER = "max_iter"
STOP_OBSERVER = "observer"


@dataclass(frozen=True, eq=False)
class StepperState:
    """Free coordinates at t (q_curr) and t - tau (q_prev)."""

    q_curr: np.ndarray
    q_prev: np.ndarray
    t: float = 0.0
    iteration: int = 0

    def __post_init__(self) -> None:
        if self.q_curr.shape != self.q_prev.shape:
            raise DimensionMismatchError("q_curr and q_prev must have the same length")


@dataclass(frozen=True, eq=False)
class TraceRecord:
    iteration: int
    t: float
    E_e: float
    E_c: float
    E_p: float
    T: float
    H: float
    dissipation: float
    delta: float
    E1: float
    dE1: float
    max_displacement: float
    q: np.ndarray = field(repr=False)

    def as_row(self) -> list[str]:
        row = [str(self.iteration)]
        row.extend(repr(float(getattr(self, name))) for name in TRACE_COLUMNS[1:])
        return row


@dataclass
class Trace:
    """Per-iteration evolution record; record 0 describes the initial state."""

    records: list[TraceRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i: int) -> TraceRecord:
        return self.records[i]

    def __iter__(self):
        return iter(self.records)

    @property
    def last(self) -> TraceRecord:
        return self.records[-1]

    def append(self, record: TraceRecord) -> None:
        if self.records and record.iteration <= self.records[-1].iteration:
            raise ValueError("trace iterations must increase")
        self.records.append(record)

    def column(self, name: str) -> np.ndarray:
        if name not in TRACE_COLUMNS:
            raise KeyError(name)
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def to_csv(self, dest: str | Path | TextIO) -> None:
        if isinstance(dest, (str, Path)):
            with open(dest, "w", encoding="utf-8", newline="") as f:
                self.to_csv(f)
            return
        writer = csv.writer(dest, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for record in self.records:
            writer.writerow(record.as_row())


@dataclass(frozen=True, eq=False)
class SystemMatrices:
    """Constant step matrix A = beta M0 + 2K with its cached Cholesky factor."""

    A: np.ndarray
    beta: float
    factorization: tuple[np.ndarray, bool]
    stiffness: StiffnessSet

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return linalg.cho_solve(self.factorization, rhs)


class ConditionDiagnostics(NamedTuple):
    kappa_bound: float
    lambda_max_bound: float


class EvolutionResult(NamedTuple):
    contour: Contour
    trace: Trace
    stop_reason: str


Observer = Callable[[TraceRecord, Contour], bool | None]


def assemble_system(stiffness: StiffnessSet, params: SnakeParams) -> SystemMatrices:
    """Build and factor A = beta M0 + 2K once per evolution."""
    beta = params.beta
    A = beta * np.asarray(stiffness.M0) + 2.0 * np.asarray(stiffness.K)
    try:
        factorization = linalg.cho_factor(A, lower=True)
    except linalg.LinAlgError as exc:
        raise DefinitenessError("system matrix is not positive definite") from exc
    A.setflags(write=False)
    logger.debug("assembled system matrix of size %d, beta=%.6g", A.shape[0], beta)
    return SystemMatrices(A=A, beta=beta, factorization=factorization, stiffness=stiffness)


def condition_diagnostics(system: SystemMatrices, stiffness: StiffnessSet | None = None) -> ConditionDiagnostics:
    """Upper bounds on the 2-norm condition number and the largest eigenvalue of A.

    lambda_max(2K) comes from the closed-form Toeplitz maxima; the mass matrix
    spread is exact for the scaled identity and computed densely otherwise.
    """
    stiffness = stiffness or system.stiffness
    n = stiffness.n_segments
    lmax_b1 = lambda_max_B1(n, stiffness.topology)
    lmax_k2 = 2.0 * (stiffness.w1 * lmax_b1 + stiffness.w2 * lmax_b1**2)
    m0 = np.asarray(stiffness.M0)
    diag = np.diag(m0)
    if np.array_equal(m0, np.diag(diag)) and np.all(diag == diag[0]):
        m_min = m_max = float(diag[0])
    else:
        eig = linalg.eigvalsh(m0)
        m_min, m_max = float(eig[0]), float(eig[-1])
    kappa = 1.0 + (m_max - m_min) / m_min + lmax_k2 / (system.beta * m_min)
    row_sum = float(np.max(np.sum(np.abs(system.A), axis=1)))
    return ConditionDiagnostics(kappa, row_sum)


def _require_inside(contour: Contour, field_: ScalarField) -> None:
    inside = field_.contains(contour.free_points)
    if not np.all(inside):
        index = contour.free_offset + int(np.argmin(inside))
        raise DomainError(contour.points[index], index=index)


def _divergence_limit(field_: ScalarField) -> float:
    return DIVERGENCE_FACTOR * max(field_.diagonal, 1.0)


def step(
    state: StepperState,
    system: SystemMatrices,
    contour: Contour,
    field_: ScalarField,
    params: SnakeParams,
) -> StepperState:
    """Advance one time step; ``contour`` supplies the topology and fixed end points."""
    iteration = state.iteration + 1
    m0 = system.stiffness.M0
    try:
        force = external_force(contour.with_free(state.q_prev), field_)
    except DomainError as exc:
        raise EvolutionError(
            f"iteration {iteration}: {exc}", iteration=iteration, index=exc.index
        ) from exc
    mu, tau, gamma = params.mu, params.tau, params.gamma
    rhs = (
        force
        + boundary_vector(contour, system.stiffness)
        + (2.0 * mu / tau**2) * (m0 @ state.q_curr)
        - (mu / tau**2 - gamma / (2.0 * tau)) * (m0 @ state.q_prev)
    )
    q_next = system.solve(rhs)
    if not np.all(np.isfinite(q_next)) or np.linalg.norm(q_next) > _divergence_limit(field_):
        raise DivergenceError(f"iteration {iteration}: state diverged", iteration=iteration)
    try:
        _require_inside(contour.with_free(q_next), field_)
    except DomainError as exc:
        raise EvolutionError(
            f"iteration {iteration}: point {exc.index} at {exc.point} left the field domain",
            iteration=iteration,
            index=exc.index,
        ) from exc
    return StepperState(q_curr=q_next, q_prev=state.q_curr, t=state.t + tau, iteration=iteration)


def mean_field_energy(contour: Contour, field_: ScalarField) -> float:
    """Field energy per unit contour length, E_c / sum |q_{i+1} - q_i|."""
    length = contour.length()
    if not length > 0:
        raise DegenerateContourError("contour has zero length")
    return field_energy(contour, field_) / length


def steady_state_met(trace: Trace, epsilon: float) -> bool:
    """Last displacement norm strictly below epsilon (needs two records)."""
    return len(trace) >= 2 and trace.last.delta < epsilon


def steady_support_met(trace: Trace, epsilon: float) -> bool:
    """Last change of the mean field energy strictly below epsilon (needs two records)."""
    return len(trace) >= 2 and trace.last.dE1 < epsilon


def criterion_met(trace: Trace, stop: StopSpec) -> bool:
    if stop.criterion == StopCriterion.STEADY_STATE:
        return steady_state_met(trace, stop.epsilon)
    if stop.criterion == StopCriterion.STEADY_SUPPORT:
        return steady_support_met(trace, stop.epsilon)
    return steady_state_met(trace, stop.epsilon) and steady_support_met(trace, stop.epsilon)


def _energies(contour: Contour, field_: ScalarField, stiffness: StiffnessSet) -> tuple[float, float]:
    return elastic_energy(contour, stiffness), field_energy(contour, field_)


def _record(
    iteration: int,
    t: float,
    contour: Contour,
    q_prev: np.ndarray,
    energies: tuple[float, float],
    energies_prev: tuple[float, float],
    e1_prev: float | None,
    field_: ScalarField,
    stiffness: StiffnessSet,
    params: SnakeParams,
) -> TraceRecord:
    # Energy columns are half-step means, centred like the backward-difference T.
    q = contour.free_vector()
    e_e = 0.5 * (energies[0] + energies_prev[0])
    e_c = 0.5 * (energies[1] + energies_prev[1])
    e_p = e_e + e_c
    v = (q - q_prev) / params.tau
    kinetic = kinetic_energy(v, stiffness.M0, params.mu)
    e1 = mean_field_energy(contour, field_)
    n = len(q) // 2
    disp = q - q_prev
    return TraceRecord(
        iteration=iteration,
        t=t,
        E_e=e_e,
        E_c=e_c,
        E_p=e_p,
        T=kinetic,
        H=kinetic + e_p,
        dissipation=dissipation_rate(v, stiffness.M0, params.gamma),
        delta=float(np.linalg.norm(disp)),
        E1=e1,
        dE1=0.0 if e1_prev is None else abs(e1 - e1_prev),
        max_displacement=float(np.max(np.hypot(disp[:n], disp[n:]))),
        q=q,
    )


def evolve(
    contour0: Contour,
    velocity0: np.ndarray | None,
    field_: ScalarField,
    params: SnakeParams,
    stop: StopSpec | None = None,
    max_iter: int | None = None,
    observer: Observer | None = None,
    stiffness: StiffnessSet | None = None,
) -> EvolutionResult:
    """Run the scheme from (contour0, velocity0) until the stopping rule holds.

    Q(-tau) is seeded as Q0 - tau * v0. The observer is called after every
    record; returning False halts with stop reason ``observer``. Evolution
    errors carry the partial trace.
    """
    stop = stop or StopSpec()
    limit = stop.max_iter if max_iter is None else max_iter
    if limit < 0:
        raise SizeError(f"max_iter must be >= 0, got {limit}")
    stiffness = stiffness or build_matrices(len(contour0), contour0.topology, params)
    system = assemble_system(stiffness, params)

    q0 = contour0.free_vector()
    v0 = np.zeros_like(q0) if velocity0 is None else np.asarray(velocity0, dtype=float).ravel()
    if v0.shape != q0.shape:
        raise DimensionMismatchError(f"velocity0 must have length {len(q0)}, got {v0.shape}")
    state = StepperState(q_curr=q0, q_prev=q0 - params.tau * v0)

    trace = Trace()
    try:
        prev_contour = contour0.with_free(state.q_prev)
        _require_inside(contour0, field_)
        _require_inside(prev_contour, field_)
        energies = _energies(contour0, field_, stiffness)
        record = _record(
            0,
            0.0,
            contour0,
            state.q_prev,
            energies,
            _energies(prev_contour, field_, stiffness),
            None,
            field_,
            stiffness,
            params,
        )
    except DomainError as exc:
        raise EvolutionError(f"initial state: {exc}", iteration=0, index=exc.index, trace=trace) from exc
    trace.append(record)
    logger.info(
        "evolving %d-point %s contour: mu=%g gamma=%g tau=%g max_iter=%d",
        len(contour0),
        contour0.topology.value,
        params.mu,
        params.gamma,
        params.tau,
        limit,
    )

    contour = contour0
    stop_reason = STOP_MAX_ITER
    if observer is not None and observer(record, contour) is False:
        stop_reason = STOP_OBSERVER
        limit = 0
    for _ in range(limit):
        try:
            state = step(state, system, contour0, field_, params)
        except EvolutionError as exc:
            exc.trace = trace
            logger.warning("evolution stopped: %s", exc)
            raise
        contour = contour0.with_free(state.q_curr)
        energies_prev, energies = energies, _energies(contour, field_, stiffness)
        record = _record(
            state.iteration,
            state.t,
            contour,
            state.q_prev,
            energies,
            energies_prev,
            trace.last.E1,
            field_,
            stiffness,
            params,
        )
        trace.append(record)
        logger.debug("iteration %d: delta=%.3e dE1=%.3e H=%.9g", record.iteration, record.delta, record.dE1, record.H)
        if observer is not None and observer(record, contour) is False:
            stop_reason = STOP_OBSERVER
            break
        if criterion_met(trace, stop):
            stop_reason = STOP_CRITERION
            break

    if stop_reason == STOP_MAX_ITER and limit > 0:
        logger.warning("stopping criterion %s unmet after %d iterations", stop.criterion.value, limit)
    logger.info("evolution finished after %d iterations (%s)", len(trace) - 1, stop_reason)
    return EvolutionResult(contour, trace, stop_reason)


def settling_iteration(trace: Trace, epsilon: float) -> int | None:
    """First iteration after which the displacement stays below epsilon for the rest of the trace."""
    deltas = trace.column("delta")
    above = np.nonzero(deltas[1:] >= epsilon)[0]
    if len(above) == 0:
        return 1 if len(deltas) > 1 else None
    last = int(above[-1]) + 2
    return last if last < len(deltas) else None

