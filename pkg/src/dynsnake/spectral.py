"""Equilibrium analysis and Hamiltonian quantities.

Modes solve the symmetric-definite problem ``H phi = beta M0 phi``; each mode
contributes the pair of rates that solve ``mu s^2 + gamma s + beta = 0``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, TextIO

import numpy as np
from scipy import linalg

from dynsnake.contour import Contour, StiffnessSet, energy_gradient, total_energy
from dynsnake.errors import DefinitenessError, DimensionMismatchError, InvalidSpecError
from dynsnake.models import EquilibriumClassification, EquilibriumLabel, SnakeParams
from dynsnake.potential import ScalarField

logger = logging.getLogger(__name__)

NON_HYPERBOLIC_TOL = 1e-9
MODE_CSV_COLUMNS = ["beta", "delta", "re_sigma_plus", "im_sigma_plus", "re_sigma_minus", "im_sigma_minus"]

OVER_DAMPED = "over-damped"
CRITICALLY_DAMPED = "critically-damped"
UNDER_DAMPED = "under-damped"
UNSTABLE_MODE = "unstable"


@dataclass(frozen=True, eq=False)
class ModalSpectrum:
    """Generalized eigenpairs and, once mu/gamma are known, the modal rates."""

    betas: np.ndarray
    modes: np.ndarray
    sigmas: np.ndarray | None = None  # (n, 2) complex: sigma+, sigma-
    deltas: np.ndarray | None = None
    mu: float | None = None
    gamma: float | None = None

    def __len__(self) -> int:
        return len(self.betas)

    def to_csv(self, dest: str | Path | TextIO) -> None:
        if self.sigmas is None or self.deltas is None:
            raise InvalidSpecError("spectrum has no modal rates; use modal_spectrum")
        if isinstance(dest, (str, Path)):
            with open(dest, "w", encoding="utf-8", newline="") as f:
                self.to_csv(f)
            return
        writer = csv.writer(dest, lineterminator="\n")
        writer.writerow(MODE_CSV_COLUMNS)
        for beta, delta, (sp, sm) in zip(self.betas, self.deltas, self.sigmas, strict=True):
            writer.writerow([repr(float(v)) for v in (beta, delta, sp.real, sp.imag, sm.real, sm.imag)])

    def summary(self) -> str:
        lines = [
            f"modes={len(self.betas)}",
            f"min_beta={float(self.betas[0])!r}",
            f"max_beta={float(self.betas[-1])!r}",
        ]
        if self.mu is not None:
            lines.append(f"mu={self.mu!r}")
        if self.gamma is not None:
            lines.append(f"gamma={self.gamma!r}")
        if self.sigmas is not None:
            lines.append(f"spectral_abscissa={float(np.max(self.sigmas.real))!r}")
        return "\n".join(lines) + "\n"


class HamiltonianValue(NamedTuple):
    H: float
    T: float
    E_p: float
    P: np.ndarray


def _check_square(name: str, m: np.ndarray, size: int | None = None) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatchError(f"{name} must be square, got shape {m.shape}")
    if size is not None and m.shape[0] != size:
        raise DimensionMismatchError(f"{name} must be {size}x{size}, got {m.shape}")
    return m


def _cholesky(m0: np.ndarray) -> np.ndarray:
    try:
        return linalg.cholesky(m0, lower=True)
    except linalg.LinAlgError as exc:
        raise DefinitenessError("mass matrix is not positive definite") from exc


def kinetic_energy(qdot: np.ndarray, m0: np.ndarray, mu: float) -> float:
    """(mu/2) qdot' M0 qdot."""
    qdot = np.asarray(qdot, dtype=float)
    return float(0.5 * mu * qdot @ (np.asarray(m0) @ qdot))


def dissipation_rate(qdot: np.ndarray, m0: np.ndarray, gamma: float) -> float:
    """gamma qdot' M0 qdot, the rate at which viscous damping removes energy."""
    if gamma < 0:
        raise InvalidSpecError(f"gamma must be >= 0, got {gamma}")
    qdot = np.asarray(qdot, dtype=float)
    return float(gamma * qdot @ (np.asarray(m0) @ qdot))


def equilibrium_residual(contour: Contour, field: ScalarField, stiffness: StiffnessSet) -> float:
    """Max-norm of the potential-energy gradient."""
    return float(np.max(np.abs(energy_gradient(contour, field, stiffness))))


def generalized_modes(hessian: np.ndarray, m0: np.ndarray) -> ModalSpectrum:
    """Solve hessian phi = beta M0 phi by Cholesky congruence.

    Betas come back ascending and the modes M0-orthonormal.
    """
    m0 = _check_square("M0", m0)
    h = _check_square("hessian", hessian, m0.shape[0])
    if not np.allclose(h, h.T, rtol=1e-10, atol=1e-12 * max(1.0, float(np.abs(h).max()))):
        raise InvalidSpecError("hessian is not symmetric")
    lower = _cholesky(m0)
    tmp = linalg.solve_triangular(lower, h, lower=True)
    reduced = linalg.solve_triangular(lower, tmp.T, lower=True)
    reduced = 0.5 * (reduced + reduced.T)
    betas, y = linalg.eigh(reduced)
    modes = linalg.solve_triangular(lower.T, y, lower=False)
    return ModalSpectrum(betas=betas, modes=modes)


def modal_sigmas(betas, mu: float, gamma: float) -> list[tuple[complex, complex, float]]:
    """Roots (sigma+, sigma-) of mu s^2 + gamma s + beta = 0 and the discriminant, per mode.

    Real roots use the product form so the small root keeps full precision.
    """
    if not mu > 0:
        raise InvalidSpecError(f"mu must be > 0, got {mu}")
    if gamma < 0:
        raise InvalidSpecError(f"gamma must be >= 0, got {gamma}")
    out: list[tuple[complex, complex, float]] = []
    for beta in np.atleast_1d(np.asarray(betas, dtype=float)):
        delta = gamma * gamma - 4.0 * mu * beta
        if delta >= 0:
            root = math.sqrt(delta)
            big = (-gamma - root) / (2.0 * mu)
            small = (beta / mu) / big if big != 0 else 0.0
            out.append((complex(small), complex(big), float(delta)))
        else:
            re = -gamma / (2.0 * mu)
            im = math.sqrt(-delta) / (2.0 * mu)
            out.append((complex(re, im), complex(re, -im), float(delta)))
    return out


def modal_spectrum(hessian: np.ndarray, m0: np.ndarray, mu: float, gamma: float) -> ModalSpectrum:
    base = generalized_modes(hessian, m0)
    rates = modal_sigmas(base.betas, mu, gamma)
    sigmas = np.array([[sp, sm] for sp, sm, _ in rates], dtype=complex).reshape(-1, 2)
    deltas = np.array([d for _, _, d in rates], dtype=float)
    return ModalSpectrum(base.betas, base.modes, sigmas, deltas, mu, gamma)


def classify_equilibrium(spectrum: ModalSpectrum, tolerance: float = NON_HYPERBOLIC_TOL) -> EquilibriumClassification:
    """Label an equilibrium from the real parts of its modal rates.

    A rate with |Re| below ``tolerance * (1 + |sigma|)`` counts as zero.
    """
    if spectrum.sigmas is None or spectrum.deltas is None:
        raise InvalidSpecError("classification needs modal rates; use modal_spectrum")
    sig = spectrum.sigmas.ravel()
    threshold = tolerance * (1.0 + np.abs(sig))
    if np.any(sig.real > threshold):
        label = EquilibriumLabel.SADDLE_UNSTABLE
    elif np.any(np.abs(sig.real) <= threshold):
        label = EquilibriumLabel.NON_HYPERBOLIC
    elif np.all(spectrum.deltas >= 0):
        label = EquilibriumLabel.STABLE_NODE
    elif np.all(spectrum.deltas < 0):
        label = EquilibriumLabel.STABLE_FOCUS
    else:
        label = EquilibriumLabel.MIXED_STABLE
    if np.any(spectrum.betas <= 0):
        logger.warning("potential-energy Hessian is not positive definite (min beta %.6g)", spectrum.betas[0])
    return EquilibriumClassification(
        label=label,
        min_beta=float(spectrum.betas[0]),
        max_beta=float(spectrum.betas[-1]),
        spectral_abscissa=float(np.max(sig.real)),
    )


def jacobian_DX(hessian: np.ndarray, m0: np.ndarray, mu: float, gamma: float) -> np.ndarray:
    """First-order system matrix [[0, I], [-(1/mu) M0^-1 H, -(gamma/mu) I]]."""
    m0 = _check_square("M0", m0)
    h = _check_square("hessian", hessian, m0.shape[0])
    if not mu > 0:
        raise InvalidSpecError(f"mu must be > 0, got {mu}")
    try:
        m_inv_h = linalg.solve(m0, h, assume_a="pos")
    except linalg.LinAlgError as exc:
        raise DefinitenessError("mass matrix is singular") from exc
    n = h.shape[0]
    eye = np.eye(n)
    return np.block([[np.zeros((n, n)), eye], [-m_inv_h / mu, -(gamma / mu) * eye]])


def momenta(qdot: np.ndarray, m0: np.ndarray, mu: float) -> np.ndarray:
    return mu * (np.asarray(m0) @ np.asarray(qdot, dtype=float))


def hamiltonian(
    contour: Contour, qdot: np.ndarray, field: ScalarField, stiffness: StiffnessSet, params: SnakeParams
) -> HamiltonianValue:
    """H = T + E_p at the contour's free coordinates with velocities qdot."""
    qdot = np.asarray(qdot, dtype=float)
    if qdot.shape != (2 * contour.n_free,):
        raise DimensionMismatchError(f"velocity must have length {2 * contour.n_free}, got {qdot.shape}")
    p = momenta(qdot, stiffness.M0, params.mu)
    kinetic = kinetic_energy(qdot, stiffness.M0, params.mu)
    e_p = total_energy(contour, field, stiffness)
    return HamiltonianValue(kinetic + e_p, kinetic, e_p, p)


def kinetic_from_momenta(p: np.ndarray, m0: np.ndarray, mu: float) -> float:
    """(1/(2 mu)) P' M0^-1 P."""
    factor = linalg.cho_factor(np.asarray(m0), lower=True)
    return float(np.asarray(p) @ linalg.cho_solve(factor, p) / (2.0 * mu))


def grad_H_at(
    contour: Contour, p: np.ndarray, field: ScalarField, stiffness: StiffnessSet, params: SnakeParams
) -> tuple[np.ndarray, np.ndarray]:
    """(dH/dQ, dH/dP) = (grad E_p, (1/mu) M0^-1 P)."""
    dq = energy_gradient(contour, field, stiffness)
    lower = _cholesky(np.asarray(stiffness.M0))
    dp = linalg.cho_solve((lower, True), np.asarray(p, dtype=float)) / params.mu
    return dq, dp


def hamiltonian_hessian(hessian: np.ndarray, m0: np.ndarray, mu: float) -> np.ndarray:
    """blockdiag(D2 E_p, (1/mu) M0^-1)."""
    m0 = _check_square("M0", m0)
    h = _check_square("hessian", hessian, m0.shape[0])
    lower = _cholesky(m0)
    m_inv = linalg.cho_solve((lower, True), np.eye(m0.shape[0]))
    return linalg.block_diag(h, 0.5 * (m_inv + m_inv.T) / mu)


def is_positive_definite(m: np.ndarray) -> bool:
    try:
        linalg.cholesky(np.asarray(m, dtype=float), lower=True)
    except linalg.LinAlgError:
        return False
    return True


def critical_damping(betas, mu: float) -> np.ndarray:
    """Per-mode critical damping 2 sqrt(mu beta); NaN where beta <= 0."""
    b = np.asarray(betas, dtype=float)
    out = np.full(b.shape, np.nan)
    pos = b > 0
    out[pos] = 2.0 * np.sqrt(mu * b[pos])
    return out


def damping_regimes(spectrum: ModalSpectrum, rtol: float = 1e-9) -> list[str]:
    """Damping regime of every mode; a single gamma critically damps at most one beta."""
    if spectrum.deltas is None or spectrum.gamma is None or spectrum.mu is None:
        raise InvalidSpecError("damping regimes need modal rates; use modal_spectrum")
    regimes = []
    for beta, delta in zip(spectrum.betas, spectrum.deltas, strict=True):
        scale = spectrum.gamma**2 + 4.0 * spectrum.mu * abs(beta)
        if beta < 0:
            regimes.append(UNSTABLE_MODE)
        elif abs(delta) <= rtol * scale:
            regimes.append(CRITICALLY_DAMPED)
        elif delta > 0:
            regimes.append(OVER_DAMPED)
        else:
            regimes.append(UNDER_DAMPED)
    return regimes
