"""Eavesdropper attack models and the probe measurement.

Two channel attacks are modeled, both acting on the exposed arm (arm B) and
a private probe register: a general incoherent interaction that may scatter
the mode occupation, and a photon-number-preserving interaction that only
rotates the probe conditioned on whether the arm is occupied. After the
public detection announcements the eavesdropper measures her probe with the
optimal unambiguous-discrimination POVM.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple, Union

import numpy as np

from .fockstate import (
    ARM_B,
    AMPLITUDE_PRUNE_TOL,
    BasisKet,
    ParameterError,
    SystemState,
)

PARAM_TOL = 1e-12
POVM_TOL = 1e-10


class ReturnLeg(Enum):
    """What the eavesdropper does while the light travels back."""

    NONE = "none"
    UNATTACK = "unattack"
    GENERAL = "general"


class PovmOutcome(Enum):
    CONCLUSIVE_N = "N"
    CONCLUSIVE_Y = "Y"
    INCONCLUSIVE = "inconclusive"


def _rotation(theta: float, dim: int) -> np.ndarray:
    """Unitary rotating e0 toward e1 by ``theta``, identity elsewhere."""
    u = np.eye(dim, dtype=complex)
    u[0, 0] = math.cos(theta)
    u[1, 0] = math.sin(theta)
    u[0, 1] = -math.sin(theta)
    u[1, 1] = math.cos(theta)
    return u


def canonical_probe_vectors(theta: float, dim: int) -> Tuple[np.ndarray, np.ndarray]:
    """Reference probe pair with overlap cos(theta): (e0, cos*e0 + sin*e1)."""
    if dim < 2:
        raise ParameterError("probe dimension must be >= 2")
    n_vec = np.zeros(dim, dtype=complex)
    n_vec[0] = 1.0
    y_vec = np.zeros(dim, dtype=complex)
    y_vec[0] = math.cos(theta)
    y_vec[1] = math.sin(theta)
    return n_vec, y_vec


def _check_theta(theta: float) -> None:
    if not (0.0 <= theta <= math.pi / 2 + PARAM_TOL):
        raise ParameterError(f"theta must lie in [0, pi/2], got {theta}")


@dataclass(frozen=True)
class NumberPreservingParams:
    """Probe-rotation attack conditioned on arm-B occupancy.

    The onward interaction applies ``U0`` to the probe when the arm is empty
    and ``U1`` when it carries the photon; the images of the probe's start
    vector overlap by cos(theta). ``return_leg`` selects the action on the way
    back: nothing, the exact inverse, or a further pair of probe unitaries.
    """

    theta: float
    return_leg: ReturnLeg = ReturnLeg.UNATTACK
    return_u0: Optional[np.ndarray] = None
    return_u1: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        _check_theta(self.theta)
        if self.return_leg is not ReturnLeg.GENERAL and (
            self.return_u0 is not None or self.return_u1 is not None
        ):
            raise ParameterError("return unitaries are only meaningful with the general return leg")

    def onward_unitaries(self, dim: int) -> Tuple[np.ndarray, np.ndarray]:
        return np.eye(dim, dtype=complex), _rotation(self.theta, dim)

    def return_unitaries(self, dim: int) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        if self.return_leg is ReturnLeg.NONE:
            return None
        u0, u1 = self.onward_unitaries(dim)
        if self.return_leg is ReturnLeg.UNATTACK:
            return u0.conj().T, u1.conj().T
        r0 = np.eye(dim, dtype=complex) if self.return_u0 is None else np.asarray(self.return_u0)
        r1 = np.eye(dim, dtype=complex) if self.return_u1 is None else np.asarray(self.return_u1)
        for r in (r0, r1):
            if r.shape != (dim, dim) or not np.allclose(r.conj().T @ r, np.eye(dim), atol=1e-10):
                raise ParameterError("return-leg operators must be unitaries of the probe dimension")
        return r0, r1

    def final_probe_pair(self, dim: int) -> Tuple[np.ndarray, np.ndarray]:
        """Probe vectors left on the two sift-eligible detection branches.

        First entry: the branch where the arm stayed empty the whole round
        (secret bit 1); second: the branch where the photon travelled the arm
        (secret bit 0).
        """
        u0, u1 = self.onward_unitaries(dim)
        start = np.zeros(dim, dtype=complex)
        start[0] = 1.0
        n_vec, y_vec = u0 @ start, u1 @ start
        ret = self.return_unitaries(dim)
        if ret is not None:
            n_vec, y_vec = ret[0] @ n_vec, ret[1] @ y_vec
        return n_vec, y_vec


def _unit(vec: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(vec, dtype=complex)
    if abs(np.linalg.norm(arr) - 1.0) > 1e-10:
        raise ParameterError(f"probe vector {name} must be a unit vector")
    return arr


@dataclass(frozen=True)
class GeneralIncoherentParams:
    """General incoherent interaction, possibly scattering the mode occupation.

    The empty-arm sector keeps weight ``a00`` and scatters into a one-photon
    state with weight ``a0p``; the occupied sector keeps weight ``a10`` and
    scatters with weight ``a1p``. By the conservative default the occupied
    sector scatters into the vacuum (the photon disappears); set
    ``two_photon_scatter`` to make it a two-photon state instead. Probe
    vectors default to a mutually consistent orthonormal layout.
    """

    a0p: complex = 0.0
    a1p: complex = 0.0
    a00: Optional[complex] = None
    a10: Optional[complex] = None
    eps00: Optional[np.ndarray] = None
    eps0p: Optional[np.ndarray] = None
    eps10: Optional[np.ndarray] = None
    eps1p: Optional[np.ndarray] = None
    two_photon_scatter: bool = False
    return_leg: ReturnLeg = ReturnLeg.NONE

    def __post_init__(self) -> None:
        if self.return_leg is ReturnLeg.GENERAL:
            raise ParameterError("general return leg is not defined for this attack")
        if self.two_photon_scatter and self.return_leg is ReturnLeg.UNATTACK:
            # Undoing the two-photon variant can push an occupied-arm state
            # past the photon truncation; the combination is not supported.
            raise ParameterError("two-photon scatter cannot be combined with an unattack return leg")
        for name, kept, scatter in (("a00", self.a00, self.a0p), ("a10", self.a10, self.a1p)):
            if abs(scatter) > 1.0 + PARAM_TOL:
                raise ParameterError("scatter amplitudes must have modulus <= 1")
            if kept is None:
                object.__setattr__(self, name, math.sqrt(max(0.0, 1.0 - abs(scatter) ** 2)))
        for pair in (("a00", "a0p"), ("a10", "a1p")):
            total = abs(getattr(self, pair[0])) ** 2 + abs(getattr(self, pair[1])) ** 2
            if abs(total - 1.0) > PARAM_TOL:
                raise ParameterError(f"|{pair[0]}|^2 + |{pair[1]}|^2 must be 1, got {total}")

    def probe_vectors(self, dim: int) -> Dict[str, np.ndarray]:
        if dim < 4:
            raise ParameterError("this attack needs a probe dimension of at least 4")
        basis = np.eye(dim, dtype=complex)
        return {
            "eps00": _unit(self.eps00 if self.eps00 is not None else basis[0], "eps00"),
            "eps0p": _unit(self.eps0p if self.eps0p is not None else basis[2], "eps0p"),
            "eps10": _unit(self.eps10 if self.eps10 is not None else basis[0], "eps10"),
            "eps1p": _unit(self.eps1p if self.eps1p is not None else basis[3], "eps1p"),
        }

    def final_probe_pair(self, dim: int) -> Tuple[np.ndarray, np.ndarray]:
        """Probe vectors on the two sift-eligible detection branches.

        Only defined for the number-preserving reduction (no scatter) where
        those branches stay pure under both return-leg settings.
        """
        if abs(self.a0p) > PARAM_TOL or abs(self.a1p) > PARAM_TOL:
            raise ParameterError("probe pair is only closed-form without scatter amplitudes")
        vecs = self.probe_vectors(dim)
        if self.return_leg is ReturnLeg.UNATTACK:
            start = np.zeros(dim, dtype=complex)
            start[0] = 1.0
            return start, start
        return vecs["eps00"], vecs["eps10"]


AttackModel = Union[None, GeneralIncoherentParams, NumberPreservingParams]


def _mode_occupations(params: GeneralIncoherentParams) -> Tuple[int, ...]:
    # The interaction is defined for one fixed polarization: it couples to the
    # H mode of the exposed arm (the V mode is a spectator). These are the
    # H-mode occupations it acts on.
    return (0, 1, 2) if params.two_photon_scatter else (0, 1)


def _incoherent_matrix(params: GeneralIncoherentParams, dim: int) -> np.ndarray:
    """Explicit unitary on (exposed H mode) x (probe), completed column by column."""
    vecs = params.probe_vectors(dim)
    occupations = _mode_occupations(params)
    size = len(occupations) * dim

    def slot(occ: int, probe: int) -> int:
        return occupations.index(occ) * dim + probe

    def block(occ: int) -> slice:
        start = occupations.index(occ) * dim
        return slice(start, start + dim)

    matrix = np.zeros((size, size), dtype=complex)

    # Empty mode: keep the vacuum or scatter a fresh photon into the mode.
    image = np.zeros(size, dtype=complex)
    image[block(0)] += params.a00 * vecs["eps00"]
    image[block(1)] += params.a0p * vecs["eps0p"]
    matrix[:, slot(0, 0)] = image

    # Occupied mode: keep the photon or scatter it away (or double it).
    scatter_target = 2 if params.two_photon_scatter else 0
    image = np.zeros(size, dtype=complex)
    image[block(1)] += params.a10 * vecs["eps10"]
    image[block(scatter_target)] += params.a1p * vecs["eps1p"]
    matrix[:, slot(1, 0)] = image

    specified = [slot(0, 0), slot(1, 0)]
    for i in specified:
        for j in specified:
            expected = 1.0 if i == j else 0.0
            if abs(np.vdot(matrix[:, i], matrix[:, j]) - expected) > 1e-10:
                raise ParameterError(
                    "attack amplitudes and probe vectors do not extend to a unitary"
                )

    # Deterministic orthonormal completion of the remaining columns.
    filled = list(specified)
    for column in range(size):
        if column in specified:
            continue
        for candidate in range(size):
            vec = np.zeros(size, dtype=complex)
            vec[candidate] = 1.0
            for other in filled:
                vec -= np.vdot(matrix[:, other], vec) * matrix[:, other]
            norm = np.linalg.norm(vec)
            if norm > 1e-7:
                matrix[:, column] = vec / norm
                filled.append(column)
                break
        else:  # pragma: no cover - cannot happen for orthonormal specified columns
            raise ParameterError("failed to complete the attack unitary")
    return matrix


def _apply_b_mode_matrix(
    state: SystemState, matrix: np.ndarray, occupations: Tuple[int, ...]
) -> SystemState:
    """Apply a unitary defined on (exposed H mode) x (probe) to the full state."""
    dim = state.probe_dim
    new_amps: Dict[BasisKet, complex] = {}
    for ket, amp in state.items():
        if ket.occ_b_h not in occupations:
            raise ParameterError(
                f"exposed-mode occupation {ket.occ_b_h} outside the attack's domain"
            )
        column = matrix[:, occupations.index(ket.occ_b_h) * dim + ket.probe]
        for flat, value in enumerate(column):
            if abs(value) <= AMPLITUDE_PRUNE_TOL:
                continue
            new_ket = ket._replace(occ_b_h=occupations[flat // dim], probe=flat % dim)
            new_amps[new_ket] = new_amps.get(new_ket, 0.0 + 0.0j) + amp * value
    return SystemState(new_amps, dim)


def apply_general_incoherent(state: SystemState, params: GeneralIncoherentParams) -> SystemState:
    """Onward-leg application of the general incoherent interaction."""
    matrix = _incoherent_matrix(params, state.probe_dim)
    return _apply_b_mode_matrix(state, matrix, _mode_occupations(params))


def _apply_probe_blocks(
    state: SystemState, u_empty: np.ndarray, u_occupied: np.ndarray
) -> SystemState:
    dim = state.probe_dim
    new_amps: Dict[BasisKet, complex] = {}
    for ket, amp in state.items():
        block = u_empty if ket.arm_photons(ARM_B) == 0 else u_occupied
        for target, value in enumerate(block[:, ket.probe]):
            if abs(value) <= AMPLITUDE_PRUNE_TOL:
                continue
            new_ket = ket._replace(probe=target)
            new_amps[new_ket] = new_amps.get(new_ket, 0.0 + 0.0j) + amp * value
    return SystemState(new_amps, dim)


def apply_number_preserving(state: SystemState, params: NumberPreservingParams) -> SystemState:
    """Onward-leg application of the number-preserving attack.

    Arm occupations are untouched in every branch; the probe is rotated by
    the empty-arm or occupied-arm unitary.
    """
    u0, u1 = params.onward_unitaries(state.probe_dim)
    return _apply_probe_blocks(state, u0, u1)


def apply_return_leg(
    state: SystemState, params: Union[NumberPreservingParams, GeneralIncoherentParams]
) -> SystemState:
    """Apply the configured return-leg action to a post-response state."""
    if isinstance(params, NumberPreservingParams):
        ret = params.return_unitaries(state.probe_dim)
        if ret is None:
            return state
        return _apply_probe_blocks(state, ret[0], ret[1])
    if isinstance(params, GeneralIncoherentParams):
        if params.return_leg is ReturnLeg.NONE:
            return state
        matrix = _incoherent_matrix(params, state.probe_dim)
        return _apply_b_mode_matrix(state, matrix.conj().T, _mode_occupations(params))
    raise ParameterError(f"unsupported attack parameters: {params!r}")


def attack_onward(state: SystemState, attack: AttackModel) -> SystemState:
    if attack is None:
        return state
    if isinstance(attack, NumberPreservingParams):
        return apply_number_preserving(state, attack)
    return apply_general_incoherent(state, attack)


def attack_return(state: SystemState, attack: AttackModel) -> SystemState:
    if attack is None:
        return state
    return apply_return_leg(state, attack)


class UsdPovm:
    """Three-outcome unambiguous discrimination of two pure probe states.

    Elements live on the two-dimensional span of the reference vectors (one
    dimensional when they coincide); they sum to the identity on that span.
    """

    def __init__(self, n_vec: np.ndarray, y_vec: np.ndarray):
        n_vec = _unit(n_vec, "n_vec")
        y_vec = _unit(y_vec, "y_vec")
        if n_vec.shape != y_vec.shape:
            raise ParameterError("reference vectors must share a dimension")
        overlap_mag = abs(np.vdot(n_vec, y_vec))
        overlap_mag = min(overlap_mag, 1.0)
        span = np.outer(n_vec, np.conj(n_vec))
        residual = y_vec - np.vdot(n_vec, y_vec) * n_vec
        residual_norm = np.linalg.norm(residual)
        if residual_norm > 1e-9:
            residual = residual / residual_norm
            span = span + np.outer(residual, np.conj(residual))
        scale = 1.0 / (1.0 + overlap_mag)
        self.m_conclusive_n = scale * (span - np.outer(y_vec, np.conj(y_vec)))
        self.m_conclusive_y = scale * (span - np.outer(n_vec, np.conj(n_vec)))
        self.m_inconclusive = span - self.m_conclusive_n - self.m_conclusive_y
        self.span_projector = span
        self.overlap_magnitude = overlap_mag
        for element in (self.m_conclusive_n, self.m_conclusive_y, self.m_inconclusive):
            eigenvalues = np.linalg.eigvalsh(element)
            if eigenvalues.min() < -POVM_TOL:
                raise AssertionError("POVM element must be positive semidefinite")

    def outcome_probabilities(self, probe: np.ndarray) -> Tuple[float, float, float]:
        """Born probabilities (conclusive-N, conclusive-Y, inconclusive).

        ``probe`` is a state vector or a density matrix supported on the
        reference span.
        """
        probe = np.asarray(probe, dtype=complex)
        if probe.ndim == 1:
            rho = np.outer(probe, np.conj(probe))
        else:
            rho = probe
        probs = tuple(
            float(np.trace(element @ rho).real)
            for element in (self.m_conclusive_n, self.m_conclusive_y, self.m_inconclusive)
        )
        total = sum(probs)
        if abs(total - 1.0) > 1e-8:
            raise ParameterError("probe state is not supported on the discrimination span")
        return probs


def povm_measure(probe: np.ndarray, theta: float, rng: np.random.Generator) -> PovmOutcome:
    """Sample the discrimination outcome for a probe in the canonical span."""
    _check_theta(theta)
    probe = np.asarray(probe, dtype=complex)
    dim = probe.shape[0]
    povm = UsdPovm(*canonical_probe_vectors(theta, dim))
    p_n, p_y, _ = povm.outcome_probabilities(probe)
    draw = rng.random()
    if draw < p_n:
        return PovmOutcome.CONCLUSIVE_N
    if draw < p_n + p_y:
        return PovmOutcome.CONCLUSIVE_Y
    return PovmOutcome.INCONCLUSIVE


def conclusive_probability(theta: float) -> float:
    """Chance the discrimination measurement is conclusive: 1 - cos(theta)."""
    _check_theta(theta)
    return 1.0 - math.cos(theta)


def eve_guess(outcome: PovmOutcome) -> Optional[int]:
    """Secret-bit guess implied by a probe outcome (None when inconclusive)."""
    if outcome is PovmOutcome.CONCLUSIVE_N:
        return 1
    if outcome is PovmOutcome.CONCLUSIVE_Y:
        return 0
    return None
