"""Exact complex-amplitude engine for the two-arm interferometer.

States live on a truncated Fock space over four optical modes (horizontal and
vertical polarization in each of the two arms) tensored with a
finite-dimensional eavesdropper probe register. Amplitudes are kept in a
sparse map keyed by occupation-number kets; everything here is a pure
function over immutable values, so callers may evaluate in parallel freely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterator, NamedTuple, Optional, Tuple

import numpy as np

# Photon-number truncation of the mode space. Two photons are enough to
# represent every photon-number-non-preserving attack branch and the
# double-count events they cause.
MAX_TOTAL_PHOTONS = 2

# Amplitudes below this are pruned after every operation.
AMPLITUDE_PRUNE_TOL = 1e-14

NORM_TOL = 1e-10
PARAM_TOL = 1e-12

# Probe register size: room for two reference vectors plus two scatter targets.
DEFAULT_PROBE_DIM = 4

ARM_A = "A"
ARM_B = "B"

# Canonical single-arm occupation sectors (H count, V count), used for
# reduced density matrices of one arm.
ARM_SECTORS: Tuple[Tuple[int, int], ...] = ((0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (0, 2))


class ParameterError(ValueError):
    """Raised when an optical element or state parameter is invalid."""


class BasisKet(NamedTuple):
    """One occupation-number basis element: four mode counts plus probe index."""

    occ_a_h: int
    occ_a_v: int
    occ_b_h: int
    occ_b_v: int
    probe: int

    def arm_photons(self, arm: str) -> int:
        if arm == ARM_A:
            return self.occ_a_h + self.occ_a_v
        if arm == ARM_B:
            return self.occ_b_h + self.occ_b_v
        raise ParameterError(f"unknown arm {arm!r}")

    def total_photons(self) -> int:
        return self.occ_a_h + self.occ_a_v + self.occ_b_h + self.occ_b_v

    def with_arm_emptied(self, arm: str) -> "BasisKet":
        if arm == ARM_A:
            return self._replace(occ_a_h=0, occ_a_v=0)
        if arm == ARM_B:
            return self._replace(occ_b_h=0, occ_b_v=0)
        raise ParameterError(f"unknown arm {arm!r}")


@dataclass(frozen=True)
class Polarization:
    """Single-photon polarization amplitudes (H component, V component)."""

    alpha: complex
    beta: complex

    def __post_init__(self) -> None:
        norm = abs(self.alpha) ** 2 + abs(self.beta) ** 2
        if abs(norm - 1.0) > PARAM_TOL:
            raise ParameterError(f"polarization amplitudes not normalized: |a|^2+|b|^2 = {norm}")


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
POL_H = Polarization(1.0, 0.0)
POL_V = Polarization(0.0, 1.0)
POL_D = Polarization(_INV_SQRT2, _INV_SQRT2)
POL_A = Polarization(_INV_SQRT2, -_INV_SQRT2)


@dataclass(frozen=True)
class BeamsplitterParams:
    """Beamsplitter intensity transmittance and reflectance (must sum to 1)."""

    transmittance: float
    reflectance: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.transmittance <= 1.0 and 0.0 <= self.reflectance <= 1.0):
            raise ParameterError("transmittance and reflectance must lie in [0, 1]")
        if abs(self.transmittance + self.reflectance - 1.0) > PARAM_TOL:
            raise ParameterError(
                f"transmittance + reflectance must be 1, got {self.transmittance + self.reflectance}"
            )

    @classmethod
    def balanced(cls) -> "BeamsplitterParams":
        return cls(0.5, 0.5)

    @classmethod
    def from_transmittance(cls, transmittance: float) -> "BeamsplitterParams":
        return cls(transmittance, 1.0 - transmittance)


class SystemState:
    """Sparse amplitude map over :class:`BasisKet`, plus the probe dimension.

    Treat instances as immutable: operations return new states. The squared
    norm is 1 for every state handed across a public boundary; conditional
    branches inside an operation may be sub-normalized, where the deficit is
    the probability of the discarded branch.
    """

    __slots__ = ("_amps", "probe_dim")

    def __init__(self, amplitudes: Dict[BasisKet, complex], probe_dim: int):
        if probe_dim < 1:
            raise ParameterError("probe_dim must be >= 1")
        amps: Dict[BasisKet, complex] = {}
        for ket, raw in amplitudes.items():
            amp = complex(raw)
            if abs(amp) <= AMPLITUDE_PRUNE_TOL:
                continue
            if min(ket[:4]) < 0 or ket.total_photons() > MAX_TOTAL_PHOTONS:
                raise ParameterError(f"ket {ket} outside the {MAX_TOTAL_PHOTONS}-photon truncation")
            if not (0 <= ket.probe < probe_dim):
                raise ParameterError(f"probe index {ket.probe} outside dimension {probe_dim}")
            amps[ket] = amp
        self._amps = amps
        self.probe_dim = probe_dim

    def items(self) -> Iterator[Tuple[BasisKet, complex]]:
        return iter(sorted(self._amps.items()))

    def amplitude(self, ket: BasisKet) -> complex:
        return self._amps.get(ket, 0.0 + 0.0j)

    def norm_squared(self) -> float:
        return sum(abs(a) ** 2 for a in self._amps.values())

    def normalized(self) -> "SystemState":
        n2 = self.norm_squared()
        if n2 <= 0.0:
            raise ParameterError("cannot normalize a zero state")
        scale = 1.0 / math.sqrt(n2)
        return SystemState({k: a * scale for k, a in self._amps.items()}, self.probe_dim)

    def probe_density(self) -> np.ndarray:
        """Reduced density matrix of the probe register."""
        rho = np.zeros((self.probe_dim, self.probe_dim), dtype=complex)
        by_modes: Dict[Tuple[int, int, int, int], Dict[int, complex]] = {}
        for ket, amp in self._amps.items():
            by_modes.setdefault(ket[:4], {})[ket.probe] = amp
        for probe_amps in by_modes.values():
            for p, ap in probe_amps.items():
                for q, aq in probe_amps.items():
                    rho[p, q] += ap * np.conj(aq)
        return rho

    def __repr__(self) -> str:
        terms = ", ".join(f"{ket}: {amp:.4g}" for ket, amp in sorted(self._amps.items()))
        return f"SystemState({{{terms}}}, probe_dim={self.probe_dim})"


def states_allclose(s1: SystemState, s2: SystemState, atol: float = NORM_TOL) -> bool:
    """Amplitude-wise comparison (no global-phase forgiveness)."""
    if s1.probe_dim != s2.probe_dim:
        return False
    kets = set(dict(s1.items())) | set(dict(s2.items()))
    return all(abs(s1.amplitude(k) - s2.amplitude(k)) <= atol for k in kets)


def overlap(s1: SystemState, s2: SystemState) -> complex:
    """Inner product <s1|s2>; both states must share the probe dimension."""
    if s1.probe_dim != s2.probe_dim:
        raise ParameterError("probe dimensions differ")
    small, big = (s1, s2) if len(s1._amps) <= len(s2._amps) else (s2, s1)
    total = 0.0 + 0.0j
    for ket, amp in small._amps.items():
        other = big._amps.get(ket)
        if other is not None:
            if small is s1:
                total += np.conj(amp) * other
            else:
                total += np.conj(other) * amp
    return total


@dataclass(frozen=True)
class MeasurementBranch:
    """One projective branch: its probability and the renormalized collapsed state.

    ``collapsed`` is None when the branch has zero probability.
    """

    probability: float
    collapsed: Optional[SystemState]


def initial_state(
    bs: BeamsplitterParams, pol: Polarization, probe_dim: int = DEFAULT_PROBE_DIM
) -> SystemState:
    """Single-photon state right after the source beamsplitter.

    The photon sits in arm B with amplitude sqrt(T) and in arm A with
    amplitude i*sqrt(R); the probe register starts in index 0.
    """
    if probe_dim < 1:
        raise ParameterError("probe_dim must be >= 1")
    ampl_b = math.sqrt(bs.transmittance)
    ampl_a = 1j * math.sqrt(bs.reflectance)
    amps = {
        BasisKet(0, 0, 1, 0, 0): ampl_b * pol.alpha,
        BasisKet(0, 0, 0, 1, 0): ampl_b * pol.beta,
        BasisKet(1, 0, 0, 0, 0): ampl_a * pol.alpha,
        BasisKet(0, 1, 0, 0, 0): ampl_a * pol.beta,
    }
    return SystemState(amps, probe_dim)


def occupation_branches(state: SystemState, arm: str) -> Dict[int, MeasurementBranch]:
    """Split by the photon count an absorber in ``arm`` would register.

    Keys are the possible counts; each branch's collapsed state has the arm
    emptied (the absorber swallowed those photons) and is renormalized.
    """
    groups: Dict[int, Dict[BasisKet, complex]] = {}
    for ket, amp in state._amps.items():
        count = ket.arm_photons(arm)
        target = ket.with_arm_emptied(arm)
        bucket = groups.setdefault(count, {})
        bucket[target] = bucket.get(target, 0.0 + 0.0j) + amp
    branches: Dict[int, MeasurementBranch] = {}
    for count, amps in sorted(groups.items()):
        prob = sum(abs(a) ** 2 for a in amps.values())
        if prob <= AMPLITUDE_PRUNE_TOL**2:
            continue
        scale = 1.0 / math.sqrt(prob)
        collapsed = SystemState({k: a * scale for k, a in amps.items()}, state.probe_dim)
        branches[count] = MeasurementBranch(prob, collapsed)
    return branches


def apply_absorber(state: SystemState, arm: str) -> Tuple[MeasurementBranch, MeasurementBranch]:
    """Projective split on "at least one photon in ``arm``" vs "arm empty".

    Returns ``(absorbed, passed)``. The absorbed branch keeps its occupation
    numbers (they record what the absorber module caught); use
    :func:`occupation_branches` when the downstream evolution needs the arm
    cleared and the click count resolved.
    """
    absorbed_amps: Dict[BasisKet, complex] = {}
    passed_amps: Dict[BasisKet, complex] = {}
    for ket, amp in state._amps.items():
        if ket.arm_photons(arm) >= 1:
            absorbed_amps[ket] = amp
        else:
            passed_amps[ket] = amp

    def _branch(amps: Dict[BasisKet, complex]) -> MeasurementBranch:
        prob = sum(abs(a) ** 2 for a in amps.values())
        if prob <= AMPLITUDE_PRUNE_TOL**2:
            return MeasurementBranch(0.0, None)
        scale = 1.0 / math.sqrt(prob)
        return MeasurementBranch(
            prob, SystemState({k: a * scale for k, a in amps.items()}, state.probe_dim)
        )

    return _branch(absorbed_amps), _branch(passed_amps)


def apply_mirror(state: SystemState, arm: str) -> SystemState:
    """Reflection at a party's mirror: identity on occupations by convention."""
    if arm not in (ARM_A, ARM_B):
        raise ParameterError(f"unknown arm {arm!r}")
    return state


@dataclass(frozen=True)
class DetectionOutcome:
    """One detector photon-count pattern with its probability and probe state."""

    d1_photons: int
    d2_photons: int
    probability: float
    probe_density: np.ndarray

    def probe_vector(self, tol: float = 1e-9) -> np.ndarray:
        """Principal probe vector; valid only for (numerically) pure outcomes."""
        vals, vecs = np.linalg.eigh(self.probe_density)
        if len(vals) > 1 and vals[-2] > tol:
            raise ParameterError("probe state for this outcome is mixed")
        vec = vecs[:, -1]
        # fix the phase so the largest component is real positive
        pivot = np.argmax(np.abs(vec))
        phase = vec[pivot] / abs(vec[pivot])
        return vec / phase


@dataclass(frozen=True)
class DetectionDistribution:
    """Distribution over detector photon-count patterns after recombination."""

    outcomes: Tuple[DetectionOutcome, ...]
    probe_dim: int

    def probability(self, d1_photons: int, d2_photons: int) -> float:
        for out in self.outcomes:
            if out.d1_photons == d1_photons and out.d2_photons == d2_photons:
                return out.probability
        return 0.0

    @property
    def p_d1(self) -> float:
        """Probability of exactly one photon, at the first detector."""
        return self.probability(1, 0)

    @property
    def p_d2(self) -> float:
        return self.probability(0, 1)

    @property
    def p_none(self) -> float:
        return self.probability(0, 0)

    @property
    def p_multi(self) -> float:
        """Probability of two or more photons arriving at the detectors."""
        return sum(o.probability for o in self.outcomes if o.d1_photons + o.d2_photons >= 2)

    def total_probability(self) -> float:
        return sum(o.probability for o in self.outcomes)

    def outcome(self, d1_photons: int, d2_photons: int) -> Optional[DetectionOutcome]:
        for out in self.outcomes:
            if out.d1_photons == d1_photons and out.d2_photons == d2_photons:
                return out
        return None


def _apply_output_creation(
    terms: Dict[Tuple[int, int, int, int], complex],
    coeff_d1: complex,
    coeff_d2: complex,
    pol_index: int,
) -> Dict[Tuple[int, int, int, int], complex]:
    # Multiply the detector-mode expansion by (coeff_d1 * d1_pol^dag + coeff_d2 * d2_pol^dag),
    # with bosonic sqrt(n+1) factors.
    out: Dict[Tuple[int, int, int, int], complex] = {}
    for occ, amp in terms.items():
        for slot, coeff in ((pol_index, coeff_d1), (2 + pol_index, coeff_d2)):
            if abs(coeff) == 0.0:
                continue
            new_occ = list(occ)
            new_occ[slot] += 1
            factor = math.sqrt(new_occ[slot])
            key = tuple(new_occ)
            out[key] = out.get(key, 0.0 + 0.0j) + amp * coeff * factor
    return out


def recombine(state: SystemState, bs: BeamsplitterParams) -> DetectionDistribution:
    """Map arm modes onto the two detector modes and collect count patterns.

    Convention (polarization-independent):
        a_pol^dag -> i*sqrt(R) d1_pol^dag + sqrt(T) d2_pol^dag
        b_pol^dag -> sqrt(T)   d1_pol^dag + i*sqrt(R) d2_pol^dag

    Returns the distribution over detector photon-count patterns together
    with the conditional probe density matrix for each pattern. Patterns with
    two or more photons correspond to multi-count rounds (both detectors may
    fire, or one fires twice).
    """
    sqrt_t = math.sqrt(bs.transmittance)
    sqrt_r = math.sqrt(bs.reflectance)
    a_coeffs = (1j * sqrt_r, sqrt_t)
    b_coeffs = (sqrt_t, 1j * sqrt_r)

    # detector kets: (d1_h, d1_v, d2_h, d2_v) -> {probe index -> amplitude}
    det_amps: Dict[Tuple[int, int, int, int], Dict[int, complex]] = {}
    for ket, amp in state._amps.items():
        norm_factor = 1.0
        for occ in ket[:4]:
            norm_factor *= math.factorial(occ)
        terms: Dict[Tuple[int, int, int, int], complex] = {
            (0, 0, 0, 0): amp / math.sqrt(norm_factor)
        }
        for _ in range(ket.occ_a_h):
            terms = _apply_output_creation(terms, *a_coeffs, pol_index=0)
        for _ in range(ket.occ_a_v):
            terms = _apply_output_creation(terms, *a_coeffs, pol_index=1)
        for _ in range(ket.occ_b_h):
            terms = _apply_output_creation(terms, *b_coeffs, pol_index=0)
        for _ in range(ket.occ_b_v):
            terms = _apply_output_creation(terms, *b_coeffs, pol_index=1)
        for det_ket, value in terms.items():
            bucket = det_amps.setdefault(det_ket, {})
            bucket[ket.probe] = bucket.get(ket.probe, 0.0 + 0.0j) + value

    patterns: Dict[Tuple[int, int], Dict[str, object]] = {}
    for det_ket, probe_amps in det_amps.items():
        pattern = (det_ket[0] + det_ket[1], det_ket[2] + det_ket[3])
        entry = patterns.setdefault(
            pattern,
            {"prob": 0.0, "rho": np.zeros((state.probe_dim, state.probe_dim), dtype=complex)},
        )
        vec = np.zeros(state.probe_dim, dtype=complex)
        for p, a in probe_amps.items():
            vec[p] = a
        entry["prob"] += float(np.vdot(vec, vec).real)
        entry["rho"] += np.outer(vec, np.conj(vec))

    outcomes = []
    for (n1, n2), entry in sorted(patterns.items()):
        prob = float(entry["prob"])
        if prob <= AMPLITUDE_PRUNE_TOL**2:
            continue
        outcomes.append(DetectionOutcome(n1, n2, prob, entry["rho"] / prob))
    return DetectionDistribution(tuple(outcomes), state.probe_dim)


def reduced_arm_density(state: SystemState, arm: str) -> np.ndarray:
    """Reduced density matrix of one arm over the canonical occupation sectors.

    Sector order is :data:`ARM_SECTORS`; the other arm and the probe are
    traced out.
    """
    index = {sector: i for i, sector in enumerate(ARM_SECTORS)}
    rho = np.zeros((len(ARM_SECTORS), len(ARM_SECTORS)), dtype=complex)
    rest: Dict[Tuple[int, int, int], Dict[Tuple[int, int], complex]] = {}
    for ket, amp in state._amps.items():
        if arm == ARM_A:
            sector = (ket.occ_a_h, ket.occ_a_v)
            env = (ket.occ_b_h, ket.occ_b_v, ket.probe)
        else:
            sector = (ket.occ_b_h, ket.occ_b_v)
            env = (ket.occ_a_h, ket.occ_a_v, ket.probe)
        rest.setdefault(env, {})[sector] = amp
    for sector_amps in rest.values():
        for s1, a1 in sector_amps.items():
            for s2, a2 in sector_amps.items():
                rho[index[s1], index[s2]] += a1 * np.conj(a2)
    return rho
