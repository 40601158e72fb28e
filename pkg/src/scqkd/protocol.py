"""Round-level protocol execution: party actions, detection sampling, sifting,
and the probing-light defenses.

Each round owns a dedicated randomness block derived from (seed, round index),
so the record stream is bit-identical however rounds are partitioned across
workers. The exact per-settings outcome distributions are computed once from
the amplitude engine and then sampled per round.
"""

from __future__ import annotations

from bisect import bisect_right
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import analysis
from .adversary import (
    AttackModel,
    PovmOutcome,
    UsdPovm,
    attack_onward,
    attack_return,
    eve_guess,
)
from .fockstate import (
    ARM_A,
    ARM_B,
    BeamsplitterParams,
    DEFAULT_PROBE_DIM,
    ParameterError,
    Polarization,
    POL_A,
    POL_D,
    POL_H,
    POL_V,
    SystemState,
    initial_state,
    occupation_branches,
    recombine,
)

# Fixed randomness layout: every round consumes this many uniform draws
# (3 Philox blocks of 4), in the slot order documented below. Unused slots
# are still consumed so that stream alignment never depends on the config.
DRAWS_PER_ROUND = 12
_BLOCKS_PER_ROUND = DRAWS_PER_ROUND // 4
_SLOT_ALICE = 0
_SLOT_BOB = 1
_SLOT_POL = 2
_SLOT_JITTER = 3
_SLOT_LOSS_ONWARD = 4
_SLOT_LOSS_RETURN = 5
_SLOT_OUTCOME = 6
_SLOT_BOB_BASIS = 7
_SLOT_BOB_RESULT = 8
_SLOT_EVE = 9

PROBABILITY_SUM_TOL = 1e-9


class ConfigError(ValueError):
    """Raised for an invalid session configuration."""


class SwitchSetting(Enum):
    REFLECT = "F"
    ABSORB = "A"


class RoundOutcome(Enum):
    D1 = "D1"
    D2 = "D2"
    ALICE_ABSORB = "AliceAbsorb"
    BOB_ABSORB = "BobAbsorb"
    NULL = "Null"
    MULTI_COUNT = "MultiCount"


class TrojanDefense(Enum):
    NONE = "none"
    TIMING = "timing"
    POLARIZATION = "polarization"
    BOTH = "both"

    @property
    def timing_enabled(self) -> bool:
        return self in (TrojanDefense.TIMING, TrojanDefense.BOTH)

    @property
    def polarization_enabled(self) -> bool:
        return self in (TrojanDefense.POLARIZATION, TrojanDefense.BOTH)


class Bb84State(Enum):
    """The four polarization preparations, two per basis."""

    H = "H"
    V = "V"
    D = "D"
    A = "A"

    @property
    def basis(self) -> str:
        return "Z" if self in (Bb84State.H, Bb84State.V) else "X"

    def polarization(self) -> Polarization:
        return _POL_AMPLITUDES[self]


_POL_AMPLITUDES = {
    Bb84State.H: POL_H,
    Bb84State.V: POL_V,
    Bb84State.D: POL_D,
    Bb84State.A: POL_A,
}
_POL_ORDER = (Bb84State.H, Bb84State.V, Bb84State.D, Bb84State.A)
_BASIS_STATES = {"Z": (Bb84State.H, Bb84State.V), "X": (Bb84State.D, Bb84State.A)}


@dataclass(frozen=True)
class SessionConfig:
    """Everything a session run depends on, including the seed."""

    rounds: int
    test_fraction: float = 0.25
    bs: BeamsplitterParams = field(default_factory=BeamsplitterParams.balanced)
    attack: AttackModel = None
    loss_rate: float = 0.0
    seed: int = 0
    trojan_defense: TrojanDefense = TrojanDefense.NONE
    probe_dim: int = DEFAULT_PROBE_DIM
    transit_ticks: int = 8
    send_period: int = 100
    jitter_window: int = 50

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if not (0.0 < self.test_fraction < 1.0):
            raise ConfigError("test_fraction must lie in (0, 1)")
        if self.test_fraction * self.rounds < 1.0:
            raise ConfigError("test_fraction * rounds must be >= 1")
        if not (0.0 <= self.loss_rate < 1.0):
            raise ConfigError("loss_rate must lie in [0, 1)")
        if not (0 <= self.seed < 2**64):
            raise ConfigError("seed must fit in 64 bits")
        if self.probe_dim < 2:
            raise ConfigError("probe_dim must be >= 2")
        if self.transit_ticks < 1 or self.send_period < 1 or self.jitter_window < 1:
            raise ConfigError("tick parameters must be positive")


@dataclass(slots=True)
class RoundRecord:
    """Everything one protocol round produced. Treat as immutable."""

    index: int
    alice_setting: SwitchSetting
    bob_setting: SwitchSetting
    sent_pol: Bb84State
    send_time: int
    receive_time: Optional[int]
    transit_ticks: int
    outcome: RoundOutcome
    bob_basis: Optional[str]
    bob_result: Optional[Bb84State]
    sifted_bit: Optional[int]


@dataclass(frozen=True)
class SessionStats:
    """Counts by (settings, outcome) plus the derived estimators."""

    counts: Dict[Tuple[str, str, str], int]
    visibility: Optional[float]
    error_rate: Optional[float]
    multi_count_rate: float
    loss_rate: float
    detection_rate: float
    key_bits: int
    eve_sifted_d1: int
    eve_conclusive: int
    eve_correct: int
    eve_information: Optional[float]
    key_rate: Optional[float]


def round_uniforms(seed: int, start: int, count: int) -> np.ndarray:
    """Uniform draws for rounds [start, start+count), shape (count, 12).

    Row i is a pure function of (seed, start + i): each round owns three
    128-bit counter blocks of a Philox stream keyed by the seed.
    """
    bitgen = np.random.Philox(key=seed)
    if start:
        bitgen.advance(start * _BLOCKS_PER_ROUND)
    return np.random.Generator(bitgen).random((count, DRAWS_PER_ROUND))


def sift_rng(seed: int) -> np.random.Generator:
    """Dedicated stream for test-set selection, disjoint from every round block."""
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 1, 0]))


@dataclass(frozen=True)
class _Leaf:
    """One classical alternative of a round: click pattern and conditionals."""

    alice_clicks: int
    bob_clicks: int
    d1_photons: int
    d2_photons: int
    probability: float
    outcome: RoundOutcome
    sifted_bit: Optional[int]
    eve_cum: Optional[Tuple[float, float]]  # cumulative (P_N, P_N + P_Y)


@dataclass(frozen=True)
class _Distribution:
    leaves: Tuple[_Leaf, ...]
    cumulative: Tuple[float, ...]


def _classify(
    alice_clicks: int, bob_clicks: int, d1: int, d2: int
) -> RoundOutcome:
    total = alice_clicks + bob_clicks + d1 + d2
    if total == 0:
        return RoundOutcome.NULL
    if total >= 2:
        return RoundOutcome.MULTI_COUNT
    if alice_clicks:
        return RoundOutcome.ALICE_ABSORB
    if bob_clicks:
        return RoundOutcome.BOB_ABSORB
    if d1:
        return RoundOutcome.D1
    return RoundOutcome.D2


def _sifted_bit_for(
    outcome: RoundOutcome, alice: SwitchSetting, bob: SwitchSetting
) -> Optional[int]:
    if outcome is not RoundOutcome.D1:
        return None
    if alice is SwitchSetting.ABSORB and bob is SwitchSetting.REFLECT:
        return 0
    if alice is SwitchSetting.REFLECT and bob is SwitchSetting.ABSORB:
        return 1
    return None


class _RoundEngine:
    """Exact outcome distributions per (settings, loss pattern), plus the
    eavesdropper's discrimination probabilities, all computed once."""

    def __init__(self, cfg: SessionConfig):
        self.cfg = cfg
        self._dists: Dict[Tuple[SwitchSetting, SwitchSetting, bool, bool], _Distribution] = {}
        self.povm: Optional[UsdPovm] = None
        self.eve_modeled = False
        attack = cfg.attack
        if attack is None:
            start = np.zeros(cfg.probe_dim, dtype=complex)
            start[0] = 1.0
            self.povm = UsdPovm(start, start)
            self.eve_modeled = True
        else:
            try:
                pair = attack.final_probe_pair(cfg.probe_dim)
            except ParameterError:
                pair = None  # scattering attacks carry no closed-form probe pair
            if pair is not None:
                self.povm = UsdPovm(pair[0], pair[1])
                self.eve_modeled = True

    def distribution(
        self,
        alice: SwitchSetting,
        bob: SwitchSetting,
        lost_onward: bool,
        lost_return: bool,
    ) -> _Distribution:
        key = (alice, bob, lost_onward, lost_return)
        dist = self._dists.get(key)
        if dist is None:
            dist = self._build(alice, bob, lost_onward, lost_return)
            self._dists[key] = dist
        return dist

    def _build(
        self,
        alice: SwitchSetting,
        bob: SwitchSetting,
        lost_onward: bool,
        lost_return: bool,
    ) -> _Distribution:
        cfg = self.cfg
        # Outcome statistics are polarization independent (the beamsplitter map
        # and both attacks act identically on the H and V modes), so one
        # reference preparation serves every round.
        state = initial_state(cfg.bs, POL_H, cfg.probe_dim)
        state = attack_onward(state, cfg.attack)

        branches: List[Tuple[float, SystemState, int, int]] = [(1.0, state, 0, 0)]

        def silent_channel_loss(items: List[Tuple[float, SystemState, int, int]]):
            out = []
            for prob, st, ca, cb in items:
                for _count, br in occupation_branches(st, ARM_B).items():
                    out.append((prob * br.probability, br.collapsed, ca, cb))
            return out

        if lost_onward:
            branches = silent_channel_loss(branches)

        def party_action(
            items: List[Tuple[float, SystemState, int, int]],
            setting: SwitchSetting,
            arm: str,
            party_is_alice: bool,
        ):
            out = []
            for prob, st, ca, cb in items:
                if setting is SwitchSetting.REFLECT:
                    out.append((prob, st, ca, cb))
                    continue
                for count, br in occupation_branches(st, arm).items():
                    if party_is_alice:
                        out.append((prob * br.probability, br.collapsed, ca + count, cb))
                    else:
                        out.append((prob * br.probability, br.collapsed, ca, cb + count))
            return out

        branches = party_action(branches, alice, ARM_A, True)
        branches = party_action(branches, bob, ARM_B, False)
        branches = [
            (prob, attack_return(st, cfg.attack), ca, cb) for prob, st, ca, cb in branches
        ]
        if lost_return:
            branches = silent_channel_loss(branches)

        # Recombine every branch and merge identical click signatures;
        # conditional probe states merge as probability-weighted mixtures.
        merged: Dict[Tuple[int, int, int, int], Dict[str, object]] = {}
        for prob, st, ca, cb in branches:
            for det in recombine(st, cfg.bs).outcomes:
                signature = (ca, cb, det.d1_photons, det.d2_photons)
                weight = prob * det.probability
                if weight <= 0.0:
                    continue
                entry = merged.setdefault(
                    signature,
                    {
                        "prob": 0.0,
                        "rho": np.zeros((cfg.probe_dim, cfg.probe_dim), dtype=complex),
                    },
                )
                entry["prob"] += weight
                entry["rho"] += weight * det.probe_density

        leaves: List[_Leaf] = []
        for signature in sorted(merged):
            entry = merged[signature]
            prob = float(entry["prob"])
            ca, cb, d1, d2 = signature
            outcome = _classify(ca, cb, d1, d2)
            bit = _sifted_bit_for(outcome, alice, bob)
            eve_cum = None
            if self.eve_modeled and outcome is RoundOutcome.D1:
                rho = np.asarray(entry["rho"]) / prob
                try:
                    p_n, p_y, _ = self.povm.outcome_probabilities(rho)
                    eve_cum = (p_n, p_n + p_y)
                except ParameterError:
                    eve_cum = None
            leaves.append(_Leaf(ca, cb, d1, d2, prob, outcome, bit, eve_cum))

        total = sum(leaf.probability for leaf in leaves)
        if abs(total - 1.0) > PROBABILITY_SUM_TOL:
            raise AssertionError(f"round outcome probabilities sum to {total}, not 1")
        cumulative: List[float] = []
        running = 0.0
        for leaf in leaves:
            running += leaf.probability
            cumulative.append(running)
        return _Distribution(tuple(leaves), tuple(cumulative))


def _sample_bob_polarization(
    sent: Bb84State, draws: np.ndarray
) -> Tuple[str, Bb84State]:
    basis = "Z" if draws[_SLOT_BOB_BASIS] < 0.5 else "X"
    if basis == sent.basis:
        return basis, sent
    first, second = _BASIS_STATES[basis]
    return basis, (first if draws[_SLOT_BOB_RESULT] < 0.5 else second)


def _execute_round(
    engine: _RoundEngine, index: int, draws: np.ndarray
) -> Tuple[RoundRecord, Optional[PovmOutcome]]:
    cfg = engine.cfg
    alice = SwitchSetting.REFLECT if draws[_SLOT_ALICE] < 0.5 else SwitchSetting.ABSORB
    bob = SwitchSetting.REFLECT if draws[_SLOT_BOB] < 0.5 else SwitchSetting.ABSORB

    if cfg.trojan_defense.polarization_enabled:
        sent = _POL_ORDER[min(int(draws[_SLOT_POL] * 4.0), 3)]
    else:
        sent = Bb84State.H

    jitter = 0
    if cfg.trojan_defense.timing_enabled:
        jitter = min(int(draws[_SLOT_JITTER] * cfg.jitter_window), cfg.jitter_window - 1)
    send_time = index * cfg.send_period + jitter

    lost_onward = cfg.loss_rate > 0.0 and draws[_SLOT_LOSS_ONWARD] < cfg.loss_rate
    lost_return = cfg.loss_rate > 0.0 and draws[_SLOT_LOSS_RETURN] < cfg.loss_rate

    dist = engine.distribution(alice, bob, lost_onward, lost_return)
    leaf_index = bisect_right(dist.cumulative, float(draws[_SLOT_OUTCOME]))
    if leaf_index >= len(dist.leaves):
        leaf_index = len(dist.leaves) - 1
    leaf = dist.leaves[leaf_index]

    receive_time = send_time + cfg.transit_ticks if leaf.bob_clicks >= 1 else None

    bob_basis: Optional[str] = None
    bob_result: Optional[Bb84State] = None
    if leaf.bob_clicks >= 1 and cfg.trojan_defense.polarization_enabled:
        bob_basis, bob_result = _sample_bob_polarization(sent, draws)

    eve_outcome: Optional[PovmOutcome] = None
    if leaf.eve_cum is not None:
        draw = float(draws[_SLOT_EVE])
        if draw < leaf.eve_cum[0]:
            eve_outcome = PovmOutcome.CONCLUSIVE_N
        elif draw < leaf.eve_cum[1]:
            eve_outcome = PovmOutcome.CONCLUSIVE_Y
        else:
            eve_outcome = PovmOutcome.INCONCLUSIVE

    record = RoundRecord(
        index=index,
        alice_setting=alice,
        bob_setting=bob,
        sent_pol=sent,
        send_time=send_time,
        receive_time=receive_time,
        transit_ticks=cfg.transit_ticks,
        outcome=leaf.outcome,
        bob_basis=bob_basis,
        bob_result=bob_result,
        sifted_bit=leaf.sifted_bit,
    )
    return record, eve_outcome


def exact_outcome_probabilities(
    cfg: SessionConfig,
    alice: SwitchSetting,
    bob: SwitchSetting,
    lost_onward: bool = False,
    lost_return: bool = False,
) -> Dict[str, float]:
    """Exact conditional outcome probabilities for one settings combo.

    Computed from the amplitude engine, not by sampling; keys are the
    outcome labels that can occur.
    """
    engine = _RoundEngine(cfg)
    dist = engine.distribution(alice, bob, lost_onward, lost_return)
    probs: Dict[str, float] = {}
    for leaf in dist.leaves:
        label = leaf.outcome.value
        probs[label] = probs.get(label, 0.0) + leaf.probability
    return probs


def run_round(
    cfg: SessionConfig, index: int, rng: Optional[np.random.Generator] = None
) -> RoundRecord:
    """Execute one round. ``rng`` defaults to the round's own (seed, index) stream."""
    if rng is None:
        draws = round_uniforms(cfg.seed, index, 1)[0]
    else:
        draws = rng.random(DRAWS_PER_ROUND)
    engine = _RoundEngine(cfg)
    return _execute_round(engine, index, draws)[0]


def _run_chunk(
    cfg: SessionConfig, start: int, count: int
) -> Tuple[List[RoundRecord], Dict[Tuple[str, str, str], int], Tuple[int, int, int]]:
    engine = _RoundEngine(cfg)
    uniforms = round_uniforms(cfg.seed, start, count)
    records: List[RoundRecord] = []
    counts: Dict[Tuple[str, str, str], int] = {}
    sifted_d1 = conclusive = correct = 0
    for offset in range(count):
        record, eve_outcome = _execute_round(engine, start + offset, uniforms[offset])
        records.append(record)
        key = (record.alice_setting.value, record.bob_setting.value, record.outcome.value)
        counts[key] = counts.get(key, 0) + 1
        if record.sifted_bit is not None:
            sifted_d1 += 1
            guess = eve_guess(eve_outcome) if eve_outcome is not None else None
            if guess is not None:
                conclusive += 1
                if guess == record.sifted_bit:
                    correct += 1
    return records, counts, (sifted_d1, conclusive, correct)


def run_session(
    cfg: SessionConfig, workers: int = 1
) -> Tuple[List[RoundRecord], SessionStats]:
    """Run every round, sift, and aggregate the session estimators.

    ``workers`` only controls how rounds are fanned out; results are identical
    for any worker count because each round's randomness block is fixed.
    """
    n = cfg.rounds
    if workers <= 1 or n < 2 * workers:
        chunks = [_run_chunk(cfg, 0, n)]
    else:
        bounds = [(i * n) // workers for i in range(workers + 1)]
        specs = [
            (start, stop - start)
            for start, stop in zip(bounds, bounds[1:])
            if stop > start
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(
                pool.map(_run_chunk_star, [(cfg, start, count) for start, count in specs])
            )

    records: List[RoundRecord] = []
    counts: Dict[Tuple[str, str, str], int] = {}
    sifted_d1 = conclusive = correct = 0
    for chunk_records, chunk_counts, (s, c, k) in chunks:
        records.extend(chunk_records)
        for key, value in chunk_counts.items():
            counts[key] = counts.get(key, 0) + value
        sifted_d1 += s
        conclusive += c
        correct += k

    _, key_records, _ = sift(records, cfg.test_fraction, sift_rng(cfg.seed))
    stats = _session_stats(cfg, counts, len(key_records), sifted_d1, conclusive, correct)
    return records, stats


def _run_chunk_star(args: Tuple[SessionConfig, int, int]):
    return _run_chunk(*args)


def _session_stats(
    cfg: SessionConfig,
    counts: Dict[Tuple[str, str, str], int],
    key_bits: int,
    sifted_d1: int,
    conclusive: int,
    correct: int,
) -> SessionStats:
    n = cfg.rounds
    engine_modeled = _RoundEngine(cfg).eve_modeled

    def _try(estimator):
        try:
            return estimator(counts)
        except analysis.NoDataError:
            return None

    visibility = _try(analysis.visibility_from_counts)
    error_rate = _try(analysis.error_rate_from_counts)
    multi = sum(v for (_, _, o), v in counts.items() if o == "MultiCount") / n
    null_rate = sum(v for (_, _, o), v in counts.items() if o == "Null") / n
    detection = sum(v for (_, _, o), v in counts.items() if o == "D1") / n

    eve_information: Optional[float] = None
    if engine_modeled and sifted_d1 > 0:
        eve_information = conclusive / sifted_d1
    key_rate: Optional[float] = None
    if error_rate is not None and eve_information is not None:
        key_rate = analysis.key_rate(error_rate, eve_information)

    return SessionStats(
        counts=counts,
        visibility=visibility,
        error_rate=error_rate,
        multi_count_rate=multi,
        loss_rate=null_rate,
        detection_rate=detection,
        key_bits=key_bits,
        eve_sifted_d1=sifted_d1,
        eve_conclusive=conclusive,
        eve_correct=correct,
        eve_information=eve_information,
        key_rate=key_rate,
    )


@dataclass(frozen=True)
class SiftStats:
    """Joint (settings, outcome) statistics of the revealed test rounds."""

    counts: Dict[Tuple[str, str, str], int]
    observed: Dict[Tuple[str, str], Dict[str, float]]
    expected: Dict[Tuple[str, str], Dict[str, float]]
    visibility: Optional[float]
    error_rate: Optional[float]


def _conditional_frequencies(
    counts: Dict[Tuple[str, str, str], int]
) -> Dict[Tuple[str, str], Dict[str, float]]:
    observed: Dict[Tuple[str, str], Dict[str, float]] = {}
    for combo in analysis.SETTINGS_COMBOS:
        total = sum(v for (a, b, _), v in counts.items() if (a, b) == combo)
        if total == 0:
            continue
        freqs = {"D1": 0.0, "D2": 0.0, "Null": 0.0}
        for (a, b, outcome), value in counts.items():
            if (a, b) != combo:
                continue
            label = "Null" if outcome in analysis.SILENT_OUTCOMES else outcome
            freqs[label] = freqs.get(label, 0.0) + value / total
        observed[combo] = freqs
    return observed


def sift(
    records: Sequence[RoundRecord],
    test_fraction: float,
    rng: np.random.Generator,
) -> Tuple[List[RoundRecord], List[RoundRecord], SiftStats]:
    """Split records into a revealed test set and the key-carrying set.

    A random ``test_fraction`` of all rounds is revealed and its joint
    (settings, outcome) statistics summarized against the honest pattern; the
    key set keeps the unrevealed first-detector rounds with exactly one
    absorb setting.
    """
    if not records:
        raise ConfigError("cannot sift an empty record list")
    if not (0.0 < test_fraction < 1.0):
        raise ConfigError("test_fraction must lie in (0, 1)")
    n = len(records)
    size = max(1, round(test_fraction * n))
    chosen = rng.choice(n, size=size, replace=False)
    test_mask = np.zeros(n, dtype=bool)
    test_mask[chosen] = True

    test_records: List[RoundRecord] = []
    key_records: List[RoundRecord] = []
    test_counts: Dict[Tuple[str, str, str], int] = {}
    for i, record in enumerate(records):
        if test_mask[i]:
            test_records.append(record)
            key = (
                record.alice_setting.value,
                record.bob_setting.value,
                record.outcome.value,
            )
            test_counts[key] = test_counts.get(key, 0) + 1
        elif record.outcome is RoundOutcome.D1 and record.sifted_bit is not None:
            key_records.append(record)

    def _try(estimator):
        try:
            return estimator(test_counts)
        except analysis.NoDataError:
            return None

    stats = SiftStats(
        counts=test_counts,
        observed=_conditional_frequencies(test_counts),
        expected=analysis.honest_outcome_table(),
        visibility=_try(analysis.visibility_from_counts),
        error_rate=_try(analysis.error_rate_from_counts),
    )
    return test_records, key_records, stats


def trojan_timing_check(records: Sequence[RoundRecord]) -> int:
    """Count receipt-time violations among rounds where the far absorber fired."""
    violations = 0
    for record in records:
        if record.receive_time is None:
            continue
        if record.send_time != record.receive_time - record.transit_ticks:
            violations += 1
    return violations


def trojan_polarization_check(records: Sequence[RoundRecord]) -> float:
    """Mismatch rate among matching-basis polarization checks at the far absorber."""
    matching = 0
    mismatches = 0
    for record in records:
        if record.bob_basis is None or record.bob_result is None:
            continue
        if record.bob_basis != record.sent_pol.basis:
            continue
        matching += 1
        if record.bob_result is not record.sent_pol:
            mismatches += 1
    if matching == 0:
        raise analysis.NoDataError("no matching-basis polarization checks")
    return mismatches / matching
