"""Tests for the exact interferometer engine."""

import math

import numpy as np
import pytest

from scqkd.fockstate import (
    ARM_A,
    ARM_B,
    ARM_SECTORS,
    BasisKet,
    BeamsplitterParams,
    ParameterError,
    POL_H,
    POL_V,
    POL_D,
    POL_A,
    Polarization,
    SystemState,
    apply_absorber,
    apply_mirror,
    initial_state,
    occupation_branches,
    overlap,
    recombine,
    reduced_arm_density,
    states_allclose,
)

BALANCED = BeamsplitterParams.balanced()


def _vacuum(probe_dim=4):
    return SystemState({BasisKet(0, 0, 0, 0, 0): 1.0}, probe_dim)


def _random_state(rng, probe_dim=4, kets=6):
    pool = [
        BasisKet(0, 0, 0, 0, p) for p in range(probe_dim)
    ] + [
        BasisKet(1, 0, 0, 0, 0),
        BasisKet(0, 1, 0, 0, 1),
        BasisKet(0, 0, 1, 0, 0),
        BasisKet(0, 0, 0, 1, 2),
        BasisKet(1, 0, 1, 0, 0),
        BasisKet(0, 0, 2, 0, 3),
        BasisKet(1, 1, 0, 0, 1),
    ]
    chosen = rng.choice(len(pool), size=min(kets, len(pool)), replace=False)
    amps = {pool[i]: rng.normal() + 1j * rng.normal() for i in chosen}
    return SystemState(amps, probe_dim).normalized()


def test_polarization_must_be_normalized():
    with pytest.raises(ParameterError):
        Polarization(1.0, 1.0)


def test_beamsplitter_params_validation():
    with pytest.raises(ParameterError):
        BeamsplitterParams(0.7, 0.7)
    with pytest.raises(ParameterError):
        BeamsplitterParams(-0.1, 1.1)
    bs = BeamsplitterParams.from_transmittance(0.36)
    assert bs.reflectance == pytest.approx(0.64, abs=1e-15)


def test_initial_state_balanced_amplitudes():
    state = initial_state(BALANCED, POL_H)
    root_half = math.sqrt(0.5)
    assert state.amplitude(BasisKet(0, 0, 1, 0, 0)) == pytest.approx(root_half)
    assert state.amplitude(BasisKet(1, 0, 0, 0, 0)) == pytest.approx(1j * root_half)
    assert state.norm_squared() == pytest.approx(1.0, abs=1e-12)


def test_initial_state_full_transmission_single_ket():
    state = initial_state(BeamsplitterParams(1.0, 0.0), POL_H)
    assert dict(state.items()) == {BasisKet(0, 0, 1, 0, 0): pytest.approx(1.0)}


def test_initial_state_general_amplitudes():
    # sqrt(0.36) = 0.6 on the arm-B ket, i*sqrt(0.64) = 0.8i on the arm-A ket
    state = initial_state(BeamsplitterParams(0.36, 0.64), POL_H)
    assert state.amplitude(BasisKet(0, 0, 1, 0, 0)) == pytest.approx(0.6, abs=1e-12)
    assert state.amplitude(BasisKet(1, 0, 0, 0, 0)) == pytest.approx(0.8j, abs=1e-12)


def test_initial_state_carries_polarization():
    state = initial_state(BALANCED, POL_D)
    half = math.sqrt(0.5) / math.sqrt(2.0)
    assert state.amplitude(BasisKet(0, 0, 1, 0, 0)) == pytest.approx(half)
    assert state.amplitude(BasisKet(0, 0, 0, 1, 0)) == pytest.approx(half)


def test_initial_state_rejects_bad_probe_dim():
    with pytest.raises(ParameterError):
        initial_state(BALANCED, POL_H, probe_dim=0)


def test_state_truncation_enforced():
    with pytest.raises(ParameterError):
        SystemState({BasisKet(2, 1, 0, 0, 0): 1.0}, 4)


def test_absorber_balanced_arm_b():
    absorbed, passed = apply_absorber(initial_state(BALANCED, POL_H), ARM_B)
    assert absorbed.probability == pytest.approx(0.5, abs=1e-12)
    assert passed.probability == pytest.approx(0.5, abs=1e-12)
    # the surviving branch holds the photon in arm A only
    assert all(k.arm_photons(ARM_B) == 0 for k, _ in passed.collapsed.items())


def test_absorber_vacuum_is_noop():
    absorbed, passed = apply_absorber(_vacuum(), ARM_A)
    assert absorbed.probability == 0.0
    assert absorbed.collapsed is None
    assert passed.probability == pytest.approx(1.0)


def test_absorber_general_transmittance():
    # absorption at arm B happens with probability T
    absorbed, _ = apply_absorber(initial_state(BeamsplitterParams(0.36, 0.64), POL_H), ARM_B)
    assert absorbed.probability == pytest.approx(0.36, abs=1e-12)


def test_occupation_branches_empty_the_arm():
    branches = occupation_branches(initial_state(BALANCED, POL_H), ARM_B)
    assert set(branches) == {0, 1}
    assert branches[1].probability == pytest.approx(0.5, abs=1e-12)
    assert all(k.arm_photons(ARM_B) == 0 for k, _ in branches[1].collapsed.items())


def test_mirror_is_identity():
    state = initial_state(BALANCED, POL_V)
    assert apply_mirror(apply_mirror(state, ARM_A), ARM_B) is state
    with pytest.raises(ParameterError):
        apply_mirror(state, "C")


def test_mirror_preserves_norm_random_states():
    rng = np.random.default_rng(11)
    for _ in range(20):
        state = _random_state(rng)
        assert apply_mirror(state, ARM_A).norm_squared() == pytest.approx(1.0, abs=1e-12)


def test_recombine_both_reflect_balanced():
    dist = recombine(initial_state(BALANCED, POL_H), BALANCED)
    assert dist.p_d2 == pytest.approx(1.0, abs=1e-12)
    assert dist.p_d1 == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("transmittance", [0.25, 0.36, 0.5, 0.7])
def test_recombine_both_reflect_general(transmittance):
    bs = BeamsplitterParams.from_transmittance(transmittance)
    dist = recombine(initial_state(bs, POL_H), bs)
    t, r = bs.transmittance, bs.reflectance
    assert dist.p_d1 == pytest.approx((t - r) ** 2, abs=1e-12)
    assert dist.p_d2 == pytest.approx(4 * r * t, abs=1e-12)


def test_recombine_specific_values():
    bs = BeamsplitterParams(0.36, 0.64)
    dist = recombine(initial_state(bs, POL_H), bs)
    assert dist.p_d1 == pytest.approx(0.0784, abs=1e-12)
    assert dist.p_d2 == pytest.approx(0.9216, abs=1e-12)


def test_recombine_two_photons_flagged_as_multi():
    state = SystemState({BasisKet(1, 0, 1, 0, 0): 1.0}, 4)
    dist = recombine(state, BALANCED)
    assert dist.p_multi == pytest.approx(1.0, abs=1e-12)
    # photons bunch at a balanced splitter: double clicks at a single detector
    assert dist.probability(2, 0) == pytest.approx(0.5, abs=1e-12)
    assert dist.probability(0, 2) == pytest.approx(0.5, abs=1e-12)
    # an unbalanced splitter also fires both detectors together
    skew = recombine(state, BeamsplitterParams(0.7, 0.3))
    assert skew.probability(1, 1) > 0.0


@pytest.mark.parametrize("transmittance", [0.1, 0.25, 0.5, 0.8])
def test_recombine_is_unitary_on_random_states(transmittance):
    bs = BeamsplitterParams.from_transmittance(transmittance)
    rng = np.random.default_rng(23)
    for _ in range(15):
        state = _random_state(rng)
        dist = recombine(state, bs)
        assert dist.total_probability() == pytest.approx(1.0, abs=1e-10)


def test_overlap_identities():
    state = initial_state(BALANCED, POL_H)
    assert overlap(state, state) == pytest.approx(1.0, abs=1e-12)
    other = SystemState({BasisKet(0, 0, 0, 0, 1): 1.0}, 4)
    vac = _vacuum()
    assert overlap(vac, other) == 0.0


def test_overlap_probe_angle():
    theta = 0.7
    a = SystemState({BasisKet(0, 0, 0, 0, 0): 1.0}, 4)
    b = SystemState(
        {BasisKet(0, 0, 0, 0, 0): math.cos(theta), BasisKet(0, 0, 0, 0, 1): math.sin(theta)}, 4
    )
    assert overlap(a, b) == pytest.approx(math.cos(theta), abs=1e-10)
    assert abs(overlap(a, b)) <= 1.0 + 1e-10


def test_overlap_dimension_mismatch():
    with pytest.raises(ParameterError):
        overlap(_vacuum(4), _vacuum(5))


def _honest_conditional_table(bs):
    """Independent pipeline: conditional outcome probabilities per settings."""
    table = {}
    for alice in "FA":
        for bob in "FA":
            state = initial_state(bs, POL_H)
            prob_alice = prob_bob = 0.0
            weight = 1.0
            if alice == "A":
                absorbed, passed = apply_absorber(state, ARM_A)
                prob_alice = absorbed.probability
                weight = passed.probability
                state = passed.collapsed
            if bob == "A" and state is not None:
                absorbed, passed = apply_absorber(state, ARM_B)
                prob_bob = weight * absorbed.probability
                weight *= passed.probability
                state = passed.collapsed
            row = {"D1": 0.0, "D2": 0.0, "Null": prob_alice + prob_bob}
            if state is not None and weight > 1e-15:
                dist = recombine(state, bs)
                row["D1"] = weight * dist.p_d1
                row["D2"] = weight * dist.p_d2
                row["Null"] += weight * dist.p_none
            table[(alice, bob)] = row
    return table


def test_honest_pattern_exact_at_balanced():
    table = _honest_conditional_table(BALANCED)
    expected = {
        ("F", "F"): {"D1": 0.0, "D2": 1.0, "Null": 0.0},
        ("F", "A"): {"D1": 0.25, "D2": 0.25, "Null": 0.5},
        ("A", "F"): {"D1": 0.25, "D2": 0.25, "Null": 0.5},
        ("A", "A"): {"D1": 0.0, "D2": 0.0, "Null": 1.0},
    }
    for combo, row in expected.items():
        for outcome, prob in row.items():
            assert table[combo][outcome] == pytest.approx(prob, abs=1e-12), (combo, outcome)


@pytest.mark.parametrize("transmittance", [0.25, 0.36, 0.5, 0.7])
def test_blocking_statistics_general_transmittance(transmittance):
    bs = BeamsplitterParams.from_transmittance(transmittance)
    t, r = bs.transmittance, bs.reflectance
    table = _honest_conditional_table(bs)
    # Alice blocking: detection T^2, absorption R; Bob blocking: R^2 and T
    assert table[("A", "F")]["D1"] == pytest.approx(t * t, abs=1e-12)
    assert table[("F", "A")]["D1"] == pytest.approx(r * r, abs=1e-12)
    assert table[("A", "F")]["D2"] == pytest.approx(r * t, abs=1e-12)
    assert table[("F", "A")]["D2"] == pytest.approx(r * t, abs=1e-12)


def test_backward_leg_arm_b_states_are_orthogonal():
    """The two secret bits expose orthogonal arm-B states on the way back."""
    # bit 1: the photon never went down arm B; arm B is the vacuum
    bit1 = SystemState({BasisKet(1, 0, 0, 0, 0): 1.0}, 2)
    rho_bit1 = reduced_arm_density(bit1, ARM_B)
    # bit 0: the photon physically travels arm B, polarization averaged
    rho_bit0 = 0.5 * (
        reduced_arm_density(SystemState({BasisKet(0, 0, 1, 0, 0): 1.0}, 2), ARM_B)
        + reduced_arm_density(SystemState({BasisKet(0, 0, 0, 1, 0): 1.0}, 2), ARM_B)
    )
    vacuum_index = ARM_SECTORS.index((0, 0))
    assert rho_bit1[vacuum_index, vacuum_index] == pytest.approx(1.0, abs=1e-12)
    # bit 1's state is pure, so fidelity reduces to the trace product
    fidelity = float(np.trace(rho_bit1 @ rho_bit0).real)
    assert fidelity == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("pol", [POL_H, POL_V, POL_D, POL_A])
def test_detection_pattern_is_polarization_independent(pol):
    reference = recombine(initial_state(BALANCED, POL_H), BALANCED)
    dist = recombine(initial_state(BALANCED, pol), BALANCED)
    for out in reference.outcomes:
        assert dist.probability(out.d1_photons, out.d2_photons) == pytest.approx(
            out.probability, abs=1e-12
        )


def test_states_allclose_detects_differences():
    a = initial_state(BALANCED, POL_H)
    b = initial_state(BeamsplitterParams(0.36, 0.64), POL_H)
    assert states_allclose(a, a)
    assert not states_allclose(a, b)
