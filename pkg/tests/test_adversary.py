"""Tests for the attack models and the probe discrimination measurement."""

import math

import numpy as np
import pytest

from scqkd.adversary import (
    GeneralIncoherentParams,
    NumberPreservingParams,
    PovmOutcome,
    ReturnLeg,
    UsdPovm,
    apply_general_incoherent,
    apply_number_preserving,
    apply_return_leg,
    canonical_probe_vectors,
    conclusive_probability,
    eve_guess,
    povm_measure,
)
from scqkd.fockstate import (
    ARM_A,
    ARM_B,
    BasisKet,
    BeamsplitterParams,
    ParameterError,
    POL_H,
    SystemState,
    apply_absorber,
    initial_state,
    overlap,
    recombine,
    states_allclose,
)

BALANCED = BeamsplitterParams.balanced()


def _probe_ket(index, dim=4):
    return SystemState({BasisKet(0, 0, 0, 0, index): 1.0}, dim)


def test_theta_outside_domain_rejected():
    with pytest.raises(ParameterError):
        NumberPreservingParams(theta=2.0)
    with pytest.raises(ParameterError):
        NumberPreservingParams(theta=-0.1)


@pytest.mark.parametrize("theta", [0.0, 0.3, math.pi / 4, 1.2, math.pi / 2])
def test_onward_unitary_images_overlap_by_cos_theta(theta):
    params = NumberPreservingParams(theta, ReturnLeg.NONE)
    u0, u1 = params.onward_unitaries(4)
    start = np.zeros(4, dtype=complex)
    start[0] = 1.0
    inner = np.vdot(u1 @ start, u0 @ start)
    assert inner == pytest.approx(math.cos(theta), abs=1e-10)


def test_onward_attack_state_form_balanced():
    """After the onward attack the arm-B branch carries the rotated probe."""
    theta = 0.9
    state = apply_number_preserving(
        initial_state(BALANCED, POL_H), NumberPreservingParams(theta, ReturnLeg.NONE)
    )
    root_half = math.sqrt(0.5)
    # photon in arm B: probe rotated by theta
    assert state.amplitude(BasisKet(0, 0, 1, 0, 0)) == pytest.approx(root_half * math.cos(theta))
    assert state.amplitude(BasisKet(0, 0, 1, 0, 1)) == pytest.approx(root_half * math.sin(theta))
    # photon in arm A (empty arm B): probe untouched
    assert state.amplitude(BasisKet(1, 0, 0, 0, 0)) == pytest.approx(1j * root_half)
    assert state.amplitude(BasisKet(1, 0, 0, 0, 1)) == 0.0
    assert state.norm_squared() == pytest.approx(1.0, abs=1e-12)


def test_theta_zero_is_identity():
    state = initial_state(BALANCED, POL_H)
    attacked = apply_number_preserving(state, NumberPreservingParams(0.0, ReturnLeg.NONE))
    assert states_allclose(state, attacked, atol=1e-12)


@pytest.mark.parametrize("theta", [0.2, 0.8, math.pi / 2])
def test_attack_never_changes_occupations(theta):
    params = NumberPreservingParams(theta, ReturnLeg.NONE)
    for ket in [
        BasisKet(0, 0, 0, 0, 0),
        BasisKet(0, 0, 1, 0, 0),
        BasisKet(1, 0, 0, 0, 0),
        BasisKet(1, 0, 1, 0, 0),
        BasisKet(0, 0, 0, 1, 0),
    ]:
        out = apply_number_preserving(SystemState({ket: 1.0}, 4), params)
        for new_ket, _ in out.items():
            assert new_ket[:4] == ket[:4]


@pytest.mark.parametrize("theta", [0.3, 0.745, math.pi / 2])
def test_unattack_after_both_reflect_is_exact_identity(theta):
    params = NumberPreservingParams(theta, ReturnLeg.UNATTACK)
    state = initial_state(BALANCED, POL_H)
    round_trip = apply_return_leg(apply_number_preserving(state, params), params)
    assert states_allclose(state, round_trip, atol=1e-10)


def test_unattack_probe_states_one_party_absorbing():
    """Bob absorbing: the surviving branch's probe returns to the start vector,
    the absorbed branch's probe becomes the tell-tale rotated vector."""
    theta = 1.0
    params = NumberPreservingParams(theta, ReturnLeg.UNATTACK)
    state = apply_number_preserving(initial_state(BALANCED, POL_H), params)
    absorbed, passed = apply_absorber(state, ARM_B)
    survived = apply_return_leg(passed.collapsed, params)
    # the detection-eligible branch carries probe index 0 only
    assert survived.amplitude(BasisKet(1, 0, 0, 0, 0)) == pytest.approx(1j, abs=1e-10)
    # Bob's detection branch: probe is U0^dag U1 |0>, overlap cos(theta) with start
    detected = apply_return_leg(absorbed.collapsed, params)
    inner = overlap(_probe_ket(0), detected)
    assert abs(inner) == pytest.approx(math.cos(theta), abs=1e-10)


def test_unattack_alice_absorbing_probe_resets():
    theta = 1.0
    params = NumberPreservingParams(theta, ReturnLeg.UNATTACK)
    state = apply_number_preserving(initial_state(BALANCED, POL_H), params)
    _, passed = apply_absorber(state, ARM_A)
    survived = apply_return_leg(passed.collapsed, params)
    # photon stayed in arm B: probe rotated out and back to the start vector
    assert survived.amplitude(BasisKet(0, 0, 1, 0, 0)) == pytest.approx(1.0, abs=1e-10)
    assert survived.norm_squared() == pytest.approx(1.0, abs=1e-10)


def test_orthogonal_probe_marks_only_detected_rounds():
    """At theta = pi/2 the absorbed-branch probe is orthogonal to the start
    vector, but every detection-eligible branch still carries the start."""
    params = NumberPreservingParams(math.pi / 2, ReturnLeg.UNATTACK)
    state = apply_number_preserving(initial_state(BALANCED, POL_H), params)
    absorbed, passed = apply_absorber(state, ARM_B)
    detected = apply_return_leg(absorbed.collapsed, params)
    assert abs(overlap(_probe_ket(0), detected)) == pytest.approx(0.0, abs=1e-10)
    survived = apply_return_leg(passed.collapsed, params)
    assert abs(overlap(_probe_ket(0), survived)) == pytest.approx(1.0, abs=1e-10)


def test_general_return_with_identity_matches_no_return():
    theta = 0.6
    none = NumberPreservingParams(theta, ReturnLeg.NONE)
    general = NumberPreservingParams(theta, ReturnLeg.GENERAL)
    state = apply_number_preserving(initial_state(BALANCED, POL_H), none)
    assert states_allclose(state, apply_return_leg(state, general), atol=1e-12)
    n_none, y_none = none.final_probe_pair(4)
    n_gen, y_gen = general.final_probe_pair(4)
    assert np.allclose(n_none, n_gen) and np.allclose(y_none, y_gen)


def test_general_return_probe_pair_composes_unitaries():
    theta = 0.5
    rng = np.random.default_rng(5)
    raw = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    q, _ = np.linalg.qr(raw)
    params = NumberPreservingParams(theta, ReturnLeg.GENERAL, return_u0=q, return_u1=q)
    n_vec, y_vec = params.final_probe_pair(4)
    # a common return unitary cannot change the pair's overlap
    assert abs(np.vdot(n_vec, y_vec)) == pytest.approx(math.cos(theta), abs=1e-10)


def test_incoherent_no_attack_limit_is_identity():
    params = GeneralIncoherentParams()  # a00 = a10 = 1, shared probe vector
    state = initial_state(BALANCED, POL_H)
    assert states_allclose(state, apply_general_incoherent(state, params), atol=1e-12)


def test_incoherent_parameter_validation():
    with pytest.raises(ParameterError):
        GeneralIncoherentParams(a0p=1.2)
    with pytest.raises(ParameterError):
        GeneralIncoherentParams(a0p=0.5, a00=0.5)  # 0.25 + 0.25 != 1
    with pytest.raises(ParameterError):
        GeneralIncoherentParams(two_photon_scatter=True, return_leg=ReturnLeg.UNATTACK)


def test_incoherent_images_must_stay_orthogonal():
    # scatter vectors aligned with the keep vectors break unitarity
    basis = np.eye(4, dtype=complex)
    params = GeneralIncoherentParams(
        a0p=0.6, a1p=0.6, eps00=basis[0], eps10=basis[1], eps0p=basis[1], eps1p=basis[0]
    )
    with pytest.raises(ParameterError):
        apply_general_incoherent(initial_state(BALANCED, POL_H), params)


def test_incoherent_scatter_populates_both_arms():
    """The empty-arm scatter plants a photon next to the one in arm A, so a
    far-end detection coexists with a returning photon (a double count)."""
    a0p = math.sqrt(0.3)
    params = GeneralIncoherentParams(a0p=a0p)
    state = apply_general_incoherent(initial_state(BALANCED, POL_H), params)
    both_arms = sum(
        abs(amp) ** 2
        for ket, amp in state.items()
        if ket.arm_photons(ARM_A) == 1 and ket.arm_photons(ARM_B) == 1
    )
    assert both_arms == pytest.approx(0.5 * a0p**2, abs=1e-12)
    # Bob absorbing leaves that branch with a photon headed back to a detector
    absorbed, _ = apply_absorber(state, ARM_B)
    survivor = sum(
        abs(amp) ** 2 for ket, amp in absorbed.collapsed.items() if ket.arm_photons(ARM_A) == 1
    )
    assert survivor == pytest.approx(
        (0.5 * a0p**2) / absorbed.probability, abs=1e-12
    )


def test_incoherent_occupied_scatter_loses_the_photon():
    params = GeneralIncoherentParams(a1p=1.0)
    state = apply_general_incoherent(initial_state(BALANCED, POL_H), params)
    # the arm-B photon is gone; only the arm-A branch and vacuum remain
    assert all(ket.arm_photons(ARM_B) == 0 for ket, _ in state.items())
    vacuum_weight = sum(
        abs(amp) ** 2 for ket, amp in state.items() if ket.total_photons() == 0
    )
    assert vacuum_weight == pytest.approx(0.5, abs=1e-12)


def test_incoherent_two_photon_scatter_doubles_occupation():
    params = GeneralIncoherentParams(a1p=1.0, two_photon_scatter=True)
    state = apply_general_incoherent(initial_state(BALANCED, POL_H), params)
    doubled = sum(abs(amp) ** 2 for ket, amp in state.items() if ket.arm_photons(ARM_B) == 2)
    assert doubled == pytest.approx(0.5, abs=1e-12)


def test_incoherent_reduces_to_number_preserving():
    """Without scatter and with probe overlap cos(theta), the incoherent
    interaction is the number-preserving attack."""
    theta = 0.8
    basis = np.eye(4, dtype=complex)
    eps10 = math.cos(theta) * basis[0] + math.sin(theta) * basis[1]
    incoherent = GeneralIncoherentParams(eps00=basis[0], eps10=eps10)
    preserving = NumberPreservingParams(theta, ReturnLeg.NONE)
    state = initial_state(BALANCED, POL_H)
    assert states_allclose(
        apply_general_incoherent(state, incoherent),
        apply_number_preserving(state, preserving),
        atol=1e-10,
    )


def test_incoherent_unattack_round_trip():
    params = GeneralIncoherentParams(a0p=0.6, return_leg=ReturnLeg.UNATTACK)
    state = initial_state(BALANCED, POL_H)
    round_trip = apply_return_leg(apply_general_incoherent(state, params), params)
    assert states_allclose(state, round_trip, atol=1e-10)


@pytest.mark.parametrize("theta", [0.2, 0.7, 1.3])
def test_povm_completeness_on_span(theta):
    n_vec, y_vec = canonical_probe_vectors(theta, 4)
    povm = UsdPovm(n_vec, y_vec)
    total = povm.m_conclusive_n + povm.m_conclusive_y + povm.m_inconclusive
    assert np.allclose(total, povm.span_projector, atol=1e-12)
    # the span is two dimensional for distinct vectors
    assert np.trace(povm.span_projector).real == pytest.approx(2.0, abs=1e-12)


def test_povm_probabilities_orthogonal_states():
    rng = np.random.default_rng(1)
    outcome = povm_measure(canonical_probe_vectors(math.pi / 2, 4)[0], math.pi / 2, rng)
    assert outcome is PovmOutcome.CONCLUSIVE_N


def test_povm_identical_states_always_inconclusive():
    rng = np.random.default_rng(2)
    n_vec, _ = canonical_probe_vectors(0.0, 4)
    for _ in range(20):
        assert povm_measure(n_vec, 0.0, rng) is PovmOutcome.INCONCLUSIVE


def test_povm_probabilities_at_sixty_degrees():
    theta = math.pi / 3
    n_vec, y_vec = canonical_probe_vectors(theta, 4)
    povm = UsdPovm(n_vec, y_vec)
    p_n, p_y, p_inc = povm.outcome_probabilities(n_vec)
    assert p_n == pytest.approx(0.5, abs=1e-12)
    assert p_y == pytest.approx(0.0, abs=1e-12)
    assert p_inc == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("theta", [0.1, 0.5, 1.0, 1.5])
def test_povm_never_misidentifies(theta):
    n_vec, y_vec = canonical_probe_vectors(theta, 4)
    povm = UsdPovm(n_vec, y_vec)
    assert povm.outcome_probabilities(n_vec)[1] == pytest.approx(0.0, abs=1e-12)
    assert povm.outcome_probabilities(y_vec)[0] == pytest.approx(0.0, abs=1e-12)


def test_povm_rejects_off_span_probe():
    n_vec, y_vec = canonical_probe_vectors(0.4, 4)
    off_span = np.zeros(4, dtype=complex)
    off_span[3] = 1.0
    with pytest.raises(ParameterError):
        UsdPovm(n_vec, y_vec).outcome_probabilities(off_span)


def test_conclusive_probability_values():
    assert conclusive_probability(0.0) == pytest.approx(0.0)
    assert conclusive_probability(math.pi / 2) == pytest.approx(1.0)
    assert conclusive_probability(math.pi / 3) == pytest.approx(0.5, abs=1e-12)


def test_eve_guess_convention():
    assert eve_guess(PovmOutcome.CONCLUSIVE_N) == 1
    assert eve_guess(PovmOutcome.CONCLUSIVE_Y) == 0
    assert eve_guess(PovmOutcome.INCONCLUSIVE) is None


def test_povm_measure_frequencies_match_born_rule():
    theta = 0.9
    rng = np.random.default_rng(77)
    n_vec, _ = canonical_probe_vectors(theta, 4)
    draws = [povm_measure(n_vec, theta, rng) for _ in range(20000)]
    rate = sum(1 for d in draws if d is PovmOutcome.CONCLUSIVE_N) / len(draws)
    expected = conclusive_probability(theta)
    sigma = math.sqrt(expected * (1 - expected) / len(draws))
    assert abs(rate - expected) <= 3 * sigma
    assert not any(d is PovmOutcome.CONCLUSIVE_Y for d in draws)
