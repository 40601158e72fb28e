"""Simulator and security analyzer for a semi-counterfactual QKD protocol.

The package splits into an exact interferometer engine (:mod:`.fockstate`),
the eavesdropper models (:mod:`.adversary`), round/session execution
(:mod:`.protocol`), closed-form security analysis (:mod:`.analysis`), and the
command-line harness (:mod:`.harness`).
"""

from .adversary import (
    AttackModel,
    GeneralIncoherentParams,
    NumberPreservingParams,
    PovmOutcome,
    ReturnLeg,
    UsdPovm,
    conclusive_probability,
    eve_guess,
    povm_measure,
)
from .analysis import (
    SecurityCurve,
    SecurityPoint,
    analytic_error,
    analytic_visibility,
    attacked_outcome_table,
    binary_entropy,
    error_rate_from_counts,
    eve_information,
    honest_outcome_table,
    key_rate,
    security_threshold,
    sweep,
    visibility_from_counts,
)
from .fockstate import (
    BasisKet,
    BeamsplitterParams,
    MeasurementBranch,
    Polarization,
    SystemState,
    apply_absorber,
    apply_mirror,
    initial_state,
    overlap,
    recombine,
)
from .protocol import (
    Bb84State,
    RoundOutcome,
    RoundRecord,
    SessionConfig,
    SessionStats,
    SwitchSetting,
    TrojanDefense,
    exact_outcome_probabilities,
    run_round,
    run_session,
    sift,
    trojan_polarization_check,
    trojan_timing_check,
)

__version__ = "0.1.0"
