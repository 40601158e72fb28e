"""Command-line entry point: configuration, orchestration, and file outputs.

Outputs are machine readable and byte-deterministic for a fixed config and
seed: a JSON summary with the counts table and estimators, a per-round CSV,
and (for sweeps) a security-curve CSV. The manifest echoes the configuration
so a run can be reproduced from it alone.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import analysis
from .adversary import GeneralIncoherentParams, NumberPreservingParams, ReturnLeg
from .fockstate import BeamsplitterParams, ParameterError
from .protocol import (
    ConfigError,
    RoundRecord,
    SessionConfig,
    SessionStats,
    TrojanDefense,
    run_session,
)

ARTIFACT_VERSION = "0.1.0"
OUT_DIR_ENV = "SCQKD_OUT_DIR"
DEFAULT_MIN_VISIBILITY = 0.95

SUMMARY_FILE = "summary.json"
ROUNDS_FILE = "rounds.csv"
CURVE_FILE = "curve.csv"
MANIFEST_FILE = "manifest.json"

ROUNDS_HEADER = [
    "index",
    "alice",
    "bob",
    "outcome",
    "bit",
    "t_s",
    "t_r",
    "pol_sent",
    "pol_basis",
    "pol_result",
]
CURVE_HEADER = ["theta", "V", "e", "I_E", "I_AB", "K"]

EXIT_ACCEPT = 0
EXIT_ERROR = 1
EXIT_ABORT = 2


@dataclass(frozen=True)
class SweepRequest:
    start: float
    end: float
    steps: int


@dataclass(frozen=True)
class RunPlan:
    """A validated session or sweep request plus orchestration knobs."""

    session: Optional[SessionConfig]
    sweep: Optional[SweepRequest]
    out_dir: Path
    workers: int
    min_visibility: float
    max_error: Optional[float]  # None: use the analytic threshold
    config_echo: Dict[str, object]


@dataclass(frozen=True)
class RunManifest:
    config_echo: Dict[str, object]
    artifact_version: str
    seed: Optional[int]
    wall_time_s: float
    outputs: List[str]


def _fmt_float(value: float) -> str:
    return format(value, ".12g")


def _round_floats(value):
    """Round floats to 12 significant digits so serialized output is stable."""
    if isinstance(value, float):
        return float(_fmt_float(value))
    if isinstance(value, dict):
        return {k: _round_floats(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round_floats(v) for v in value]
    return value


def _write_json(path: Path, payload: Dict[str, object]) -> None:
    text = json.dumps(_round_floats(payload), indent=2, sort_keys=True)
    path.write_text(text + "\n", encoding="utf-8")


ATTACK_CHOICES = ("none", "incoherent", "number-preserving")
RETURN_LEG_CHOICES = ("none", "unattack", "general")
TROJAN_CHOICES = ("none", "timing", "polarization", "both")

# config-file keys mirror the flag names (hyphens); underscores also accepted
_FILE_KEYS = {
    "rounds": "rounds",
    "test-fraction": "test_fraction",
    "transmittance": "transmittance",
    "attack": "attack",
    "theta": "theta",
    "alpha0p": "alpha0p",
    "alpha1p": "alpha1p",
    "return-leg": "return_leg",
    "loss": "loss",
    "seed": "seed",
    "trojan": "trojan",
    "out": "out",
    "sweep": "sweep",
    "workers": "workers",
    "min-visibility": "min_visibility",
    "max-error": "max_error",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scqkd",
        description="Simulate protocol sessions and compute the security trade-off.",
    )
    parser.add_argument("--config", type=str, default=None, help="flat JSON key/value config file")
    parser.add_argument("--rounds", type=int, default=None, help="number of protocol rounds")
    parser.add_argument("--test-fraction", dest="test_fraction", type=float, default=0.25)
    parser.add_argument("--transmittance", type=float, default=0.5)
    parser.add_argument("--attack", choices=ATTACK_CHOICES, default="none")
    parser.add_argument("--theta", type=float, default=None, help="attack probe-overlap angle (rad)")
    parser.add_argument("--alpha0p", type=float, default=0.0, help="empty-arm scatter amplitude")
    parser.add_argument("--alpha1p", type=float, default=0.0, help="occupied-arm scatter amplitude")
    parser.add_argument("--return-leg", dest="return_leg", choices=RETURN_LEG_CHOICES, default=None)
    parser.add_argument("--loss", type=float, default=0.0, help="per-leg channel loss probability")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--trojan", choices=TROJAN_CHOICES, default="none")
    parser.add_argument("--out", type=str, default=None, help="output directory")
    parser.add_argument("--sweep", type=str, default=None, help="theta sweep START:END:STEPS")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--min-visibility", dest="min_visibility", type=float,
                        default=DEFAULT_MIN_VISIBILITY, help="accept verdict floor for V")
    parser.add_argument("--max-error", dest="max_error", type=float, default=None,
                        help="accept verdict ceiling for e (default: analytic threshold)")
    return parser


def _load_config_file(path: str, parser: argparse.ArgumentParser) -> Dict[str, object]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read config file {path}: {exc}")
    if not isinstance(raw, dict):
        parser.error(f"config file {path} must hold a flat JSON object")
    defaults: Dict[str, object] = {}
    for key, value in raw.items():
        dest = _FILE_KEYS.get(key, _FILE_KEYS.get(key.replace("_", "-")))
        if dest is None:
            parser.error(f"unknown config file key: {key}")
        if value is not None:
            defaults[dest] = value
    return defaults


def _parse_sweep(text: str, parser: argparse.ArgumentParser) -> SweepRequest:
    parts = text.split(":")
    if len(parts) != 3:
        parser.error("--sweep expects START:END:STEPS")
    try:
        start, end, steps = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        parser.error("--sweep expects numeric START:END:STEPS")
    if steps < 1:
        parser.error("--sweep STEPS must be >= 1")
    if not (0.0 <= start < end <= math.pi / 2 + 1e-9):
        parser.error("--sweep range must satisfy 0 <= START < END <= pi/2")
    return SweepRequest(start, end, steps)


def parse_config(argv: Optional[Sequence[str]] = None) -> RunPlan:
    """Parse flags (optionally over a flat JSON config file; flags win)."""
    parser = _build_parser()
    first_pass, _ = parser.parse_known_args(argv)
    if first_pass.config is not None:
        parser.set_defaults(**_load_config_file(first_pass.config, parser))
    args = parser.parse_args(argv)

    # config-file values bypass argparse's per-flag validation; redo it here
    if args.attack not in ATTACK_CHOICES:
        parser.error(f"--attack must be one of {ATTACK_CHOICES}")
    if args.trojan not in TROJAN_CHOICES:
        parser.error(f"--trojan must be one of {TROJAN_CHOICES}")
    if args.return_leg is not None and args.return_leg not in RETURN_LEG_CHOICES:
        parser.error(f"--return-leg must be one of {RETURN_LEG_CHOICES}")
    for name in ("rounds", "seed", "workers"):
        value = getattr(args, name)
        if value is not None and int(value) != value:
            parser.error(f"--{name} must be an integer")
        if value is not None:
            setattr(args, name, int(value))

    sweep = _parse_sweep(str(args.sweep), parser) if args.sweep else None
    if sweep is None and args.rounds is None:
        parser.error("--rounds is required unless --sweep is given")
    if args.workers < 1:
        parser.error("--workers must be >= 1")

    session: Optional[SessionConfig] = None
    echo: Dict[str, object] = {}
    if sweep is not None:
        echo["sweep"] = f"{_fmt_float(sweep.start)}:{_fmt_float(sweep.end)}:{sweep.steps}"
    else:
        attack = None
        return_leg_value = args.return_leg
        if args.attack == "number-preserving":
            if args.theta is None:
                parser.error("--theta is required with the number-preserving attack")
            if return_leg_value is None:
                return_leg_value = "unattack"
            try:
                attack = NumberPreservingParams(
                    theta=args.theta, return_leg=ReturnLeg(return_leg_value)
                )
            except ParameterError as exc:
                parser.error(str(exc))
        elif args.attack == "incoherent":
            if return_leg_value is None:
                return_leg_value = "none"
            if return_leg_value == "general":
                parser.error("the incoherent attack supports --return-leg none or unattack")
            try:
                attack = GeneralIncoherentParams(
                    a0p=args.alpha0p, a1p=args.alpha1p, return_leg=ReturnLeg(return_leg_value)
                )
            except ParameterError as exc:
                parser.error(str(exc))
        elif args.theta is not None:
            parser.error("--theta is only meaningful with the number-preserving attack")

        try:
            session = SessionConfig(
                rounds=args.rounds,
                test_fraction=args.test_fraction,
                bs=BeamsplitterParams.from_transmittance(args.transmittance),
                attack=attack,
                loss_rate=args.loss,
                seed=args.seed,
                trojan_defense=TrojanDefense(args.trojan),
            )
        except (ConfigError, ParameterError, ValueError) as exc:
            parser.error(str(exc))

        echo = {
            "rounds": args.rounds,
            "test-fraction": args.test_fraction,
            "transmittance": args.transmittance,
            "attack": args.attack,
            "loss": args.loss,
            "seed": args.seed,
            "trojan": args.trojan,
        }
        if args.attack == "number-preserving":
            echo["theta"] = args.theta
            echo["return-leg"] = return_leg_value
        elif args.attack == "incoherent":
            echo["alpha0p"] = args.alpha0p
            echo["alpha1p"] = args.alpha1p
            echo["return-leg"] = return_leg_value

    out_dir = Path(args.out or os.environ.get(OUT_DIR_ENV, "scqkd-out"))
    return RunPlan(
        session=session,
        sweep=sweep,
        out_dir=out_dir,
        workers=args.workers,
        min_visibility=args.min_visibility,
        max_error=args.max_error,
        config_echo=echo,
    )


def _counts_payload(stats: SessionStats) -> Dict[str, int]:
    return {
        f"{alice}{bob}/{outcome}": count
        for (alice, bob, outcome), count in sorted(stats.counts.items())
    }


def _write_rounds_csv(path: Path, records: Sequence[RoundRecord]) -> None:
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(ROUNDS_HEADER)
        for r in records:
            writer.writerow(
                [
                    r.index,
                    r.alice_setting.value,
                    r.bob_setting.value,
                    r.outcome.value,
                    "" if r.sifted_bit is None else r.sifted_bit,
                    r.send_time,
                    "" if r.receive_time is None else r.receive_time,
                    r.sent_pol.value,
                    "" if r.bob_basis is None else r.bob_basis,
                    "" if r.bob_result is None else r.bob_result.value,
                ]
            )


def _write_curve_csv(path: Path, curve: analysis.SecurityCurve) -> None:
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(CURVE_HEADER)
        for p in curve.points:
            writer.writerow(
                [
                    _fmt_float(p.theta),
                    _fmt_float(p.visibility),
                    _fmt_float(p.error_rate),
                    _fmt_float(p.eve_info),
                    _fmt_float(p.bob_info),
                    _fmt_float(p.key_rate),
                ]
            )


def _verdict(stats: SessionStats, min_visibility: float, max_error: float) -> Tuple[str, str]:
    if stats.visibility is None or stats.error_rate is None:
        return "ABORT", "insufficient data to estimate visibility or error rate"
    if stats.visibility < min_visibility:
        return "ABORT", (
            f"visibility {_fmt_float(stats.visibility)} below floor {_fmt_float(min_visibility)}"
        )
    if stats.error_rate > max_error:
        return "ABORT", (
            f"error rate {_fmt_float(stats.error_rate)} above ceiling {_fmt_float(max_error)}"
        )
    return "ACCEPT", (
        f"visibility {_fmt_float(stats.visibility)} and error rate "
        f"{_fmt_float(stats.error_rate)} within thresholds"
    )


def run(plan: RunPlan) -> Tuple[RunManifest, int]:
    """Execute the plan, write all outputs, and return (manifest, exit code)."""
    started = time.time()
    plan.out_dir.mkdir(parents=True, exist_ok=True)
    outputs: List[str] = []
    exit_code = EXIT_ACCEPT

    if plan.sweep is not None:
        grid = np.linspace(plan.sweep.start, plan.sweep.end, plan.sweep.steps)
        curve = analysis.sweep(float(t) for t in grid)
        curve_path = plan.out_dir / CURVE_FILE
        _write_curve_csv(curve_path, curve)
        outputs.append(CURVE_FILE)
        print(f"sweep: wrote {plan.sweep.steps} points to {curve_path}")
        seed = None
    else:
        cfg = plan.session
        records, stats = run_session(cfg, workers=plan.workers)
        max_error = plan.max_error
        if max_error is None:
            _, max_error = analysis.security_threshold()
        verdict, reason = _verdict(stats, plan.min_visibility, max_error)
        if verdict == "ABORT":
            exit_code = EXIT_ABORT

        summary = {
            "config": plan.config_echo,
            "counts": _counts_payload(stats),
            "estimators": {
                "visibility": stats.visibility,
                "error_rate": stats.error_rate,
                "multi_count_rate": stats.multi_count_rate,
                "loss_rate": stats.loss_rate,
                "detection_rate": stats.detection_rate,
                "eve_information": stats.eve_information,
                "key_rate": stats.key_rate,
                "key_bits": stats.key_bits,
                "eve_sifted_d1": stats.eve_sifted_d1,
                "eve_conclusive": stats.eve_conclusive,
                "eve_correct": stats.eve_correct,
            },
            "thresholds": {
                "min_visibility": plan.min_visibility,
                "max_error": max_error,
            },
            "verdict": verdict,
        }
        _write_json(plan.out_dir / SUMMARY_FILE, summary)
        outputs.append(SUMMARY_FILE)
        _write_rounds_csv(plan.out_dir / ROUNDS_FILE, records)
        outputs.append(ROUNDS_FILE)
        print(f"verdict: {verdict} ({reason})")
        seed = cfg.seed

    manifest = RunManifest(
        config_echo=plan.config_echo,
        artifact_version=ARTIFACT_VERSION,
        seed=seed,
        wall_time_s=time.time() - started,
        outputs=outputs,
    )
    _write_json(
        plan.out_dir / MANIFEST_FILE,
        {
            "config": manifest.config_echo,
            "artifact_version": manifest.artifact_version,
            "seed": manifest.seed,
            "wall_time_s": manifest.wall_time_s,
            "outputs": manifest.outputs,
        },
    )
    return manifest, exit_code


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        plan = parse_config(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems; keep 2 for the abort verdict
        return EXIT_ACCEPT if exc.code in (0, None) else EXIT_ERROR
    try:
        _, exit_code = run(plan)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return exit_code


if __name__ == "__main__":
    sys.exit(main())
