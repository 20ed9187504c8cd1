"""Command-line runner: ``mbirb <command> [options]``.

Exit codes: 0 on success, 2 for configuration or input errors, 3 for
numerical or resource-limit failures.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

from . import __version__
from .designs import ConvergenceError, ensemble_from_pattern, epsilon_bound, frame_potential
from .fit import CI_MC_SAMPLES, FitError, FitResult, estimate_gate_fidelity, fit_decay, fit_report
from .mbqc import DESIGN_IDS, BranchLimitError, FrameUndefined, build_pattern
from .noise import (
    CalibrationError,
    Durations,
    LOCATIONS,
    NoiseLocationError,
    load_calibration,
    noise_model_from_calibration,
    synthetic_noise,
)
from .qcore import NonPhysicalError
from .rb import RbConfig, manifest, manifest_json, plan_runs, points_from_csv, points_to_csv, run_all
from .tomo import run_qpt

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
REFERENCE_EPSILON = {"D5": 0.5, "D6": 0.0}

DEFAULT_CONFIG = {
    "design_id": "D5",
    "gate_id": None,
    "m_values": [1, 2, 3],
    "mode": "adjusted",
    "execution": "auto",
    "shots": 100_000,
    "shots_per_run": 8192,
    "tomography": False,
    "tomography_shots": 8192,
    "project_states": True,
    "tomography_points_target": 500,
    "branch_limit": 2**20,
    "seed": 0,
    "mc_samples": CI_MC_SAMPLES,
    "threads": 1,
    "out": "mbirb-out",
    "noise": {
        "source": "none",
        "lambda": 1.0,
        "after_gate": None,
        "location": "pre_entangle",
        "calibration": "brooklyn",
        "placement": sorted(LOCATIONS),
        "error_convention": "process",
        "cz_ns": 400.0,
        "measure_ns": 300.0,
    },
    "qpt": {
        "gate_id": "H2",
        "shots": 8192,
        "offset": 0,
        "weighted": False,
        "resamples": 0,
        "ideal_output": False,
    },
}


class ConfigError(ValueError):
    """Invalid configuration document or command-line input."""


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where}{key!r} must be an object")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return _merge(DEFAULT_CONFIG, doc)


def effective_config(args) -> dict:
    cfg = load_config(args.config)
    for flag in ("seed", "threads", "out", "mc_samples"):
        value = getattr(args, flag, None)
        if value is not None:
            cfg[flag] = value
    if cfg["seed"] is None:
        raise ConfigError("a seed is required")
    return cfg


def build_noise(spec: dict):
    source = spec["source"]
    if source == "none":
        model = None
        if spec["after_gate"] is not None:
            model = synthetic_noise("none", after_gate=spec["after_gate"])
        return model
    if source == "synthetic":
        return synthetic_noise("depolarizing", spec["lambda"], spec["after_gate"], spec["location"])
    if source == "calibration":
        cal = load_calibration(spec["calibration"])
        model = noise_model_from_calibration(
            cal, Durations(spec["cz_ns"], spec["measure_ns"]), spec["placement"], spec["error_convention"]
        )
        if spec["after_gate"] is not None:
            model = model.with_after_gate_block(synthetic_noise(after_gate=spec["after_gate"]).after_gate_block)
        return model
    raise ConfigError(f"unknown noise source {source!r}; use none, synthetic or calibration")


def rb_config(cfg: dict) -> RbConfig:
    try:
        return RbConfig(
            design_id=cfg["design_id"], gate_id=cfg["gate_id"], m_values=tuple(cfg["m_values"]),
            mode=cfg["mode"], execution=cfg["execution"], shots=int(cfg["shots"]),
            shots_per_run=int(cfg["shots_per_run"]), seed=int(cfg["seed"]), noise=build_noise(cfg["noise"]),
            tomography=bool(cfg["tomography"]), tomography_shots=int(cfg["tomography_shots"]),
            project_states=bool(cfg["project_states"]),
            tomography_points_target=int(cfg["tomography_points_target"]),
            branch_limit=int(cfg["branch_limit"]),
        )
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"bad config value: {exc}") from None


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def cmd_simulate(args, cfg: dict) -> int:
    rc = rb_config(cfg)
    points = run_all(rc, threads=int(cfg["threads"]))
    out = _out_dir(cfg)
    csv_text = points_to_csv(points)
    (out / "points.csv").write_text(csv_text)
    doc = manifest(rc, points, {"noise": cfg["noise"], "version": __version__})
    (out / "manifest.json").write_text(manifest_json(doc))
    _emit(csv_text)
    return EXIT_OK


def _fits_from_points(points, mc_samples: int, seed: int, threads: int) -> dict[str, FitResult]:
    fits = {}
    for kind in ("reference", "interleaved"):
        rows = [(p.m, p.F, p.sigma) for p in points if p.kind == kind]
        if rows:
            fits[kind] = fit_decay(rows, mc_samples, seed, threads)
    if not fits:
        raise ConfigError("points file has no rows")
    return fits


def cmd_fit(args, cfg: dict) -> int:
    try:
        points = points_from_csv(Path(args.points).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {args.points}: {exc}") from None
    for kind in {p.kind for p in points}:
        if sum(p.kind == kind for p in points) < 3:
            raise ConfigError(f"need at least 3 {kind} rows to fit")
    mc, seed = int(cfg["mc_samples"]), int(cfg["seed"])
    fits = _fits_from_points(points, mc, seed, int(cfg["threads"]))
    est = None
    if "reference" in fits and "interleaved" in fits:
        est = estimate_gate_fidelity(fits["reference"], fits["interleaved"], mc, seed)
    text = fit_report(fits, est, mc, seed)
    (_out_dir(cfg) / "fit.json").write_text(text)
    _emit(text)
    return EXIT_OK


def _fit_from_json(doc: dict, kind: str) -> FitResult:
    try:
        f = doc["fits"][kind]
        return FitResult(f["A"], f["sigma_A"], f["p"], f["sigma_p"], f["B"], f["sigma_B"], f["samples_used"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"fit report lacks {kind} fit field {exc}") from None


def cmd_estimate(args, cfg: dict) -> int:
    if args.fit_report:
        try:
            doc = json.loads(Path(args.fit_report).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read fit report {args.fit_report}: {exc}") from None
        ref, inter = _fit_from_json(doc, "reference"), _fit_from_json(doc, "interleaved")
    elif args.p_ref is not None and args.p_int is not None:
        ref = FitResult(0.0, 0.0, args.p_ref[0], args.p_ref[1], 0.0, 0.0, 1)
        inter = FitResult(0.0, 0.0, args.p_int[0], args.p_int[1], 0.0, 0.0, 1)
    else:
        raise ConfigError("give a fit report or both --p-ref and --p-int")
    est = estimate_gate_fidelity(ref, inter, int(cfg["mc_samples"]), int(cfg["seed"]))
    text = json.dumps(est.to_dict(), indent=2, sort_keys=True) + "\n"
    (_out_dir(cfg) / "estimate.json").write_text(text)
    _emit(text)
    return EXIT_OK


def cmd_qpt(args, cfg: dict) -> int:
    q = cfg["qpt"]
    gate_id = args.gate or q["gate_id"]
    try:
        pattern = build_pattern(gate_id)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if pattern.is_design:
        raise ConfigError(f"{gate_id} is a design block, not a gate")
    shots = args.shots if args.shots is not None else q["shots"]
    offset = args.offset if args.offset is not None else q["offset"]
    report = run_qpt(
        pattern, build_noise(cfg["noise"]), None if shots in (None, 0) else int(shots),
        int(cfg["seed"]), int(offset), bool(q["weighted"]), int(q["resamples"]),
        bool(q["ideal_output"]),
    )
    text = report.to_json() + "\n"
    (_out_dir(cfg) / f"qpt_{gate_id}.json").write_text(text)
    _emit(text)
    return EXIT_OK


def cmd_verify_design(args, cfg: dict) -> int:
    design_id = args.design_id
    if design_id not in DESIGN_IDS:
        raise ConfigError(f"unknown design {design_id!r}; known: {list(DESIGN_IDS)}")
    e = ensemble_from_pattern(build_pattern(design_id))
    doc = {
        "design_id": design_id,
        "ensemble_size": len(e),
        "frame_potential": frame_potential(e),
        "epsilon_bound": epsilon_bound(e),
        "reference_epsilon": REFERENCE_EPSILON[design_id],
    }
    _emit(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_plan(args, cfg: dict) -> int:
    _emit(str(plan_runs(args.n, args.shots, args.target)))
    return EXIT_OK


def _common(suppress: bool = False) -> argparse.ArgumentParser:
    # subcommands repeat the global flags; SUPPRESS keeps them from
    # resetting values given before the subcommand name
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS if suppress else None)
    p.add_argument("--config", metavar="PATH", help="JSON configuration document")
    p.add_argument("--seed", type=int, help="root seed (overrides config)")
    p.add_argument("--threads", type=int, help="worker cap")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--mc-samples", dest="mc_samples", type=int, help="Monte Carlo draws for fits")
    p.add_argument("--print-config", action="store_true", help="print the effective configuration and exit")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mbirb", description=__doc__.splitlines()[0], parents=[_common()])
    common = _common(suppress=True)
    parser.add_argument("--version", action="version", version=f"mbirb {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run reference/interleaved experiments")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", parents=[common], help="fit sequence fidelities from a points CSV")
    s.add_argument("points", help="CSV written by 'simulate'")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("estimate", parents=[common], help="gate fidelity from two decay rates")
    s.add_argument("fit_report", nargs="?", help="JSON written by 'fit'")
    s.add_argument("--p-ref", nargs=2, type=float, metavar=("P", "SIGMA"))
    s.add_argument("--p-int", nargs=2, type=float, metavar=("P", "SIGMA"))
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("qpt", parents=[common], help="process tomography of a gate pattern")
    s.add_argument("--gate", help="gate id, e.g. H2 or T3")
    s.add_argument("--shots", type=int, help="shots per basis; 0 for exact expectations")
    s.add_argument("--offset", type=int, help="chain position of the gate's input qubit")
    s.set_defaults(func=cmd_qpt)

    s = sub.add_parser("verify-design", parents=[common], help="certify a design ensemble")
    s.add_argument("design_id", help="D5 or D6")
    s.set_defaults(func=cmd_verify_design)

    s = sub.add_parser("plan", parents=[common], help="runs needed for tomography on all outcomes")
    s.add_argument("n", type=int, help="number of measured qubits")
    s.add_argument("shots", type=int, help="shots per run")
    s.add_argument("target", type=int, help="tomography points per basis and outcome string")
    s.set_defaults(func=cmd_plan)
    return parser


_CONFIG_ERRORS = (ConfigError, CalibrationError, NoiseLocationError, ValueError, KeyError, TypeError)
_NUMERICAL_ERRORS = (
    BranchLimitError, FitError, OverflowError, NonPhysicalError, FrameUndefined,
    ConvergenceError, ArithmeticError, RuntimeError, MemoryError,
)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = effective_config(args)
        if args.print_config:
            _emit(json.dumps(cfg, indent=2, sort_keys=True))
            return EXIT_OK
        return args.func(args, cfg)
    # numerical failures first: several of them subclass ValueError
    except _NUMERICAL_ERRORS as exc:
        print(f"mbirb: error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except _CONFIG_ERRORS as exc:
        print(f"mbirb: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
