"""
Heart Conduction Simulator - Command Line Entry Point

Loads a heart, expands a scenario, runs the simulation and writes CSV traces
with a manifest that reproduces the run. Also drives the single-cell
restitution experiment.

Usage:
    python -m heartsim.main run --scenario normal --duration-ms 1000
    python -m heartsim.main restitution --preset oxford --bcl-start 100 --bcl-end 400 --bcl-step 20
    python -m heartsim.main list-scenarios
"""

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from heartsim import __version__
from heartsim.cell import Variant, cell_params_preset
from heartsim.config import config
from heartsim.engine import (
    Integrator,
    NonFiniteStateError,
    SimSettings,
    activation_frame,
    location_frame,
    path_location_frame,
    restitution_curve,
    restitution_frame,
    simulate,
    trace_frame,
)
from heartsim.models import SCHEMA_VERSION, CouplingMode, HeartConfig, Severity
from heartsim.network import (
    SCENARIOS,
    ConfigValidationError,
    apply_overrides,
    apply_scenario,
    canonical_json,
    config_hash,
    heart_from_dict,
    heart_to_dict,
    load_heart,
    validate_config,
)


# ---------------------------------------------------------------------------
# Logging configuration
# ---------------------------------------------------------------------------

logging.basicConfig(
    level=getattr(logging, config.log_level.upper(), logging.INFO),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    handlers=[
        logging.StreamHandler(sys.stdout),
    ],
)

logger = logging.getLogger(__name__)

TRACE_FILE = "trace.csv"
LOCATIONS_FILE = "locations.csv"
ACTIVATION_FILE = "activation.csv"
PATHS_FILE = "path_locations.csv"
MANIFEST_FILE = "manifest.json"
RESTITUTION_FILE = "restitution.csv"

_COUPLING_FLAGS = {"uoa": CouplingMode.UOA_H_K, "oxford": CouplingMode.OXFORD_G_K}
_PRESET_FLAGS = {
    "uoa": Variant.UOA,
    "stony_brook": Variant.STONY_BROOK_2008,
    "oxford": Variant.OXFORD_VX_ONLY,
}


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def parse_set(values: Sequence[str]) -> Dict[str, Any]:
    """
    Parse repeated KEY=VALUE flags.

    Values are read as JSON where possible (numbers, booleans, null, lists)
    and kept as strings otherwise.
    """
    overrides: Dict[str, Any] = {}
    for item in values:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ValueError(f"Expected KEY=VALUE, got '{item}'")
        try:
            overrides[key] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key] = raw
    return overrides


def write_csv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, float_format=config.output.float_format, lineterminator="\n")


def write_manifest(manifest: Dict[str, Any], path: Path) -> None:
    path.write_text(canonical_json(manifest), encoding="utf-8", newline="\n")


def bcl_range(start: float, end: float, step: float) -> List[float]:
    """Inclusive list of BCLs from start to end; empty when the range is."""
    if step <= 0 or end < start:
        return []
    count = int(math.floor((end - start) / step + 1e-9)) + 1
    return [start + i * step for i in range(count)]


def _log_diagnostics(cfg: HeartConfig, dt_ms: float) -> bool:
    """Log validation results; True when the config has errors."""
    diagnostics = validate_config(cfg, dt_ms)
    errors = [d for d in diagnostics if d.severity is Severity.ERROR]
    for d in diagnostics:
        if d.severity is Severity.ERROR:
            logger.error("%s", d)
        else:
            logger.warning("%s", d)
    logger.info("Validation: %d error(s), %d warning(s)", len(errors), len(diagnostics) - len(errors))
    return bool(errors)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _resolve_run(args: argparse.Namespace) -> Dict[str, Any]:
    """Build the manifest skeleton (config, settings, scenario) for a run."""
    if args.from_manifest:
        with open(args.from_manifest, "r", encoding="utf-8") as f:
            previous = json.load(f)
        return {
            "scenario": previous.get("scenario"),
            "overrides": previous.get("overrides", {}),
            "config": previous["config"],
            "settings": previous["settings"],
        }

    if args.duration_ms is None:
        raise ValueError("--duration-ms is required unless --from-manifest is given")

    cfg = load_heart(args.config or config.data.heart_file)
    if args.scenario:
        cfg = apply_scenario(cfg, args.scenario)

    overrides = parse_set(args.set or [])
    if args.coupling:
        overrides["coupling_mode"] = _COUPLING_FLAGS[args.coupling].value
    cfg = apply_overrides(cfg, overrides)

    settings = SimSettings(
        duration_ms=args.duration_ms,
        dt_ms=args.dt_ms if args.dt_ms is not None else config.simulation.dt_ms,
        record_decimation=args.decimation if args.decimation is not None else config.simulation.decimation,
        integrator=args.integrator or config.simulation.integrator,
        record_paths=args.record_paths,
    )
    return {
        "scenario": args.scenario,
        "overrides": overrides,
        "config": heart_to_dict(cfg),
        "settings": settings.to_dict(),
    }


def cmd_run(args: argparse.Namespace) -> int:
    """Run one simulation and write trace, locations, activation and manifest."""
    logger.info("=" * 70)
    logger.info("Heart simulation run")
    logger.info("=" * 70)
    logger.info("Configuration: %s", config)

    try:
        run = _resolve_run(args)
        cfg = heart_from_dict(run["config"])
        settings = SimSettings(**run["settings"])
    except (ValueError, TypeError, KeyError, OSError) as exc:
        logger.error("Could not prepare run: %s", exc)
        return 1

    logger.info("Network: %r, scenario: %s", cfg, run["scenario"] or "none")
    logger.info("Settings: %s", settings)
    if _log_diagnostics(cfg, settings.dt_ms):
        return 1

    try:
        trace = simulate(cfg, settings)
    except ConfigValidationError as exc:
        logger.error("%s", exc)
        return 1
    except NonFiniteStateError as exc:
        logger.error("Simulation diverged at step %s", exc.step)
        logger.debug("State snapshot: %s", exc.snapshot)
        return 1

    out_dir = Path(args.output) if args.output else config.output.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    outputs = {"trace": TRACE_FILE, "locations": LOCATIONS_FILE, "activation": ACTIVATION_FILE}
    write_csv(trace_frame(trace), out_dir / TRACE_FILE)
    write_csv(location_frame(trace), out_dir / LOCATIONS_FILE)
    write_csv(activation_frame(trace), out_dir / ACTIVATION_FILE)
    if settings.record_paths:
        write_csv(path_location_frame(trace), out_dir / PATHS_FILE)
        outputs["path_locations"] = PATHS_FILE

    manifest = {
        "tool": "heartsim",
        "version": __version__,
        "schema_version": SCHEMA_VERSION,
        "config_hash": config_hash(cfg),
        "outputs": outputs,
        **run,
    }
    write_manifest(manifest, out_dir / MANIFEST_FILE)

    fired = sum(1 for entries in trace.q2_entries.values() if entries)
    logger.info("=" * 70)
    logger.info("Run complete: %d/%d nodes depolarised, outputs in %s", fired, len(trace.node_ids), out_dir)
    logger.info("=" * 70)
    return 0


def cmd_restitution(args: argparse.Namespace) -> int:
    """Sweep basic cycle lengths on an isolated cell and write (BCL, DI, APD)."""
    bcls = bcl_range(args.bcl_start, args.bcl_end, args.bcl_step)
    variant = _PRESET_FLAGS[args.preset]
    protocol = args.protocol or ("first_beat" if variant is Variant.STONY_BROOK_2008 else "steady")

    logger.info("=" * 70)
    logger.info("Restitution sweep: %s, %d BCL(s), %s protocol", variant.value, len(bcls), protocol)
    logger.info("=" * 70)

    try:
        curve = restitution_curve(
            cell_params_preset(variant),
            bcls,
            beats_per_bcl=args.beats,
            protocol=protocol,
            dt_ms=args.dt_ms,
            integrator=args.integrator,
        )
    except ValueError as exc:
        logger.error("Restitution failed: %s", exc)
        return 1

    for bcl, reason in curve.skipped:
        logger.warning("BCL %g ms skipped: %s", bcl, reason)

    out_dir = Path(args.output) if args.output else config.output.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(restitution_frame(curve), out_dir / RESTITUTION_FILE)
    logger.info("Wrote %d point(s) to %s", len(curve.points), out_dir / RESTITUTION_FILE)
    return 0


def cmd_list_scenarios(args: Optional[argparse.Namespace] = None) -> int:
    """Print every scenario with its category and description, sorted by name."""
    for name in sorted(SCENARIOS, key=lambda s: s.value):
        definition = SCENARIOS[name]
        print(f"{name.value:<28} [{definition.category}] {definition.description}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing and entrypoint
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="heartsim",
        description="Hybrid-automata simulation of the cardiac conduction system",
    )
    parser.add_argument(
        "--version", action="version",
        version=f"heartsim {__version__} (schema {SCHEMA_VERSION})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Simulate a heart network")
    run.add_argument("--config", help="Heart JSON file (default: shipped 33-node heart)")
    run.add_argument("--scenario", choices=sorted(s.value for s in SCENARIOS), help="Scenario to apply")
    run.add_argument("--duration-ms", type=float, help="Simulated time in ms")
    run.add_argument("--dt-ms", type=float, help=f"Step size in ms (default {config.simulation.dt_ms})")
    run.add_argument("--decimation", type=int, help="Record every Nth step")
    run.add_argument("--integrator", choices=[i.value for i in Integrator])
    run.add_argument("--coupling", choices=sorted(_COUPLING_FLAGS))
    run.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override, e.g. path.AV-BH.delta_ij=80")
    run.add_argument("--record-paths", action="store_true", help="Also write path automaton locations")
    run.add_argument("--from-manifest", help="Re-run exactly what a manifest.json describes")
    run.add_argument("--output", help="Output directory")
    run.set_defaults(handler=cmd_run)

    rest = sub.add_parser("restitution", help="Restitution curve of an isolated cell")
    rest.add_argument("--preset", choices=sorted(_PRESET_FLAGS), default="uoa")
    rest.add_argument("--bcl-start", type=float, required=True)
    rest.add_argument("--bcl-end", type=float, required=True)
    rest.add_argument("--bcl-step", type=float, required=True)
    rest.add_argument("--beats", type=int, default=10, help="Stimuli per BCL")
    rest.add_argument("--protocol", choices=["steady", "first_beat"])
    rest.add_argument("--dt-ms", type=float, default=0.01)
    rest.add_argument("--integrator", choices=[i.value for i in Integrator], default=Integrator.EXPONENTIAL.value)
    rest.add_argument("--output", help="Output directory")
    rest.set_defaults(handler=cmd_restitution)

    scen = sub.add_parser("list-scenarios", help="List built-in scenarios")
    scen.set_defaults(handler=cmd_list_scenarios)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "restitution" and not bcl_range(args.bcl_start, args.bcl_end, args.bcl_step):
        parser.error("empty BCL range")
    if args.command == "run" and args.duration_ms is None and not args.from_manifest:
        parser.error("--duration-ms is required")

    try:
        return args.handler(args)
    except Exception as exc:  # noqa: BLE001
        logger.exception("Unexpected error: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
