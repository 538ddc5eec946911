"""
Assembly of cells and paths into a conduction network.

Loads and saves heart files, validates them, resolves per-node cell
parameters, and expands arrhythmia scenarios into pure transformations of a
HeartConfig. Also builds the small demonstration networks (two cells, three
cells with summation, the four-cell AV-node ring).
"""
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

from heartsim.cell import CellParams, cell_params_preset, estimate_apd_ms, params_from_overrides
from heartsim.config import config as app_config
from heartsim.models import (
    SCHEMA_VERSION,
    CouplingMode,
    Diagnostic,
    HeartConfig,
    NodeSpec,
    PathSpec,
    Region,
    Severity,
    Stimulus,
)
from heartsim.path import PathParams, delay_steps

logger = logging.getLogger(__name__)


class ConfigValidationError(ValueError):
    """Raised when a config with error diagnostics is about to be simulated."""

    def __init__(self, diagnostics: Sequence[Diagnostic]):
        self.diagnostics = list(diagnostics)
        errors = [d for d in self.diagnostics if d.severity is Severity.ERROR]
        summary = "; ".join(str(d) for d in errors[:5])
        super().__init__(f"{len(errors)} configuration error(s): {summary}")


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------

_PATH_FIELDS = {f.name for f in fields(PathParams)}


def heart_to_dict(cfg: HeartConfig) -> Dict[str, Any]:
    """Fully resolved, JSON-ready form of a config (no defaults blocks)."""
    return {
        "schema_version": cfg.schema_version,
        "name": cfg.name,
        "cell_preset": cfg.cell_preset.value,
        "coupling_mode": cfg.coupling_mode.value,
        "a_m": cfg.a_m,
        "c_m": cfg.c_m,
        "sa_node": cfg.sa_node,
        "sa_cycle_ms": cfg.sa_cycle_ms,
        "region_overrides": {k: dict(v) for k, v in cfg.region_overrides.items()},
        "nodes": [
            {
                "id": n.id,
                "region": n.region.value,
                "cell_overrides": dict(n.cell_overrides),
                "distance_coeff": n.distance_coeff,
            }
            for n in cfg.nodes
        ],
        "paths": [{"from": p.a, "to": p.b, **asdict(p.params)} for p in cfg.paths],
        "stimuli": [asdict(s) for s in cfg.stimuli],
    }


def heart_from_dict(data: Mapping[str, Any]) -> HeartConfig:
    """
    Build a HeartConfig from its dictionary form.

    Optional `node_defaults` and `path_defaults` blocks are merged under
    every node and path entry.

    Raises:
        ValueError: On missing fields, unknown keys or invalid values
    """
    try:
        version = data.get("schema_version", SCHEMA_VERSION)
        node_defaults = dict(data.get("node_defaults", {}))
        path_defaults = dict(data.get("path_defaults", {}))

        nodes = []
        for entry in data["nodes"]:
            merged = {**node_defaults, **entry}
            nodes.append(NodeSpec(
                id=merged["id"],
                region=merged["region"],
                cell_overrides=dict(merged.get("cell_overrides") or {}),
                distance_coeff=merged.get("distance_coeff"),
            ))

        paths = []
        for entry in data["paths"]:
            merged = {**path_defaults, **entry}
            a, b = merged.pop("from"), merged.pop("to")
            unknown = set(merged) - _PATH_FIELDS
            if unknown:
                raise ValueError(f"Unknown path field(s) {sorted(unknown)} on path {a}-{b}")
            paths.append(PathSpec(a, b, PathParams(**merged)))

        stimuli = [Stimulus(**entry) for entry in data.get("stimuli", [])]

        return HeartConfig(
            name=data.get("name", "unnamed"),
            nodes=tuple(nodes),
            paths=tuple(paths),
            stimuli=tuple(stimuli),
            cell_preset=data.get("cell_preset", "uoa"),
            coupling_mode=data.get("coupling_mode", CouplingMode.UOA_H_K.value),
            a_m=float(data.get("a_m", 1.0)),
            c_m=float(data.get("c_m", 1.0)),
            sa_node=data.get("sa_node", "SA"),
            sa_cycle_ms=data.get("sa_cycle_ms"),
            region_overrides={k: dict(v) for k, v in data.get("region_overrides", {}).items()},
            schema_version=version,
        )
    except KeyError as e:
        raise ValueError(f"Missing field {e} in heart config") from e
    except TypeError as e:
        raise ValueError(f"Malformed heart config: {e}") from e


def load_heart(path: Union[str, Path]) -> HeartConfig:
    """
    Load a heart config from a JSON file.

    Raises:
        ValueError: If the file is missing, not JSON or not a valid config
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ValueError(f"Heart file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ValueError(f"Invalid JSON in {path}: {e}") from e

    try:
        cfg = heart_from_dict(data)
    except ValueError as e:
        raise ValueError(f"{path}: {e}") from e

    logger.info("Loaded heart '%s' from %s (%d nodes, %d paths)", cfg.name, path, len(cfg.nodes), len(cfg.paths))
    return cfg


def canonical_json(data: Any) -> str:
    """Stable JSON text: sorted keys, 2-space indent, trailing newline."""
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def save_heart(cfg: HeartConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(canonical_json(heart_to_dict(cfg)), encoding="utf-8", newline="\n")


def config_hash(cfg: HeartConfig) -> str:
    payload = json.dumps(heart_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def default_heart() -> HeartConfig:
    """The shipped 33-node conduction system."""
    return load_heart(app_config.data.heart_file)


# ---------------------------------------------------------------------------
# Parameter resolution and stimulus schedule
# ---------------------------------------------------------------------------

def resolve_cell_params(cfg: HeartConfig, node_id: str) -> CellParams:
    """Preset, then region overrides, then the node's own overrides."""
    node = cfg.node(node_id)
    params = cell_params_preset(cfg.cell_preset)
    params = params_from_overrides(params, cfg.region_overrides.get(node.region.value, {}))
    return params_from_overrides(params, node.cell_overrides)


def stimulus_schedule(cfg: HeartConfig, duration_ms: float) -> List[Stimulus]:
    """
    Explicit stimuli plus SA auto-pacing, sorted by time.

    With sa_cycle_ms set, the SA node is re-stimulated every cycle after its
    first stimulus (10 ms when the schedule has none) until duration_ms.
    """
    stimuli = list(cfg.stimuli)
    if cfg.sa_cycle_ms and cfg.sa_node:
        sa = sorted((s for s in stimuli if s.node_id == cfg.sa_node), key=lambda s: s.time_ms)
        first = sa[0] if sa else Stimulus(cfg.sa_node, 10.0)
        if not sa:
            stimuli.append(first)
        explicit = {s.time_ms for s in sa}
        k = 1
        while first.time_ms + k * cfg.sa_cycle_ms < duration_ms:
            t = first.time_ms + k * cfg.sa_cycle_ms
            if t not in explicit:
                stimuli.append(replace(first, time_ms=t))
            k += 1
    return sorted(stimuli, key=lambda s: (s.time_ms, s.node_id))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _error(code: str, message: str) -> Diagnostic:
    return Diagnostic(Severity.ERROR, code, message)


def _warning(code: str, message: str) -> Diagnostic:
    return Diagnostic(Severity.WARNING, code, message)


def validate_config(cfg: HeartConfig, dt_ms: Optional[float] = None) -> List[Diagnostic]:
    """
    Check a config for structural problems.

    Args:
        cfg: config to check
        dt_ms: simulation step; when given, conduction times that are not
            whole multiples of it are reported with their rounded value

    Returns:
        Diagnostics in a stable order; an empty list means a clean config
    """
    diags: List[Diagnostic] = []

    ids = [n.id for n in cfg.nodes]
    seen = set()
    for node_id in ids:
        if node_id in seen:
            diags.append(_error("duplicate-node", f"Node id '{node_id}' appears more than once"))
        seen.add(node_id)

    if cfg.a_m <= 0 or cfg.c_m <= 0:
        diags.append(_error("membrane-constants", f"a_m and c_m must be positive (a_m={cfg.a_m}, c_m={cfg.c_m})"))

    for region in cfg.region_overrides:
        if region not in {r.value for r in Region}:
            diags.append(_error("unknown-region", f"Region overrides for unknown region '{region}'"))

    # Cell parameters per node; the APD estimate feeds the delay check below
    apd: Dict[str, float] = {}
    for node in cfg.nodes:
        try:
            apd[node.id] = estimate_apd_ms(resolve_cell_params(cfg, node.id))
        except (ValueError, KeyError) as e:
            diags.append(_error("cell-params", f"Node '{node.id}': {e}"))

    oxford = cfg.coupling_mode is CouplingMode.OXFORD_G_K
    if oxford:
        for node in cfg.nodes:
            if node.distance_coeff is None:
                diags.append(_error("oxford-distance", f"Node '{node.id}' needs distance_coeff in oxford_g_k mode"))

    pairs = set()
    for p in cfg.paths:
        pid = p.id
        for end in (p.a, p.b):
            if end not in seen:
                diags.append(_error("dangling-endpoint", f"Path {pid} references unknown node '{end}'"))
        if p.a == p.b:
            diags.append(_error("self-loop", f"Path {pid} connects a node to itself"))
        pair = frozenset((p.a, p.b))
        if pair in pairs:
            diags.append(_error("duplicate-path", f"Path {pid} duplicates another path between the same nodes"))
        pairs.add(pair)

        prm = p.params
        for name in ("delta_ij", "delta_ji", "gamma_ij", "gamma_ji", "sigma_ij", "sigma_ji"):
            value = getattr(prm, name)
            if not value > 0:
                kind = name.split("_")[0]
                diags.append(_error(f"non-positive-{kind}", f"Path {pid}: {name}={value} must be > 0"))
        for name in ("delta_ignore_i", "delta_ignore_j"):
            if getattr(prm, name) < 0:
                diags.append(_error("negative-ignore", f"Path {pid}: {name} must be >= 0"))
        if prm.refractory_window_ms is not None and not prm.refractory_window_ms > 0:
            diags.append(_error("refractory-window", f"Path {pid}: refractory_window_ms must be > 0"))
        if oxford and (prm.gain_ij is None or prm.gain_ji is None):
            diags.append(_error("oxford-gain", f"Path {pid} needs gain_ij and gain_ji in oxford_g_k mode"))

        # Conduction must be shorter than the action potential it carries
        for src, delta, name in ((p.a, prm.delta_ij, "delta_ij"), (p.b, prm.delta_ji, "delta_ji")):
            if src in apd and delta > 0 and delta >= apd[src]:
                diags.append(_warning(
                    "delta-exceeds-apd",
                    f"Path {pid}: {name}={delta} ms is not shorter than the {src} APD (~{apd[src]:.1f} ms)",
                ))

        if dt_ms is not None:
            for delta, name in ((prm.delta_ij, "delta_ij"), (prm.delta_ji, "delta_ji")):
                if delta <= 0:
                    continue
                steps = delay_steps(delta, dt_ms)
                if not math.isclose(steps * dt_ms, delta, rel_tol=1e-9, abs_tol=1e-12):
                    diags.append(_warning(
                        "delta-rounded",
                        f"Path {pid}: {name}={delta} ms rounded to {steps} steps ({steps * dt_ms:.6g} ms)",
                    ))

    for s in cfg.stimuli:
        if s.node_id not in seen:
            diags.append(_error("stimulus-node", f"Stimulus at {s.time_ms} ms targets unknown node '{s.node_id}'"))

    if cfg.sa_cycle_ms is not None:
        if not cfg.sa_cycle_ms > 0:
            diags.append(_error("sa-cycle", f"sa_cycle_ms must be > 0, got {cfg.sa_cycle_ms}"))
        if cfg.sa_node not in seen:
            diags.append(_error("sa-node", f"Auto-pacing needs sa_node '{cfg.sa_node}' in the network"))

    return diags


def has_errors(diagnostics: Iterable[Diagnostic]) -> bool:
    return any(d.severity is Severity.ERROR for d in diagnostics)


# ---------------------------------------------------------------------------
# Overrides
# ---------------------------------------------------------------------------

_TOP_LEVEL_KEYS = {"name", "cell_preset", "coupling_mode", "a_m", "c_m", "sa_node", "sa_cycle_ms"}


def _find_path(cfg: HeartConfig, path_id: str) -> int:
    for idx, p in enumerate(cfg.paths):
        if p.id == path_id:
            return idx
    raise ValueError(f"Unknown path '{path_id}'")


def apply_overrides(cfg: HeartConfig, overrides: Mapping[str, Any]) -> HeartConfig:
    """
    Apply user overrides on top of a (scenario-expanded) config.

    Keys:
        node.<ID>.<param>         cell parameter or distance_coeff of one node
        region.<REGION>.<param>   cell parameter for a whole region
        path.<A>-<B>.<field>      any PathParams field of one path
        name, cell_preset, coupling_mode, a_m, c_m, sa_node, sa_cycle_ms

    Raises:
        ValueError: On unknown keys, nodes or paths
    """
    for key, value in overrides.items():
        head, _, rest = key.partition(".")

        if not rest:
            if key not in _TOP_LEVEL_KEYS:
                raise ValueError(f"Unknown override '{key}'")
            cfg = replace(cfg, **{key: value})
            continue

        target, _, param = rest.rpartition(".")
        if not target or not param:
            raise ValueError(f"Malformed override key '{key}'")

        if head == "node":
            node = cfg.node(target) if target in cfg.node_ids else None
            if node is None:
                raise ValueError(f"Override '{key}' names unknown node '{target}'")
            if param == "distance_coeff":
                new_node = replace(node, distance_coeff=None if value is None else float(value))
            else:
                new_node = replace(node, cell_overrides={**node.cell_overrides, param: value})
            cfg = replace(cfg, nodes=tuple(new_node if n.id == target else n for n in cfg.nodes))
        elif head == "region":
            Region(target)
            regions = {k: dict(v) for k, v in cfg.region_overrides.items()}
            regions.setdefault(target, {})[param] = value
            cfg = replace(cfg, region_overrides=regions)
        elif head == "path":
            idx = _find_path(cfg, target)
            if param not in _PATH_FIELDS:
                raise ValueError(f"Unknown path field '{param}' in override '{key}'")
            old = cfg.paths[idx]
            new_path = replace(old, params=replace(old.params, **{param: value}))
            cfg = replace(cfg, paths=cfg.paths[:idx] + (new_path,) + cfg.paths[idx + 1:])
        else:
            raise ValueError(f"Unknown override '{key}'")

        logger.debug("Override %s = %r", key, value)

    return cfg


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------

class ScenarioName(str, Enum):
    NORMAL = "normal"
    HEART_BLOCK = "heart_block"
    BUNDLE_BRANCH_BLOCK_RIGHT = "bundle_branch_block_right"
    BUNDLE_BRANCH_BLOCK_LEFT = "bundle_branch_block_left"
    LONG_QT = "long_qt"
    VA_CONDUCTION = "va_conduction"
    WPW = "wpw"
    AVNRT = "avnrt"
    BRADYCARDIA = "bradycardia"
    TACHYCARDIA = "tachycardia"


@dataclass(frozen=True)
class Scenario:
    name: ScenarioName
    parameters: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "name", ScenarioName(self.name))


class ScenarioDef(NamedTuple):
    description: str
    category: str
    defaults: Dict[str, Any]
    transform: Callable[[HeartConfig, Dict[str, Any]], HeartConfig]


def _scale_direction(cfg: HeartConfig, src: str, dst: str, sigma_factor: float, delta_factor: float) -> HeartConfig:
    """Scale conductivity and conduction time of the src -> dst direction."""
    paths = []
    for p in cfg.paths:
        prm = p.params
        if (p.a, p.b) == (src, dst):
            prm = replace(prm, sigma_ij=prm.sigma_ij * sigma_factor, delta_ij=prm.delta_ij * delta_factor)
        elif (p.a, p.b) == (dst, src):
            prm = replace(prm, sigma_ji=prm.sigma_ji * sigma_factor, delta_ji=prm.delta_ji * delta_factor)
        paths.append(replace(p, params=prm))
    return replace(cfg, paths=tuple(paths))


def _neighbours(cfg: HeartConfig, node_id: str) -> List[str]:
    out = []
    for p in cfg.paths:
        if p.a == node_id:
            out.append(p.b)
        elif p.b == node_id:
            out.append(p.a)
    return out


def _normal(cfg: HeartConfig, prm: Dict[str, Any]) -> HeartConfig:
    if cfg.sa_node and not any(s.node_id == cfg.sa_node for s in cfg.stimuli):
        cfg = replace(cfg, stimuli=cfg.stimuli + (Stimulus(cfg.sa_node, float(prm["sa_time_ms"])),))
    return cfg


def _heart_block(cfg: HeartConfig, prm: Dict[str, Any]) -> HeartConfig:
    av = prm["node"]
    upstream = {Region.ATRIAL, Region.AV}
    for src in _neighbours(cfg, av):
        if cfg.node(src).region in upstream:
            cfg = _scale_direction(cfg, src, av, prm["sigma_factor"], prm["delta_factor"])
    return cfg


def _bundle_branch_block(cfg: HeartConfig, prm: Dict[str, Any]) -> HeartConfig:
    return _scale_direction(cfg, prm["bundle"], prm["branch"], prm["sigma_factor"], prm["delta_factor"])


def _long_qt(cfg: HeartConfig, prm: Dict[str, Any]) -> HeartConfig:
    region = prm["region"]
    factor = float(prm["alpha3_y_factor"])
    base = cell_params_preset(cfg.cell_preset).rate(3, "y")
    regions = {k: dict(v) for k, v in cfg.region_overrides.items()}
    current = regions.setdefault(region, {})
    current["alpha3_y"] = float(current.get("alpha3_y", base)) * factor

    nodes = []
    for n in cfg.nodes:
        if n.region.value == region and "alpha3_y" in n.cell_overrides:
            n = replace(n, cell_overrides={**n.cell_overrides, "alpha3_y": n.cell_overrides["alpha3_y"] * factor})
        nodes.append(n)
    return replace(cfg, region_overrides=regions, nodes=tuple(nodes))


def _va_conduction(cfg: HeartConfig, prm: Dict[str, Any]) -> HeartConfig:
    stimuli = cfg.stimuli
    if prm["remove_sa_stimuli"]:
        stimuli = tuple(s for s in stimuli if s.node_id != cfg.sa_node)
    return replace(cfg, stimuli=stimuli + (Stimulus(prm["node"], float(prm["time_ms"])),))


def _wpw(cfg: HeartConfig, prm: Dict[str, Any]) -> HeartConfig:
    delta = float(prm["delta_ms"])
    ignore = float(prm["delta_ignore_ms"])
    sigma, gamma, gain = float(prm["sigma"]), float(prm["gamma"]), float(prm["gain"])
    params = PathParams(
        delta_ij=delta, delta_ji=delta,
        delta_ignore_i=ignore, delta_ignore_j=ignore,
        gamma_ij=gamma, gamma_ji=gamma,
        sigma_ij=sigma, sigma_ji=sigma,
        gain_ij=gain, gain_ji=gain,
    )
    return replace(cfg, paths=cfg.paths + (PathSpec(prm["from"], prm["to"], params),))


def _avnrt(cfg: HeartConfig, prm: Dict[str, Any]) -> HeartConfig:
    others = tuple(s for s in cfg.stimuli if s.node_id != cfg.sa_node)
    sa = tuple(Stimulus(cfg.sa_node, float(t)) for t in prm["sa_times_ms"])
    nodes = tuple(
        replace(n, cell_overrides={**n.cell_overrides, "alpha3_y": float(prm["fast_alpha3_y"])})
        if n.id in prm["fast_nodes"] else n
        for n in cfg.nodes
    )
    return replace(cfg, stimuli=others + sa, nodes=nodes)


def _sa_rate(cfg: HeartConfig, prm: Dict[str, Any]) -> HeartConfig:
    return replace(cfg, sa_cycle_ms=float(prm["sa_cycle_ms"]))


SCENARIOS: Dict[ScenarioName, ScenarioDef] = {
    ScenarioName.NORMAL: ScenarioDef(
        "Normal cycle: the SA node fires once at 10 ms",
        "normal rhythm", {"sa_time_ms": 10.0}, _normal),
    ScenarioName.HEART_BLOCK: ScenarioDef(
        "AV block: weak atrial coupling into AV and longer AV conduction",
        "conduction block", {"node": "AV", "sigma_factor": 0.002, "delta_factor": 2.0}, _heart_block),
    ScenarioName.BUNDLE_BRANCH_BLOCK_RIGHT: ScenarioDef(
        "Right bundle branch block: slow, weak conduction from BH into RBB1",
        "conduction block",
        {"bundle": "BH", "branch": "RBB1", "sigma_factor": 0.1, "delta_factor": 1.5}, _bundle_branch_block),
    ScenarioName.BUNDLE_BRANCH_BLOCK_LEFT: ScenarioDef(
        "Left bundle branch block: slow, weak conduction from BH into LBB1",
        "conduction block",
        {"bundle": "BH", "branch": "LBB1", "sigma_factor": 0.1, "delta_factor": 1.5}, _bundle_branch_block),
    ScenarioName.LONG_QT: ScenarioDef(
        "Long QT: slower ventricular repolarisation (smaller alpha3_y)",
        "repolarisation", {"region": "ventricular", "alpha3_y_factor": 0.8}, _long_qt),
    ScenarioName.VA_CONDUCTION: ScenarioDef(
        "Ventriculo-atrial conduction: RV1 fires first and drives the atria backwards",
        "retrograde conduction", {"node": "RV1", "time_ms": 10.0, "remove_sa_stimuli": True}, _va_conduction),
    ScenarioName.WPW: ScenarioDef(
        "Wolff-Parkinson-White: accessory pathway from the left atrium to the left ventricle",
        "accessory pathway",
        {"from": "LA3", "to": "LV4", "delta_ms": 30.0, "delta_ignore_ms": 5.0,
         "sigma": 1.0, "gamma": 1.0, "gain": 1.0}, _wpw),
    ScenarioName.AVNRT: ScenarioDef(
        "AV-node re-entry: early second SA beat with a slowly repolarising fast pathway",
        "re-entry", {"sa_times_ms": [10.0, 220.0], "fast_nodes": ["FP1"], "fast_alpha3_y": 0.016}, _avnrt),
    ScenarioName.BRADYCARDIA: ScenarioDef(
        "Bradycardia: SA node paced slowly",
        "rate disorder", {"sa_cycle_ms": 1500.0}, _sa_rate),
    ScenarioName.TACHYCARDIA: ScenarioDef(
        "Tachycardia: SA node paced fast",
        "rate disorder", {"sa_cycle_ms": 400.0}, _sa_rate),
}


def apply_scenario(cfg: HeartConfig, scenario: Union[Scenario, str]) -> HeartConfig:
    """
    Expand a scenario into a transformed config.

    Scenario parameters not given fall back to the documented defaults.

    Raises:
        ValueError: Unknown scenario name or parameter
    """
    if isinstance(scenario, str):
        try:
            scenario = Scenario(ScenarioName(scenario))
        except ValueError as e:
            raise ValueError(f"Unknown scenario '{scenario}'") from e

    definition = SCENARIOS[scenario.name]
    unknown = set(scenario.parameters) - set(definition.defaults)
    if unknown:
        raise ValueError(f"Unknown parameter(s) {sorted(unknown)} for scenario '{scenario.name.value}'")

    params = {**definition.defaults, **scenario.parameters}
    logger.info("Applying scenario '%s' with %s", scenario.name.value, params)
    return definition.transform(cfg, params)


# ---------------------------------------------------------------------------
# Demonstration networks
# ---------------------------------------------------------------------------

def two_cell_demo(
    delta_ms: float = 30.0,
    stimuli: Sequence[Tuple[str, float]] = (("I", 10.0),),
    block_ij: bool = False,
    block_ji: bool = False,
    coupling_mode: CouplingMode = CouplingMode.UOA_H_K,
    refractory_window_ms: Optional[float] = None,
) -> HeartConfig:
    """Cells I and J joined by one path; direction ij runs from I to J."""
    params = PathParams(
        delta_ij=delta_ms, delta_ji=delta_ms,
        block_ij=block_ij, block_ji=block_ji,
        refractory_window_ms=refractory_window_ms,
        gain_ij=1.0, gain_ji=1.0,
    )
    return HeartConfig(
        name="two_cell",
        nodes=(NodeSpec("I", Region.ATRIAL, distance_coeff=0.0), NodeSpec("J", Region.ATRIAL, distance_coeff=0.0)),
        paths=(PathSpec("I", "J", params),),
        stimuli=tuple(Stimulus(node, float(t)) for node, t in stimuli),
        coupling_mode=coupling_mode,
        sa_node=None,
    )


def three_cell_summation_demo(
    stimuli: Sequence[Tuple[str, float]] = (("I", 10.0), ("J", 260.0), ("I", 610.0), ("J", 610.0)),
    sigma_into_k: float = 0.012,
) -> HeartConfig:
    """
    Cell K fed by I and J over weak paths.

    One neighbour alone cannot lift K over threshold; both together can.
    """
    params = PathParams(delta_ij=20.0, delta_ji=20.0, sigma_ij=sigma_into_k)
    return HeartConfig(
        name="three_cell_summation",
        nodes=tuple(NodeSpec(n, Region.ATRIAL) for n in ("I", "J", "K")),
        paths=(PathSpec("I", "K", params), PathSpec("J", "K", params)),
        stimuli=tuple(Stimulus(node, float(t)) for node, t in stimuli),
        sa_node=None,
    )


def avnrt_four_cell_demo(stimulus_times: Sequence[float] = (10.0, 160.0)) -> HeartConfig:
    """
    Minimal dual-pathway ring around the AV node.

    C1 (entry) reaches C4 (exit) over a fast pathway through C2 and a slow
    pathway through C3. Fast cells repolarise slowly, slow cells quickly.
    A second stimulus at 260 ms conducts normally; one at 160 ms finds C2
    still refractory, travels down the slow pathway and re-enters through C2.
    """
    fast, slow = 20.0, 90.0
    return HeartConfig(
        name="avnrt_four_cell",
        nodes=(
            NodeSpec("C1", Region.AV, {"alpha3_y": 0.045}),
            NodeSpec("C2", Region.AV, {"alpha3_y": 0.021}),
            NodeSpec("C3", Region.AV, {"alpha3_y": 0.045}),
            NodeSpec("C4", Region.AV, {"alpha3_y": 0.045}),
        ),
        paths=(
            PathSpec("C1", "C2", PathParams(fast, fast)),
            PathSpec("C2", "C4", PathParams(fast, fast)),
            PathSpec("C1", "C3", PathParams(slow, slow)),
            PathSpec("C3", "C4", PathParams(slow, slow)),
        ),
        stimuli=tuple(Stimulus("C1", float(t)) for t in stimulus_times),
        sa_node=None,
    )
