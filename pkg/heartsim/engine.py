"""
Fixed-step simulation of a heart network.

Every step reads the delayed node history, evaluates relays and coupling,
integrates the cell flows with inputs held constant, applies the cell
transitions, advances the path automata and records. A path automaton is
only stepped when one of its cells changes location or its timer runs out.
The loop is single-threaded and uses fixed-order numpy reductions, so
identical inputs give bit-identical traces.
"""
import logging
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from functools import partial
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd

from heartsim.cell import Beat, CellBank, CellParams, excited_durations, measure_apd_di, params_to_overrides
from heartsim.models import CouplingMode, HeartConfig, NodeSpec, Region, Stimulus
from heartsim.network import (
    ConfigValidationError,
    config_hash,
    has_errors,
    resolve_cell_params,
    stimulus_schedule,
    validate_config,
)
from heartsim.path import (
    NO_EVENTS,
    DelayLine,
    Endpoint,
    PathState,
    TALocation,
    coupling_terms,
    delay_steps,
    location_timer_ms,
    path_ta_step,
    relay_step,
)

logger = logging.getLogger(__name__)


class Integrator(str, Enum):
    RK4 = "rk4"
    EULER = "euler"
    EXPONENTIAL = "exponential"


class NonFiniteStateError(RuntimeError):
    """The continuous state left the finite range."""

    def __init__(self, step: Optional[int], snapshot: Dict[str, Any]):
        self.step = step
        self.snapshot = snapshot
        where = f"at step {step}" if step is not None else "in integration"
        super().__init__(f"Non-finite state {where}: {snapshot}")


# ---------------------------------------------------------------------------
# Settings and results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimSettings:
    duration_ms: float
    dt_ms: float = 0.0005
    record_decimation: int = 1
    integrator: Integrator = Integrator.RK4
    record_paths: bool = False

    def __post_init__(self):
        object.__setattr__(self, "integrator", Integrator(self.integrator))
        if not self.dt_ms > 0:
            raise ValueError(f"dt_ms must be positive, got {self.dt_ms}")
        if not self.duration_ms > 0:
            raise ValueError(f"duration_ms must be positive, got {self.duration_ms}")
        if isinstance(self.record_decimation, bool) or not isinstance(self.record_decimation, int):
            raise TypeError(f"record_decimation must be an int, got {self.record_decimation!r}")
        if self.record_decimation < 1:
            raise ValueError(f"record_decimation must be >= 1, got {self.record_decimation}")

    @property
    def steps(self) -> int:
        return int(round(self.duration_ms / self.dt_ms))

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["integrator"] = self.integrator.value
        return data


class RelayEvent(NamedTuple):
    time_ms: float
    path_id: str
    direction: str  # "ij" or "ji"; empty for annihilations
    kind: str  # "start" or "annihilate"


@dataclass
class Trace:
    """
    Recorded run of one network.

    potentials and locations are shaped (samples, nodes); path_locations is
    (samples, paths) when path recording was requested. q2_entries holds
    every upstroke time per node at full step resolution.
    """
    times: np.ndarray
    node_ids: Tuple[str, ...]
    potentials: np.ndarray
    locations: np.ndarray
    path_ids: Tuple[str, ...] = ()
    path_locations: Optional[np.ndarray] = None
    q2_entries: Dict[str, List[float]] = field(default_factory=dict)
    relay_events: List[RelayEvent] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def column(self, node_id: str) -> int:
        try:
            return self.node_ids.index(node_id)
        except ValueError as e:
            raise KeyError(f"Node '{node_id}' not in trace") from e


class Activation(NamedTuple):
    node_id: str
    first_q2_entry_ms: Optional[float]
    q2_entry_count: int


@dataclass
class RestitutionCurve:
    points: List[Tuple[float, float, float]] = field(default_factory=list)  # (bcl, di, apd)
    skipped: List[Tuple[float, str]] = field(default_factory=list)

    def pairs(self) -> List[Tuple[float, float]]:
        """(di_ms, apd_ms) pairs in BCL order."""
        return [(di, apd) for _, di, apd in self.points]


# ---------------------------------------------------------------------------
# Integration
# ---------------------------------------------------------------------------

def integrate_step(
    y: np.ndarray,
    flow: Callable[[np.ndarray], np.ndarray],
    dt_ms: float,
    method: Integrator = Integrator.RK4,
) -> np.ndarray:
    """
    Advance y by one step of an explicit scheme.

    Args:
        y: current state
        flow: time derivative of the state; inputs are frozen inside it
        dt_ms: step size
        method: rk4 or euler

    Returns:
        New state array

    Raises:
        NonFiniteStateError: If the result contains NaN or inf
        ValueError: For the exponential method, which needs linear flow terms
    """
    method = Integrator(method)
    y = np.asarray(y, dtype=np.float64)

    if method is Integrator.EULER:
        out = y + dt_ms * flow(y)
    elif method is Integrator.RK4:
        k1 = flow(y)
        k2 = flow(y + 0.5 * dt_ms * k1)
        k3 = flow(y + 0.5 * dt_ms * k2)
        k4 = flow(y + dt_ms * k3)
        out = y + dt_ms / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    else:
        raise ValueError("The exponential integrator needs linear flow terms, use integrate_linear_step")

    if not np.all(np.isfinite(out)):
        raise NonFiniteStateError(None, {"before": y.tolist(), "after": out.tolist()})
    return out


# One step grows a variable by at most e^20; faster rates saturate
MAX_STEP_EXPONENT = 20.0


def linear_step_factors(
    rate: np.ndarray,
    dt_ms: float,
    method: Integrator = Integrator.RK4,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Factors of one step of y' = rate * y + drive, elementwise.

    The step is y_next = growth * y + forced * drive. For rk4 and euler this
    is the update integrate_step computes, written as a polynomial in
    rate * dt; the exponential method is exact. Rates above
    MAX_STEP_EXPONENT / dt_ms are clipped to it.

    Returns:
        (growth, forced) shaped like rate
    """
    method = Integrator(method)
    rate = np.minimum(np.asarray(rate, dtype=np.float64), MAX_STEP_EXPONENT / dt_ms)
    z = rate * dt_ms
    if method is Integrator.RK4:
        poly = 1.0 + z / 2.0 + z * z / 6.0 + z * z * z / 24.0
        return 1.0 + z * poly, dt_ms * poly
    if method is Integrator.EULER:
        return 1.0 + z, np.full_like(z, dt_ms)
    safe_rate = np.where(rate != 0.0, rate, 1.0)
    return np.exp(z), np.where(rate != 0.0, np.expm1(z) / safe_rate, dt_ms)


def integrate_linear_step(
    y: np.ndarray,
    rate: np.ndarray,
    drive: np.ndarray,
    dt_ms: float,
    method: Integrator = Integrator.RK4,
) -> np.ndarray:
    """
    Advance y' = rate * y + drive (elementwise) by one step.

    Finiteness is left to the caller.
    """
    growth, forced = linear_step_factors(rate, dt_ms, method)
    return growth * np.asarray(y, dtype=np.float64) + forced * drive


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

class _Directions:
    """Both directions of every path flattened into parallel arrays."""

    def __init__(self, cfg: HeartConfig, index: Dict[str, int], dt_ms: float):
        src, dst, delay, gamma, sigma, gain = [], [], [], [], [], []
        for p in cfg.paths:
            prm = p.params
            for a, b, d, g, s, k in (
                (p.a, p.b, prm.delta_ij, prm.gamma_ij, prm.sigma_ij, prm.gain_ij),
                (p.b, p.a, prm.delta_ji, prm.gamma_ji, prm.sigma_ji, prm.gain_ji),
            ):
                src.append(index[a])
                dst.append(index[b])
                delay.append(delay_steps(d, dt_ms))
                gamma.append(g)
                sigma.append(s)
                gain.append(0.0 if k is None else k)

        self.src = np.array(src, dtype=np.int64)
        self.dst = np.array(dst, dtype=np.int64)
        self.delay = np.array(delay, dtype=np.int64)
        self.gamma = np.array(gamma, dtype=np.float64)
        self.sigma = np.array(sigma, dtype=np.float64)
        self.gain = np.array(gain, dtype=np.float64)
        self.max_delay = int(self.delay.max()) if self.delay.size else 0


def _stimulus_changes(stimuli: Sequence[Stimulus], index: Dict[str, int], dt_ms: float):
    """Step index -> list of (node, amplitude delta) at which stimulus input changes."""
    changes: Dict[int, List[Tuple[int, float]]] = defaultdict(list)
    for s in stimuli:
        start = int(round(s.time_ms / dt_ms))
        end = start + max(1, int(round(s.duration_ms / dt_ms)))
        changes[start].append((index[s.node_id], s.amplitude_mv))
        changes[end].append((index[s.node_id], -s.amplitude_mv))
    return changes


def simulate(config: HeartConfig, settings: SimSettings) -> Trace:
    """
    Run a network for settings.duration_ms.

    Args:
        config: network to simulate
        settings: grid, recording and integrator choices

    Returns:
        Trace with the initial state at t=0 and every record_decimation-th step

    Raises:
        ConfigValidationError: If validate_config reports errors
        NonFiniteStateError: If a cell state leaves the finite range
    """
    diagnostics = validate_config(config, settings.dt_ms)
    if has_errors(diagnostics):
        raise ConfigValidationError(diagnostics)
    for d in diagnostics:
        logger.warning("%s", d)

    dt = settings.dt_ms
    n_steps = settings.steps
    dec = settings.record_decimation
    node_ids = config.node_ids
    index = {node_id: i for i, node_id in enumerate(node_ids)}
    n = len(node_ids)

    bank = CellBank([resolve_cell_params(config, node_id) for node_id in node_ids])
    bank.bind_step(partial(linear_step_factors, dt_ms=dt, method=settings.integrator))
    dirs = _Directions(config, index, dt)
    history = DelayLine(n, dirs.max_delay)
    relay_active = np.zeros(dirs.src.size, dtype=bool)

    # Path automata are stepped when an endpoint moves or their timer runs out
    paths = config.paths
    path_ids = tuple(p.id for p in paths)
    ta_states = [PathState() for _ in paths]
    entered_at = [0] * len(paths)  # step at which each automaton entered its location
    wake: Dict[int, Set[int]] = defaultdict(set)
    incident: Dict[int, List[int]] = defaultdict(list)
    for m, p in enumerate(paths):
        incident[index[p.a]].append(m)
        incident[index[p.b]].append(m)

    oxford = config.coupling_mode is CouplingMode.OXFORD_G_K
    distance = np.array([n_.distance_coeff or 0.0 for n_ in config.nodes], dtype=np.float64)
    a_m, c_m = config.a_m, config.c_m

    schedule = stimulus_schedule(config, settings.duration_ms)
    changes = _stimulus_changes(schedule, index, dt)
    stim_input = np.zeros(n)
    no_entries = np.zeros(n, dtype=bool)

    n_samples = n_steps // dec + 1
    potentials = np.empty((n_samples, n))
    locations = np.empty((n_samples, n), dtype=np.int8)
    path_locations = np.empty((n_samples, len(paths)), dtype=np.int8) if settings.record_paths else None
    q2_entries: Dict[str, List[float]] = {node_id: [] for node_id in node_ids}
    relay_events: List[RelayEvent] = []

    def record(sample: int, pot: np.ndarray) -> None:
        potentials[sample] = pot
        locations[sample] = bank.location
        if path_locations is not None:
            path_locations[sample] = [int(s.ta_location) for s in ta_states]

    potential = bank.potential()
    history.push(potential, bank.location)
    record(0, potential)

    logger.info(
        "Simulating '%s': %d nodes, %d paths, %d stimuli, %d steps of %g ms (%s)",
        config.name, n, len(paths), len(schedule), n_steps, dt, settings.integrator.value,
    )
    started = time.perf_counter()

    for k in range(n_steps):
        now = (k + 1) * dt

        if k in changes:
            for node, amp in changes[k]:
                stim_input[node] += amp

        # Delayed samples, relays and coupling
        if oxford:
            delayed_v, _ = history.read(dirs.delay, dirs.src)
            g = np.bincount(dirs.dst, weights=delayed_v * dirs.gain, minlength=n) - potential * distance
            v_in = g + stim_input
        elif relay_active.any():
            act = np.flatnonzero(relay_active)
            dst = dirs.dst[act]
            delayed_v, delayed_loc = history.read(dirs.delay[act], dirs.src[act])
            keep, v_out = relay_step(True, delayed_v, delayed_loc, potential[dst], bank.location[dst])
            relay_active[act] = keep
            terms = coupling_terms(dirs.gamma[act], dirs.sigma[act], v_out, potential[dst], a_m, c_m)
            v_in = np.bincount(dst, weights=terms, minlength=n) + stim_input
        else:
            v_in = stim_input

        # Continuous flow
        bank.advance(v_in)
        potential = bank.potential()
        if not np.isfinite(potential).all():
            bad = np.flatnonzero(~np.isfinite(bank.v).all(axis=1))
            snapshot = {node_ids[i]: {**asdict(bank.state(i)), "location": int(bank.location[i])} for i in bad}
            raise NonFiniteStateError(k, snapshot)

        # Discrete transitions
        moved = bank.discrete_step(v_in, now, potential)
        candidates = wake.pop(k, set())
        entered = no_entries
        if moved is not None:
            entered = moved.entered_q2
            for i in np.flatnonzero(entered):
                q2_entries[node_ids[i]].append(now)
            for i in np.flatnonzero(moved.changed):
                candidates.update(incident[i])

        # Path automata
        if candidates:
            # Refractory times are only consulted at an upstroke
            refractory = bank.refractory_ms(now) if entered is not no_entries else None
            loc = bank.location
            for m in sorted(candidates):
                p = paths[m]
                ia, ib = index[p.a], index[p.b]
                end_i = Endpoint(int(loc[ia]), bool(entered[ia]), 0.0 if refractory is None else float(refractory[ia]))
                end_j = Endpoint(int(loc[ib]), bool(entered[ib]), 0.0 if refractory is None else float(refractory[ib]))
                state = ta_states[m]
                if state.ta_location is not TALocation.IDLE and k > entered_at[m] + 1:
                    state = replace(state, clock_ms=(k - entered_at[m] - 1) * dt)
                state, events = path_ta_step(state, end_i, end_j, p.params, now, dt)
                ta_states[m] = state
                if state.clock_ms == 0.0:
                    entered_at[m] = k
                    timer = location_timer_ms(state, p.params)
                    if timer is not None:
                        wake[k + max(1, delay_steps(timer, dt))].add(m)
                if events is NO_EVENTS:
                    continue
                if events.start_i:
                    relay_active[2 * m] = True
                    relay_events.append(RelayEvent(now, p.id, "ij", "start"))
                    logger.debug("Relay %s ij started at %.4f ms", p.id, now)
                if events.start_j:
                    relay_active[2 * m + 1] = True
                    relay_events.append(RelayEvent(now, p.id, "ji", "start"))
                    logger.debug("Relay %s ji started at %.4f ms", p.id, now)
                if events.annihilated:
                    relay_active[2 * m] = relay_active[2 * m + 1] = False
                    relay_events.append(RelayEvent(now, p.id, "", "annihilate"))
                    logger.debug("Annihilation on %s at %.4f ms", p.id, now)

        history.push(potential, bank.location)
        if (k + 1) % dec == 0:
            record((k + 1) // dec, potential)

    elapsed = time.perf_counter() - started
    logger.info(
        "Simulated %g ms in %.2f s (%.0f steps/s, %.1f s per simulated second), %d upstrokes",
        settings.duration_ms, elapsed, n_steps / elapsed if elapsed > 0 else float("inf"),
        elapsed * 1000.0 / settings.duration_ms,
        sum(len(v) for v in q2_entries.values()),
    )

    return Trace(
        times=np.arange(n_samples) * (dec * dt),
        node_ids=node_ids,
        potentials=potentials,
        locations=locations,
        path_ids=path_ids,
        path_locations=path_locations,
        q2_entries=q2_entries,
        relay_events=relay_events,
        metadata={
            "config_name": config.name,
            "config_hash": config_hash(config),
            "coupling_mode": config.coupling_mode.value,
            "settings": settings.to_dict(),
            "stimuli": [asdict(s) for s in schedule],
        },
    )


# ---------------------------------------------------------------------------
# Analysis
# ---------------------------------------------------------------------------

def activation_report(trace: Trace) -> List[Activation]:
    """
    First upstroke time and upstroke count per node, in node order.

    Raises:
        ValueError: If the trace has no samples
    """
    if len(trace.times) == 0:
        raise ValueError("Empty trace")
    report = []
    for node_id in trace.node_ids:
        entries = trace.q2_entries.get(node_id, [])
        report.append(Activation(node_id, entries[0] if entries else None, len(entries)))
    return report


def node_apds(trace: Trace, node_id: str) -> List[Beat]:
    col = trace.column(node_id)
    return measure_apd_di(trace.times, trace.potentials[:, col], trace.locations[:, col])


def node_excited_durations(trace: Trace, node_id: str) -> List[float]:
    """q2-to-q0 durations of one node's beats, read from the recorded locations."""
    return excited_durations(trace.times, trace.locations[:, trace.column(node_id)])


def trace_frame(trace: Trace) -> pd.DataFrame:
    frame = pd.DataFrame(trace.potentials, columns=list(trace.node_ids))
    frame.insert(0, "time_ms", trace.times)
    return frame


def location_frame(trace: Trace) -> pd.DataFrame:
    frame = pd.DataFrame(trace.locations.astype(np.int64), columns=list(trace.node_ids))
    frame.insert(0, "time_ms", trace.times)
    return frame


def path_location_frame(trace: Trace) -> pd.DataFrame:
    if trace.path_locations is None:
        raise ValueError("Trace was recorded without path locations")
    frame = pd.DataFrame(trace.path_locations.astype(np.int64), columns=list(trace.path_ids))
    frame.insert(0, "time_ms", trace.times)
    return frame


def activation_frame(trace: Trace) -> pd.DataFrame:
    rows = activation_report(trace)
    return pd.DataFrame(rows, columns=list(Activation._fields))


def restitution_frame(curve: RestitutionCurve) -> pd.DataFrame:
    return pd.DataFrame(curve.points, columns=["bcl_ms", "di_ms", "apd_ms"])


# ---------------------------------------------------------------------------
# Restitution experiment
# ---------------------------------------------------------------------------

PACING_START_MS = 10.0
_TAIL_MS = 500.0


def _paced_cell(params: CellParams, bcl_ms: float, beats: int) -> HeartConfig:
    node = NodeSpec("cell", Region.ATRIAL, params_to_overrides(params))
    return HeartConfig(
        name=f"restitution_{params.variant.value}_{bcl_ms:g}",
        nodes=(node,),
        paths=(),
        stimuli=tuple(Stimulus("cell", PACING_START_MS + b * bcl_ms) for b in range(beats)),
        cell_preset=params.variant,
        sa_node=None,
    )


def restitution_curve(
    params: CellParams,
    bcl_list: Sequence[float],
    beats_per_bcl: int = 10,
    protocol: str = "steady",
    dt_ms: float = 0.01,
    integrator: Integrator = Integrator.EXPONENTIAL,
) -> RestitutionCurve:
    """
    Pace an isolated cell at each basic cycle length and measure restitution.

    The steady protocol pairs the DI before the last paced beat with that
    beat's APD. The first_beat protocol pairs the DI after beat 1 with the
    APD of beat 2, for models that never settle.

    Args:
        params: cell parameters
        bcl_list: basic cycle lengths in ms
        beats_per_bcl: stimuli per BCL (>= 10 for steady, >= 2 for first_beat)
        protocol: steady or first_beat
        dt_ms: step size
        integrator: integration scheme

    Returns:
        RestitutionCurve; BCLs where not every stimulus captured are skipped
    """
    if protocol not in ("steady", "first_beat"):
        raise ValueError(f"Unknown restitution protocol '{protocol}'")
    minimum = 10 if protocol == "steady" else 2
    if beats_per_bcl < minimum:
        raise ValueError(f"{protocol} protocol needs beats_per_bcl >= {minimum}, got {beats_per_bcl}")
    if not bcl_list:
        raise ValueError("Empty BCL list")

    decimation = max(1, int(round(0.01 / dt_ms)))
    curve = RestitutionCurve()
    for bcl in bcl_list:
        if not bcl > 0:
            raise ValueError(f"BCL must be positive, got {bcl}")
        cfg = _paced_cell(params, float(bcl), beats_per_bcl)
        settings = SimSettings(
            duration_ms=PACING_START_MS + beats_per_bcl * bcl + _TAIL_MS,
            dt_ms=dt_ms,
            record_decimation=decimation,
            integrator=integrator,
        )
        try:
            trace = simulate(cfg, settings)
        except NonFiniteStateError as e:
            reason = f"state diverged at step {e.step}"
            logger.warning("Skipping BCL %g ms: %s", bcl, reason)
            curve.skipped.append((float(bcl), reason))
            continue
        beats = node_apds(trace, "cell")

        if len(beats) < beats_per_bcl:
            reason = f"{len(beats)} of {beats_per_bcl} stimuli captured"
            logger.warning("Skipping BCL %g ms: %s", bcl, reason)
            curve.skipped.append((float(bcl), reason))
            continue

        if protocol == "steady":
            prev, last = beats[beats_per_bcl - 2], beats[beats_per_bcl - 1]
        else:
            prev, last = beats[0], beats[1]
        curve.points.append((float(bcl), prev.di_ms, last.apd_ms))
        logger.info("BCL %g ms: DI %.2f ms, APD %.2f ms", bcl, prev.di_ms, last.apd_ms)

    if not curve.points:
        logger.warning("No BCL produced a restitution point (%d skipped)", len(curve.skipped))
    return curve
