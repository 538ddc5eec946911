"""
Timed-automata model of a bidirectional conduction path between two cells.

A path decides which action potentials may cross it (arbitration), lets
opposing action potentials annihilate, remembers the direction of the last
propagation, and relays the delayed source potential into the destination
cell once the conduction time has elapsed. It also provides the two electrical
coupling functions: the reaction-diffusion term h_k and the always-on delayed
Oxford term g_k.
"""
import logging
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from heartsim.cell import Location

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


class TALocation(IntEnum):
    IDLE = 0
    DIRECTION_I = 1  # urgent, resolved within the step
    DIRECTION_J = 2  # urgent, resolved within the step
    WAIT_I = 3
    WAIT_J = 4
    RELAY_I = 5
    RELAY_J = 6
    ANNIHILATE = 7


class Last(IntEnum):
    """Origin of the last propagation seen by a path."""
    NONE = 0
    FROM_I = 1
    FROM_J = 2


# ---------------------------------------------------------------------------
# Parameters and state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PathParams:
    """
    Parameters of one bidirectional path between cells i and j.

    Positivity of delays and conductances is checked by
    network.validate_config so bad values show up as diagnostics.
    """
    delta_ij: float
    delta_ji: float
    delta_ignore_i: float = 5.0
    delta_ignore_j: float = 5.0
    gamma_ij: float = 1.0
    gamma_ji: float = 1.0
    sigma_ij: float = 1.0
    sigma_ji: float = 1.0
    block_ij: bool = False
    block_ji: bool = False
    refractory_window_ms: Optional[float] = None
    gain_ij: Optional[float] = None  # Oxford a for i -> j
    gain_ji: Optional[float] = None  # Oxford a for j -> i

    def __post_init__(self):
        for name in ("delta_ij", "delta_ji", "delta_ignore_i", "delta_ignore_j",
                     "gamma_ij", "gamma_ji", "sigma_ij", "sigma_ji"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise TypeError(f"{name} must be a number, got {value!r}")
            object.__setattr__(self, name, float(value))
        for name in ("block_ij", "block_ji"):
            if not isinstance(getattr(self, name), bool):
                raise TypeError(f"{name} must be a bool, got {getattr(self, name)!r}")


@dataclass(frozen=True)
class PathState:
    ta_location: TALocation = TALocation.IDLE
    clock_ms: float = 0.0
    last: Last = Last.NONE
    last_ms: Optional[float] = None


class Endpoint(NamedTuple):
    """What the path automaton sees of one of its cells in the current step."""
    location: int
    entered_q2: bool
    refractory_ms: float  # duration of the cell's last (or ongoing) action potential


class PathEvents(NamedTuple):
    start_i: bool = False
    start_j: bool = False
    annihilated: bool = False


NO_EVENTS = PathEvents()


# ---------------------------------------------------------------------------
# Propagation automaton
# ---------------------------------------------------------------------------

def _arbitrate(
    state: PathState,
    origin: Last,
    ends: Tuple[Endpoint, Endpoint],
    params: PathParams,
    now_ms: float,
) -> Tuple[PathState, PathEvents]:
    """Resolve the urgent direction location for an upstroke at `origin`."""
    opposite = Last.FROM_J if origin is Last.FROM_I else Last.FROM_I
    source_of_last = ends[1] if origin is Last.FROM_I else ends[0]
    window = params.refractory_window_ms
    if window is None:
        window = source_of_last.refractory_ms

    if state.last is opposite and state.last_ms is not None and now_ms - state.last_ms < window:
        logger.debug("Upstroke %s blocked by recent propagation %s at %.3f ms", origin.name, opposite.name, now_ms)
        return PathState(TALocation.ANNIHILATE, 0.0, Last.NONE, None), PathEvents(annihilated=True)

    wait = TALocation.WAIT_I if origin is Last.FROM_I else TALocation.WAIT_J
    return replace(state, ta_location=wait, clock_ms=0.0), NO_EVENTS


def _step_idle(state, end_i, end_j, params, now_ms):
    if end_i.entered_q2 and end_j.entered_q2:
        return PathState(TALocation.ANNIHILATE, 0.0, Last.NONE, None), PathEvents(annihilated=True)
    if end_i.entered_q2:
        return _arbitrate(state, Last.FROM_I, (end_i, end_j), params, now_ms)
    if end_j.entered_q2:
        return _arbitrate(state, Last.FROM_J, (end_i, end_j), params, now_ms)
    return state, NO_EVENTS


def path_ta_step(
    state: PathState,
    end_i: Endpoint,
    end_j: Endpoint,
    params: PathParams,
    now_ms: float,
    dt_ms: float,
) -> Tuple[PathState, PathEvents]:
    """
    Advance the propagation automaton of one path by one step.

    Args:
        state: current automaton state
        end_i: view of cell i after its discrete step
        end_j: view of cell j after its discrete step
        params: path parameters (delays already on the simulation grid)
        now_ms: simulation time of this step
        dt_ms: step size

    Returns:
        (new state, events emitted in this step)
    """
    loc = state.ta_location
    clock = state.clock_ms + dt_ms
    # Clocks accumulate dt; half a step absorbs the rounding
    slack = 0.5 * dt_ms

    if loc is TALocation.IDLE:
        return _step_idle(state, end_i, end_j, params, now_ms)

    if loc in (TALocation.WAIT_I, TALocation.WAIT_J):
        from_i = loc is TALocation.WAIT_I
        other = end_j if from_i else end_i
        if other.entered_q2:
            return PathState(TALocation.ANNIHILATE, 0.0, Last.NONE, None), PathEvents(annihilated=True)

        delta = params.delta_ij if from_i else params.delta_ji
        if clock < delta - slack:
            return replace(state, clock_ms=clock), NO_EVENTS

        origin = Last.FROM_I if from_i else Last.FROM_J
        blocked = params.block_ij if from_i else params.block_ji
        if blocked:
            # Entered the path but never leaves it: a partial propagation
            return PathState(TALocation.IDLE, 0.0, origin, now_ms), NO_EVENTS
        relay = TALocation.RELAY_I if from_i else TALocation.RELAY_J
        events = PathEvents(start_i=True) if from_i else PathEvents(start_j=True)
        return PathState(relay, 0.0, origin, now_ms), events

    if loc in (TALocation.RELAY_I, TALocation.RELAY_J):
        ignore = params.delta_ignore_j if loc is TALocation.RELAY_I else params.delta_ignore_i
        if clock < ignore - slack:
            return replace(state, clock_ms=clock), NO_EVENTS
        return _step_idle(replace(state, ta_location=TALocation.IDLE, clock_ms=0.0), end_i, end_j, params, now_ms)

    if loc is TALocation.ANNIHILATE:
        if end_i.location != Location.Q2 and end_j.location != Location.Q2:
            return _step_idle(replace(state, ta_location=TALocation.IDLE, clock_ms=0.0), end_i, end_j, params, now_ms)
        return replace(state, clock_ms=clock), NO_EVENTS

    raise ValueError(f"Path automaton cannot rest in {loc.name}")


def location_timer_ms(state: PathState, params: PathParams) -> Optional[float]:
    """Clock value at which the automaton leaves its location, None if untimed."""
    loc = state.ta_location
    if loc is TALocation.WAIT_I:
        return params.delta_ij
    if loc is TALocation.WAIT_J:
        return params.delta_ji
    if loc is TALocation.RELAY_I:
        return params.delta_ignore_j
    if loc is TALocation.RELAY_J:
        return params.delta_ignore_i
    return None


# ---------------------------------------------------------------------------
# Relays and coupling
# ---------------------------------------------------------------------------

def relay_step(
    active: ArrayLike,
    delayed_potential: ArrayLike,
    delayed_location: ArrayLike,
    dest_potential: ArrayLike,
    dest_location: ArrayLike,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Evaluate one relay, or all relays at once when given arrays.

    A relay keeps running until the destination has depolarised (q2 or q3)
    or the delayed source potential is back in q0.

    Returns:
        (still_active, v_out); an inactive relay outputs the destination's
        own potential so its coupling term vanishes
    """
    dest_location = np.asarray(dest_location)
    keep = (
        np.asarray(active, dtype=bool)
        & (np.asarray(delayed_location) != Location.Q0)
        & (dest_location != Location.Q2)
        & (dest_location != Location.Q3)
    )
    v_out = np.where(keep, delayed_potential, dest_potential)
    return keep, v_out


def coupling_terms(gamma, sigma, v_out, v_k, a_m: float = 1.0, c_m: float = 1.0) -> np.ndarray:
    """Per-neighbour reaction-diffusion terms Gamma*sigma/(A_m*C_m) * (v_out - v_k)."""
    if a_m <= 0 or c_m <= 0:
        raise ValueError(f"a_m and c_m must be positive, got a_m={a_m}, c_m={c_m}")
    gamma = np.asarray(gamma, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    return gamma * sigma / (a_m * c_m) * (np.asarray(v_out, dtype=np.float64) - v_k)


def coupling_h_k(
    neighbors: Sequence[Tuple[float, float, float]],
    v_k: float,
    a_m: float = 1.0,
    c_m: float = 1.0,
) -> float:
    """
    Voltage induced at cell k by its neighbours' relays.

    Args:
        neighbors: (gamma, sigma, v_out) per neighbour
        v_k: potential of cell k
        a_m: surface-to-volume ratio
        c_m: membrane capacitance

    Returns:
        Sum of the reaction-diffusion terms, 0 without neighbours
    """
    if not neighbors:
        if a_m <= 0 or c_m <= 0:
            raise ValueError(f"a_m and c_m must be positive, got a_m={a_m}, c_m={c_m}")
        return 0.0
    gamma, sigma, v_out = (np.array(col, dtype=np.float64) for col in zip(*neighbors))
    return float(coupling_terms(gamma, sigma, v_out, v_k, a_m, c_m).sum())


def coupling_g_k_oxford(
    neighbors: Sequence[Tuple[float, float]],
    v_k: float,
    d_k: float,
) -> float:
    """Oxford contribution: sum of delayed neighbour potentials times gain, minus v_k*d_k."""
    total = 0.0
    for delayed_v, gain in neighbors:
        total += delayed_v * gain
    return total - v_k * d_k


# ---------------------------------------------------------------------------
# Transport delay
# ---------------------------------------------------------------------------

def delay_steps(delta_ms: float, dt_ms: float) -> int:
    """Conduction time rounded to a whole number of steps."""
    return int(round(delta_ms / dt_ms))


class DelayLine:
    """
    Ring buffer of (potential, location) samples for a set of cells.

    Every cell is written once per step; each path direction reads its
    source cell at its own delay. The buffer starts filled with resting
    samples.

    Usage:
        line = DelayLine(width=33, max_delay=280000)
        line.push(potentials, locations)
        pot, loc = line.read(delays, columns)
    """

    def __init__(self, width: int, max_delay: int):
        if max_delay < 0:
            raise ValueError(f"max_delay must be non-negative, got {max_delay}")
        self.depth = max_delay + 1
        self.potential = np.zeros((self.depth, width), dtype=np.float64)
        self.location = np.full((self.depth, width), Location.Q0, dtype=np.int8)
        self.write_idx = 0

    def push(self, potentials: np.ndarray, locations: np.ndarray) -> None:
        """Write one sample per cell and advance the write pointer."""
        self.potential[self.write_idx] = potentials
        self.location[self.write_idx] = locations
        self.write_idx = (self.write_idx + 1) % self.depth

    def read(self, delays, columns) -> Tuple[np.ndarray, np.ndarray]:
        """
        Read samples `delays` steps in the past.

        delay=0 returns the most recently pushed sample.
        """
        rows = (self.write_idx - 1 - np.asarray(delays)) % self.depth
        return self.potential[rows, columns], self.location[rows, columns]


def delay_sample(line: DelayLine, delay: int, column: int = 0) -> Tuple[float, Location]:
    """Scalar read of one cell's delayed (potential, location)."""
    pot, loc = line.read(delay, column)
    return float(pot), Location(int(loc))
