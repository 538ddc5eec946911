"""
Tests for the path timed automaton, relays, coupling terms and the delay line.
"""
import logging

import numpy as np
import pytest

from heartsim.cell import Location
from heartsim.path import (
    NO_EVENTS,
    DelayLine,
    Endpoint,
    Last,
    PathParams,
    PathState,
    TALocation,
    coupling_g_k_oxford,
    coupling_h_k,
    coupling_terms,
    delay_sample,
    delay_steps,
    location_timer_ms,
    path_ta_step,
    relay_step,
)

# Configure logging for test output
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)

logger = logging.getLogger(__name__)

DT = 1.0
REST = Endpoint(Location.Q0, False, 0.0)
UP = Endpoint(Location.Q2, True, 0.0)
IN_AP = Endpoint(Location.Q3, False, 0.0)


def _run(state, params, steps, now=0.0, end_i=REST, end_j=REST):
    """Step the automaton `steps` times with fixed endpoints, collecting events."""
    events = []
    for _ in range(steps):
        now += DT
        state, ev = path_ta_step(state, end_i, end_j, params, now, DT)
        if ev is not NO_EVENTS:
            events.append((now, ev))
    return state, events, now


# ---------------------------------------------------------------------------
# Propagation automaton
# ---------------------------------------------------------------------------

def test_full_propagation_i_to_j():
    params = PathParams(delta_ij=5.0, delta_ji=7.0)
    state, ev = path_ta_step(PathState(), UP, REST, params, 0.0, DT)
    assert state.ta_location is TALocation.WAIT_I
    assert ev is NO_EVENTS

    state, events, _ = _run(state, params, 5)
    assert state.ta_location is TALocation.RELAY_I
    assert state.last is Last.FROM_I
    assert events == [(5.0, (True, False, False))]


def test_full_propagation_j_to_i_uses_delta_ji():
    params = PathParams(delta_ij=5.0, delta_ji=7.0)
    state, _ = path_ta_step(PathState(), REST, UP, params, 0.0, DT)
    assert state.ta_location is TALocation.WAIT_J
    state, events, _ = _run(state, params, 7)
    assert [ev.start_j for _, ev in events] == [True]
    assert events[0][0] == 7.0
    assert state.last is Last.FROM_J


def test_relay_returns_to_idle_after_ignore_window():
    params = PathParams(delta_ij=5.0, delta_ji=5.0)
    state = PathState(TALocation.RELAY_I, 0.0, Last.FROM_I, 5.0)
    # Destination upstroke inside the ignore window is not a new propagation
    state, ev = path_ta_step(state, REST, UP, params, 6.0, DT)
    assert state.ta_location is TALocation.RELAY_I
    assert ev is NO_EVENTS

    state, events, _ = _run(state, params, 4, now=6.0, end_j=IN_AP)
    assert state.ta_location is TALocation.IDLE
    assert events == []


def test_opposing_upstroke_annihilates():
    params = PathParams(delta_ij=30.0, delta_ji=30.0)
    state, _ = path_ta_step(PathState(), UP, REST, params, 0.0, DT)
    state, _, now = _run(state, params, 10)
    state, ev = path_ta_step(state, Endpoint(Location.Q3, False, 10.0), UP, params, now + DT, DT)
    assert state.ta_location is TALocation.ANNIHILATE
    assert ev.annihilated
    assert state.last is Last.NONE


def test_simultaneous_upstrokes_annihilate():
    params = PathParams(delta_ij=30.0, delta_ji=30.0)
    state, ev = path_ta_step(PathState(), UP, UP, params, 0.0, DT)
    assert state.ta_location is TALocation.ANNIHILATE
    assert ev == (False, False, True)


def test_annihilate_waits_for_both_cells_to_leave_q2():
    params = PathParams(delta_ij=30.0, delta_ji=30.0)
    state = PathState(TALocation.ANNIHILATE)
    state, _ = path_ta_step(state, Endpoint(Location.Q2, False, 1.0), REST, params, 1.0, DT)
    assert state.ta_location is TALocation.ANNIHILATE
    state, _ = path_ta_step(state, IN_AP, IN_AP, params, 2.0, DT)
    assert state.ta_location is TALocation.IDLE


def test_blocked_direction_is_partial_propagation():
    params = PathParams(delta_ij=5.0, delta_ji=5.0, block_ij=True)
    state, _ = path_ta_step(PathState(), UP, REST, params, 0.0, DT)
    state, events, _ = _run(state, params, 5)
    assert events == []
    assert state.ta_location is TALocation.IDLE
    assert state.last is Last.FROM_I
    assert state.last_ms == 5.0


def test_explicit_refractory_window_blocks_reverse_direction():
    params = PathParams(delta_ij=5.0, delta_ji=5.0, refractory_window_ms=50.0)
    state = PathState(TALocation.IDLE, 0.0, Last.FROM_I, 0.0)

    blocked, ev = path_ta_step(state, REST, UP, params, 10.0, DT)
    assert ev.annihilated
    assert blocked.ta_location is TALocation.ANNIHILATE

    allowed, ev = path_ta_step(state, REST, UP, params, 100.0, DT)
    assert ev is NO_EVENTS
    assert allowed.ta_location is TALocation.WAIT_J


def test_default_window_is_source_refractory_period():
    params = PathParams(delta_ij=5.0, delta_ji=5.0)
    state = PathState(TALocation.IDLE, 0.0, Last.FROM_I, 0.0)
    source = Endpoint(Location.Q3, False, 30.0)

    early, _ = path_ta_step(state, source, UP, params, 20.0, DT)
    late, _ = path_ta_step(state, source, UP, params, 40.0, DT)
    assert early.ta_location is TALocation.ANNIHILATE
    assert late.ta_location is TALocation.WAIT_J


def test_same_direction_is_never_blocked():
    params = PathParams(delta_ij=5.0, delta_ji=5.0, refractory_window_ms=500.0)
    state = PathState(TALocation.IDLE, 0.0, Last.FROM_I, 0.0)
    state, ev = path_ta_step(state, UP, REST, params, 10.0, DT)
    assert state.ta_location is TALocation.WAIT_I


def test_path_params_type_checks():
    with pytest.raises(TypeError):
        PathParams(delta_ij="30", delta_ji=30.0)
    with pytest.raises(TypeError):
        PathParams(delta_ij=30.0, delta_ji=30.0, block_ij=1)
    assert PathParams(delta_ij=30, delta_ji=30).delta_ij == 30.0


@pytest.mark.parametrize(
    "location,expected",
    [
        (TALocation.IDLE, None),
        (TALocation.WAIT_I, 5.0),
        (TALocation.WAIT_J, 7.0),
        (TALocation.RELAY_I, 3.0),
        (TALocation.RELAY_J, 2.0),
        (TALocation.ANNIHILATE, None),
    ],
)
def test_location_timer(location, expected):
    params = PathParams(delta_ij=5.0, delta_ji=7.0, delta_ignore_i=2.0, delta_ignore_j=3.0)
    assert location_timer_ms(PathState(location), params) == expected


def test_timer_matches_step_by_step_exit():
    # Leaving WAIT_I takes exactly the timer's worth of steps
    params = PathParams(delta_ij=5.0, delta_ji=7.0)
    state, _ = path_ta_step(PathState(), UP, REST, params, 0.0, DT)
    steps = int(location_timer_ms(state, params) / DT)
    state, events, _ = _run(state, params, steps - 1)
    assert state.ta_location is TALocation.WAIT_I and events == []
    state, events, _ = _run(state, params, 1, now=steps - 1.0)
    assert state.ta_location is TALocation.RELAY_I


# ---------------------------------------------------------------------------
# Relays and coupling
# ---------------------------------------------------------------------------

def test_relay_outputs_delayed_potential():
    keep, v_out = relay_step(True, 80.0, Location.Q2, 5.0, Location.Q1)
    assert bool(keep)
    assert float(v_out) == 80.0


@pytest.mark.parametrize(
    "delayed_loc, dest_loc",
    [(Location.Q0, Location.Q1), (Location.Q3, Location.Q2), (Location.Q3, Location.Q3)],
)
def test_relay_stops(delayed_loc, dest_loc):
    keep, v_out = relay_step(True, 80.0, delayed_loc, 5.0, dest_loc)
    assert not bool(keep)
    assert float(v_out) == 5.0


def test_relay_vectorised():
    keep, v_out = relay_step(
        np.array([True, True, False]),
        np.array([60.0, 70.0, 90.0]),
        np.array([Location.Q3, Location.Q0, Location.Q2]),
        np.array([1.0, 2.0, 3.0]),
        np.array([Location.Q0, Location.Q0, Location.Q0]),
    )
    assert keep.tolist() == [True, False, False]
    assert v_out.tolist() == [60.0, 2.0, 3.0]


def test_coupling_h_k():
    neighbours = [(1.0, 1.0, 50.0), (1.0, 0.5, 30.0)]
    assert coupling_h_k(neighbours, 10.0) == pytest.approx(50.0)
    assert coupling_h_k(neighbours, 10.0, a_m=2.0) == pytest.approx(25.0)
    assert coupling_h_k([], 10.0) == 0.0


def test_coupling_zero_at_equal_potentials():
    terms = coupling_terms([1.0, 2.0], [0.3, 0.7], [42.0, 42.0], 42.0)
    assert terms.tolist() == [0.0, 0.0]


@pytest.mark.parametrize("a_m, c_m", [(0.0, 1.0), (1.0, -1.0)])
def test_coupling_rejects_non_positive_constants(a_m, c_m):
    with pytest.raises(ValueError):
        coupling_h_k([(1.0, 1.0, 50.0)], 0.0, a_m=a_m, c_m=c_m)


def test_coupling_g_k_oxford():
    assert coupling_g_k_oxford([(20.0, 0.5), (10.0, 1.0)], 5.0, 2.0) == pytest.approx(10.0)
    assert coupling_g_k_oxford([], 5.0, 0.0) == 0.0


# ---------------------------------------------------------------------------
# Delay line
# ---------------------------------------------------------------------------

def test_delay_steps_rounding():
    assert delay_steps(30.0, 0.0005) == 60000
    assert delay_steps(0.00049, 0.0005) == 1
    assert delay_steps(0.0, 0.0005) == 0


def test_delay_line_reads_history():
    line = DelayLine(width=2, max_delay=4)
    for k in range(1, 6):
        line.push(np.array([k, 10.0 * k]), np.array([Location.Q0, Location.Q3]))

    pot, loc = line.read(np.array([0, 2]), np.array([0, 1]))
    assert pot.tolist() == [5.0, 30.0]
    assert loc.tolist() == [Location.Q0, Location.Q3]
    assert delay_sample(line, 4, column=1) == (10.0, Location.Q3)


def test_delay_line_starts_at_rest():
    line = DelayLine(width=1, max_delay=3)
    line.push(np.array([7.0]), np.array([Location.Q2]))
    assert delay_sample(line, 0) == (7.0, Location.Q2)
    assert delay_sample(line, 3) == (0.0, Location.Q0)


def test_delay_line_wraps():
    line = DelayLine(width=1, max_delay=2)
    for k in range(10):
        line.push(np.array([float(k)]), np.array([Location.Q0]))
    assert [delay_sample(line, d)[0] for d in range(3)] == [9.0, 8.0, 7.0]
