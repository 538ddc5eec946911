"""
Tests for the single-cell hybrid automaton: f(theta), flows, guards,
parameter presets and APD/DI segmentation.
"""
import logging
import math

import numpy as np
import pytest

from heartsim.cell import (
    CellBank,
    CellParams,
    CellState,
    Location,
    Variant,
    cell_discrete_step,
    cell_flow,
    cell_params_preset,
    compute_theta,
    dump_params,
    estimate_apd_ms,
    excited_durations,
    f_theta,
    measure_apd_di,
    membrane_potential,
    params_from_overrides,
    params_to_overrides,
)

# Configure logging for test output
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Test Fixtures
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def uoa() -> CellParams:
    return cell_params_preset(Variant.UOA)


@pytest.fixture(scope="module")
def stony() -> CellParams:
    return cell_params_preset(Variant.STONY_BROOK_2008)


@pytest.fixture(scope="module")
def oxford() -> CellParams:
    return cell_params_preset(Variant.OXFORD_VX_ONLY)


# ---------------------------------------------------------------------------
# f(theta) and theta capture
# ---------------------------------------------------------------------------

def test_f_theta_capped_value(uoa):
    assert f_theta(0.04, uoa) == pytest.approx(4.0395, abs=1e-3)
    # Capped for every theta beyond the threshold
    assert f_theta(0.5, uoa) == pytest.approx(4.0395)
    assert f_theta(1.0, uoa) == pytest.approx(4.0395)


def test_f_theta_uncapped_growth(stony):
    assert f_theta(1.0, stony) == pytest.approx(5.96e26, rel=0.01)
    assert f_theta(0.0, stony) == pytest.approx(0.99)


def test_f_theta_continuous_at_cap(uoa, stony):
    # The cap value is the raw curve evaluated at the threshold
    assert f_theta(0.04, stony) == pytest.approx(f_theta(0.04, uoa), abs=1e-3)
    assert f_theta(0.039, uoa) == pytest.approx(f_theta(0.039, stony))


def test_f_theta_step_switch(oxford):
    # Raw curve below the step, a flat value from the step up
    assert f_theta(0.001, oxford) == pytest.approx(1.0012, abs=1e-3)
    assert f_theta(0.002, oxford) == 25.0
    assert f_theta(0.3, oxford) == 25.0
    assert f_theta(1.0, oxford) == 25.0


def test_f_theta_step_wins_over_cap(uoa):
    stepped = params_from_overrides(uoa, {"f_step_enabled": True, "f_step_theta": 0.5, "f_step_value": 2.0})
    assert f_theta(0.3, stepped) == pytest.approx(4.0395)
    assert f_theta(0.6, stepped) == 2.0


@pytest.mark.parametrize("theta", [-0.01, 1.2])
def test_f_theta_domain_error(uoa, theta):
    with pytest.raises(ValueError):
        f_theta(theta, uoa)


def test_compute_theta_clamps(uoa):
    assert compute_theta(15.0, uoa) == pytest.approx(0.5)
    assert compute_theta(-3.0, uoa) == 0.0
    assert compute_theta(45.0, uoa) == 1.0


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

def test_preset_flags(uoa, stony, oxford):
    assert uoa.f_cap_enabled and uoa.q3_f_theta_enabled
    assert not stony.f_cap_enabled and not stony.q3_f_theta_enabled
    assert oxford.vx_only and not oxford.f_cap_enabled
    assert oxford.v_signs == (1.0, 0.0, 0.0)


def test_params_validation():
    with pytest.raises(ValueError):
        CellParams(alpha=((0, 0, 0),) * 4, beta_x=1, beta_y=0, beta_z=0, v_r=50.0, v_t=44.5, v_o=131.1)
    with pytest.raises(ValueError):
        CellParams(alpha=((0, 0, 0),) * 3, beta_x=1, beta_y=0, beta_z=0, v_r=30.0, v_t=44.5, v_o=131.1)
    with pytest.raises(ValueError):
        CellParams(alpha=((0, 0, 0),) * 4, beta_x=1, beta_y=0, beta_z=0, v_r=30.0, v_t=44.5, v_o=40.0)


def test_params_from_overrides(uoa):
    params = params_from_overrides(uoa, {"alpha3_y": 0.015, "v_r": 25, "f_cap_enabled": False})
    assert params.rate(3, "y") == 0.015
    assert params.v_r == 25.0
    assert not params.f_cap_enabled
    # Untouched entries keep the preset values
    assert params.rate(2, "z") == uoa.rate(2, "z")
    assert params_from_overrides(uoa, {}) is uoa


@pytest.mark.parametrize("key", ["alpha5_x", "alpha3_w", "gamma", "alpha"])
def test_params_from_overrides_rejects_unknown(uoa, key):
    with pytest.raises(ValueError):
        params_from_overrides(uoa, {key: 1.0})


def test_params_to_overrides_restores_params(uoa):
    modified = params_from_overrides(uoa, {"alpha3_y": 0.02, "beta_x": 0.5})
    assert params_from_overrides(uoa, params_to_overrides(modified)) == modified


def test_dump_params_composition(uoa, oxford):
    assert dump_params(uoa)["composition"] == "v = +1*v_x -1*v_y +1*v_z"
    assert dump_params(oxford)["composition"] == "v = +1*v_x"
    assert dump_params(uoa)["alpha3_y"] == uoa.rate(3, "y")


# ---------------------------------------------------------------------------
# Flows and potential
# ---------------------------------------------------------------------------

def test_membrane_potential_composition(uoa):
    state = CellState(v_x=10.0, v_y=3.0, v_z=2.0)
    assert membrane_potential(state) == pytest.approx(9.0)
    summed = params_from_overrides(uoa, {"v_signs": [1, 1, 1]})
    assert membrane_potential(state, summed) == pytest.approx(15.0)


def test_flow_q1_driven_by_input(uoa):
    dv = cell_flow(CellState(location=Location.Q1), 100.0, uoa)
    assert dv == pytest.approx((77.72, 5.89, 27.66))


def test_flow_q0_decays(uoa):
    dx, dy, dz = cell_flow(CellState(v_x=10.0, v_y=1.0, v_z=2.0), 0.0, uoa)
    assert dx == pytest.approx(-0.087)
    assert dy == pytest.approx(-0.1909)
    assert dz == pytest.approx(-0.3808)


def test_flow_q3_scaled_by_f(uoa, stony):
    state = CellState(location=Location.Q3, v_x=10.0, v_y=10.0, v_z=10.0, theta=0.5)
    dx, dy, dz = cell_flow(state, 0.0, uoa)
    assert dx == pytest.approx(-0.332 * 4.0395)
    assert dy == pytest.approx(0.280 * 4.0395)
    assert dz == pytest.approx(0.020)

    state = CellState(location=Location.Q3, v_x=10.0, v_y=10.0, v_z=10.0, theta=0.02)
    dx, dy, _ = cell_flow(state, 0.0, stony)
    assert dx == pytest.approx(-0.332)  # v_x not scaled in this preset
    assert dy == pytest.approx(0.280 * f_theta(0.02, stony))


def test_flow_zero_when_resting(uoa):
    assert cell_flow(CellState(), 0.0, uoa) == (0.0, 0.0, 0.0)


# ---------------------------------------------------------------------------
# Discrete transitions
# ---------------------------------------------------------------------------

def test_q0_to_q1_captures_theta(uoa):
    state = cell_discrete_step(CellState(v_x=15.0), 5.0, uoa, now_ms=1.0)
    assert state.location is Location.Q1
    assert state.theta == pytest.approx(0.5)


def test_q0_stays_without_input(uoa):
    state = cell_discrete_step(CellState(v_x=15.0), 0.0, uoa, now_ms=1.0)
    assert state.location is Location.Q0


def test_q1_to_q2_sets_overshoot(uoa):
    start = CellState(location=Location.Q1, v_x=50.0, theta=0.5)
    state = cell_discrete_step(start, 10.0, uoa, now_ms=12.5)
    assert state.location is Location.Q2
    assert state.overshoot_target == pytest.approx(131.1 - 80.1 * math.sqrt(0.5))
    assert state.last_q2_entry_ms == 12.5


def test_q1_failed_stimulus_returns_to_rest(uoa):
    state = cell_discrete_step(CellState(location=Location.Q1, v_x=20.0), 0.0, uoa, now_ms=3.0)
    assert state.location is Location.Q0


def test_q1_above_v_r_waits_without_input(uoa):
    # Between v_r and v_t with the input gone: no drop to q0 while still above v_r
    start = CellState(location=Location.Q1, v_x=35.0, theta=0.5)
    state = cell_discrete_step(start, 0.0, uoa, now_ms=3.0)
    assert state.location is Location.Q1
    assert membrane_potential(state) > uoa.v_r


def test_q1_decays_back_to_rest_below_v_r(uoa):
    bank = CellBank.from_states([uoa], [CellState(location=Location.Q1, v_x=35.0, theta=0.5)])
    bank.bind_step(lambda rate: (np.exp(rate * 0.1), np.full_like(rate, 0.1)))
    no_input = np.zeros(1)
    for step in range(5000):
        bank.advance(no_input)
        pot = bank.potential()
        before = int(bank.location[0])
        bank.discrete_step(no_input, step * 0.1, pot)
        if bank.location[0] == Location.Q0:
            assert before == Location.Q1
            assert pot[0] <= uoa.v_r
            break
    else:
        pytest.fail("cell never left q1")


def test_q2_to_q3_at_overshoot(uoa):
    start = CellState(location=Location.Q2, v_x=100.0, overshoot_target=90.0)
    assert cell_discrete_step(start, 0.0, uoa, now_ms=1.0).location is Location.Q3
    below = CellState(location=Location.Q2, v_x=80.0, overshoot_target=90.0)
    assert cell_discrete_step(below, 0.0, uoa, now_ms=1.0).location is Location.Q2


def test_q3_to_q0_below_v_r(uoa):
    state = cell_discrete_step(CellState(location=Location.Q3, v_x=29.0), 0.0, uoa, now_ms=140.0)
    assert state.location is Location.Q0
    assert state.last_q0_entry_ms == 140.0


def test_single_transition_per_step(uoa):
    # Potential already above threshold, but q0 -> q1 is the only move allowed
    state = cell_discrete_step(CellState(v_x=50.0), 10.0, uoa, now_ms=1.0)
    assert state.location is Location.Q1
    assert state.theta == 1.0


def test_bank_refractory_ms(uoa):
    bank = CellBank.from_states(
        [uoa, uoa, uoa],
        [
            CellState(),
            CellState(location=Location.Q3, last_q2_entry_ms=100.0),
            CellState(last_q2_entry_ms=100.0, last_q0_entry_ms=230.0),
        ],
    )
    assert bank.refractory_ms(150.0).tolist() == pytest.approx([0.0, 50.0, 130.0])


def test_bank_matches_scalar_view(uoa, stony):
    states = [CellState(location=Location.Q1, v_x=3.0), CellState(location=Location.Q3, v_x=5.0, v_y=1.0, theta=0.1)]
    bank = CellBank.from_states([uoa, stony], states)
    rate, drive = bank.flow_terms(np.array([20.0, 0.0]))
    for i, (params, state) in enumerate(zip((uoa, stony), states)):
        expected = cell_flow(state, [20.0, 0.0][i], params)
        assert (rate[i] * bank.v[i] + drive[i]).tolist() == pytest.approx(expected)
        assert bank.state(i) == state


def test_bank_advance_needs_step_factors(uoa):
    bank = CellBank([uoa])
    with pytest.raises(RuntimeError):
        bank.advance(np.zeros(1))


# ---------------------------------------------------------------------------
# APD / DI segmentation
# ---------------------------------------------------------------------------

def _square_beats(locations: bool):
    t = np.arange(0.0, 1000.0, 1.0)
    v = np.zeros_like(t)
    loc = np.zeros(t.size, dtype=int)
    for start in (100, 400):
        v[start:start + 100] = 100.0
        loc[start:start + 100] = Location.Q3
        loc[start] = Location.Q2
    return t, v, (loc if locations else None)


@pytest.mark.parametrize("with_locations", [True, False])
def test_measure_apd_di(with_locations):
    t, v, loc = _square_beats(with_locations)
    beats = measure_apd_di(t, v, loc)
    assert len(beats) == 2
    assert beats[0].start_ms == 100.0
    assert beats[0].apd_ms == 100.0
    assert beats[0].di_ms == 200.0
    assert beats[1].apd_ms == 100.0
    assert beats[1].di_ms is None


def test_measure_apd_di_drops_unfinished_beat():
    t = np.arange(0.0, 300.0, 1.0)
    v = np.where(t >= 100.0, 100.0, 0.0)
    assert measure_apd_di(t, v) == []


def test_measure_apd_di_quiescent():
    t = np.arange(0.0, 100.0, 1.0)
    assert measure_apd_di(t, np.zeros_like(t)) == []


def test_excited_durations_ignore_potential():
    t, v, loc = _square_beats(True)
    # A plateau left in q0 after the second beat does not lengthen it
    v[500:700] = 80.0
    assert excited_durations(t, loc) == [100.0, 100.0]
    assert measure_apd_di(t, v, loc)[1].apd_ms == 300.0


def test_excited_durations_drop_unfinished_beat():
    t = np.arange(0.0, 300.0, 1.0)
    loc = np.where(t >= 100.0, int(Location.Q3), int(Location.Q0))
    assert excited_durations(t, loc) == []


# ---------------------------------------------------------------------------
# Closed-form APD estimate
# ---------------------------------------------------------------------------

def test_estimate_apd_ranges(uoa, oxford):
    atrial = estimate_apd_ms(uoa)
    ventricular = estimate_apd_ms(params_from_overrides(uoa, {"alpha3_y": 0.015}))
    logger.info("Estimated APD: atrial %.1f ms, ventricular %.1f ms", atrial, ventricular)

    assert 100.0 < atrial < 180.0
    assert 1.6 <= ventricular / atrial <= 2.4
    assert estimate_apd_ms(oxford) == pytest.approx(98.0, abs=3.0)


def test_estimate_apd_no_capture(uoa):
    weak = params_from_overrides(uoa, {"beta_x": 0.0, "beta_y": 0.0, "beta_z": 0.0})
    assert math.isnan(estimate_apd_ms(weak))
