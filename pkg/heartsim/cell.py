"""
Hybrid-automaton model of a single cardiac cell.

Each cell carries three continuous variables (v_x, v_y, v_z) whose linear
flows depend on the current location:

    q0 resting      v' = a0 * v
    q1 stimulated   v' = a1 * v + beta * V_in
    q2 upstroke     v' = a2 * v
    q3 plateau      v'_x = a3_x * v_x * (f(theta) if enabled else 1)
                    v'_y = a3_y * v_y * f(theta)
                    v'_z = a3_z * v_z

f(theta) is either the raw exponential curve, capped at f_cap above
f_cap_theta, or switched to f_step_value above f_step_theta (the v_x-only
model uses the switch to split its restitution curve into two levels).

The membrane potential is a signed composition of the three variables
(v_x - v_y + v_z for the shipped presets). The scalar functions at the
bottom of the module operate on one CellState; the engine works on a
CellBank, which holds any number of cells as numpy arrays and applies the
same flow table and guards to all of them at once.
"""
import logging
import math
from functools import lru_cache
from dataclasses import dataclass, replace
from enum import Enum, IntEnum
from typing import Any, Callable, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)


class Location(IntEnum):
    """HA locations. Stored as small integers in traces."""
    Q0 = 0  # resting
    Q1 = 1  # stimulated
    Q2 = 2  # upstroke
    Q3 = 3  # plateau / repolarisation


class Variant(str, Enum):
    UOA = "uoa"
    STONY_BROOK_2008 = "stony_brook_2008"
    OXFORD_VX_ONLY = "oxford_vx_only"


VARIABLES = ("x", "y", "z")

# v = v_x - v_y + v_z
_DEFAULT_SIGNS = (1.0, -1.0, 1.0)

# f(theta) = 0.29 e^{62.89 theta} + 0.70 e^{-10.99 theta}
_F_GAIN_FAST, _F_RATE_FAST = 0.29, 62.89
_F_GAIN_SLOW, _F_RATE_SLOW = 0.70, -10.99

# Rate coefficients per location (rows q0..q3), columns (x, y, z), 1/ms
_TABLE_ALPHA = (
    (-0.0087, -0.1909, -0.1904),
    (-0.0236, -0.0455, -0.0129),
    (-0.0069, 0.0759, 6.8265),
    (-0.0332, 0.0280, 0.0020),
)

# v_x-only model: APD ~98 ms from rest, ~9 ms once theta reaches the step,
# which the q0 decay places at a diastolic interval of ~51 ms
_OXFORD_ALPHA = (
    (-0.12, 0.0, 0.0),
    (-0.0236, 0.0, 0.0),
    (0.23, 0.0, 0.0),
    (-0.024, 0.0, 0.0),
)
_OXFORD_STEP_THETA = 0.002
_OXFORD_STEP_VALUE = 25.0


# ---------------------------------------------------------------------------
# Parameters and state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CellParams:
    """
    All coefficients and constants of one cell.

    alpha is indexed [location][variable], so alpha[3][1] is the q3 rate of v_y.
    """
    alpha: Tuple[Tuple[float, float, float], ...]
    beta_x: float
    beta_y: float
    beta_z: float
    v_r: float
    v_t: float
    v_o: float
    f_cap: float = 4.0395
    f_cap_enabled: bool = True
    q3_f_theta_enabled: bool = True
    variant: Variant = Variant.UOA
    f_cap_theta: float = 0.04
    overshoot_gain: float = 80.1
    v_signs: Tuple[float, float, float] = _DEFAULT_SIGNS
    f_step_enabled: bool = False
    f_step_theta: float = _OXFORD_STEP_THETA
    f_step_value: float = _OXFORD_STEP_VALUE

    def __post_init__(self):
        """Normalise containers and check the parameter invariants."""
        object.__setattr__(self, "variant", Variant(self.variant))

        alpha = tuple(tuple(float(a) for a in row) for row in self.alpha)
        if len(alpha) != 4 or any(len(row) != 3 for row in alpha):
            raise ValueError(f"alpha must be 4 locations x 3 variables, got {self.alpha}")
        object.__setattr__(self, "alpha", alpha)

        signs = tuple(float(s) for s in self.v_signs)
        if len(signs) != 3:
            raise ValueError(f"v_signs needs 3 entries, got {self.v_signs}")
        object.__setattr__(self, "v_signs", signs)

        if not (self.v_t > self.v_r > 0):
            raise ValueError(f"Require v_t > v_r > 0, got v_t={self.v_t}, v_r={self.v_r}")
        if not self.v_o > self.v_t:
            raise ValueError(f"Require v_o > v_t, got v_o={self.v_o}, v_t={self.v_t}")
        if not self.f_cap > 0:
            raise ValueError(f"f_cap must be positive, got {self.f_cap}")
        if not 0.0 < self.f_cap_theta <= 1.0:
            raise ValueError(f"f_cap_theta must lie in (0, 1], got {self.f_cap_theta}")
        if not 0.0 < self.f_step_theta <= 1.0:
            raise ValueError(f"f_step_theta must lie in (0, 1], got {self.f_step_theta}")
        if not self.f_step_value > 0:
            raise ValueError(f"f_step_value must be positive, got {self.f_step_value}")

    @property
    def vx_only(self) -> bool:
        return self.variant is Variant.OXFORD_VX_ONLY

    def rate(self, location: int, variable: str) -> float:
        """Return alpha for a location and a variable name ('x', 'y' or 'z')."""
        return self.alpha[int(location)][VARIABLES.index(variable)]


@dataclass(frozen=True)
class CellState:
    location: Location = Location.Q0
    v_x: float = 0.0
    v_y: float = 0.0
    v_z: float = 0.0
    theta: float = 0.0
    overshoot_target: float = 0.0
    last_q2_entry_ms: Optional[float] = None
    last_q0_entry_ms: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "location", Location(self.location))
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")


class Beat(NamedTuple):
    """One segmented action potential."""
    start_ms: float
    apd_ms: float
    di_ms: Optional[float]


# ---------------------------------------------------------------------------
# Presets and parameter overrides
# ---------------------------------------------------------------------------

def cell_params_preset(variant: Union[Variant, str]) -> CellParams:
    """
    Return the parameters of a named cell model.

    Args:
        variant: uoa, stony_brook_2008 or oxford_vx_only

    Returns:
        CellParams for that model

    Raises:
        ValueError: If the variant name is unknown
    """
    variant = Variant(variant)

    if variant is Variant.OXFORD_VX_ONLY:
        return CellParams(
            alpha=_OXFORD_ALPHA,
            beta_x=1.0, beta_y=0.0, beta_z=0.0,
            v_r=14.0, v_t=44.5, v_o=131.1,
            f_cap_enabled=False,
            q3_f_theta_enabled=True,
            f_step_enabled=True,
            variant=variant,
            v_signs=(1.0, 0.0, 0.0),
        )

    uoa = variant is Variant.UOA
    return CellParams(
        alpha=_TABLE_ALPHA,
        beta_x=0.7772, beta_y=0.0589, beta_z=0.2766,
        v_r=30.0, v_t=44.5, v_o=131.1,
        f_cap_enabled=uoa,
        q3_f_theta_enabled=uoa,
        variant=variant,
    )


_SCALAR_FIELDS = (
    "beta_x", "beta_y", "beta_z", "v_r", "v_t", "v_o",
    "f_cap", "f_cap_theta", "overshoot_gain", "f_step_theta", "f_step_value",
)
_FLAG_FIELDS = ("f_cap_enabled", "q3_f_theta_enabled", "f_step_enabled")


def _alpha_key(location: int, variable: str) -> str:
    return f"alpha{location}_{variable}"


def params_from_overrides(base: CellParams, overrides: Mapping[str, Any]) -> CellParams:
    """
    Apply a partial parameter set to a base parameter record.

    Keys are field names (beta_x, v_r, f_cap_enabled, ...), alpha entries
    written as alpha<location>_<variable> (e.g. alpha3_y) and v_signs.

    Raises:
        ValueError: On unknown keys or values that break the invariants
    """
    if not overrides:
        return base

    alpha = [list(row) for row in base.alpha]
    changes: Dict[str, Any] = {}
    for key, value in overrides.items():
        if key.startswith("alpha"):
            try:
                loc_part, var = key[len("alpha"):].split("_")
                alpha[int(loc_part)][VARIABLES.index(var)] = float(value)
            except (ValueError, IndexError) as e:
                raise ValueError(f"Unknown alpha override '{key}'") from e
        elif key in _SCALAR_FIELDS:
            changes[key] = float(value)
        elif key in _FLAG_FIELDS:
            changes[key] = bool(value)
        elif key == "v_signs":
            changes[key] = tuple(value)
        else:
            raise ValueError(f"Unknown cell parameter override '{key}'")

    changes["alpha"] = tuple(tuple(row) for row in alpha)
    return replace(base, **changes)


def params_to_overrides(params: CellParams) -> Dict[str, Any]:
    """Full override mapping that turns any preset of the same variant into params."""
    out: Dict[str, Any] = {}
    for loc in range(4):
        for var in VARIABLES:
            out[_alpha_key(loc, var)] = params.rate(loc, var)
    for name in _SCALAR_FIELDS:
        out[name] = getattr(params, name)
    for name in _FLAG_FIELDS:
        out[name] = getattr(params, name)
    out["v_signs"] = list(params.v_signs)
    return out


def dump_params(params: CellParams) -> Dict[str, Any]:
    """Audit dump of a parameter record, including how v is composed."""
    terms = " ".join(
        f"{'+' if s >= 0 else '-'}{abs(s):g}*v_{var}"
        for s, var in zip(params.v_signs, VARIABLES)
        if s != 0.0
    )
    dump = {"variant": params.variant.value, "composition": f"v = {terms}"}
    dump.update(params_to_overrides(params))
    return dump


# ---------------------------------------------------------------------------
# Scalar building blocks
# ---------------------------------------------------------------------------

def _f_theta_array(theta, cap, cap_theta, cap_enabled, step, step_theta, step_enabled):
    """Vectorised f(theta); theta is assumed clamped to [0, 1]. The step wins over the cap."""
    theta = np.asarray(theta, dtype=np.float64)
    raw = _F_GAIN_FAST * np.exp(_F_RATE_FAST * theta) + _F_GAIN_SLOW * np.exp(_F_RATE_SLOW * theta)
    capped = np.where(np.asarray(cap_enabled) & (theta >= cap_theta), cap, raw)
    return np.where(np.asarray(step_enabled) & (theta >= step_theta), step, capped)


def f_theta(theta: float, params: CellParams) -> float:
    """
    Repolarisation rate multiplier f(theta).

    Raises:
        ValueError: If theta lies outside [0, 1]
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    return float(_f_theta_array(
        theta, params.f_cap, params.f_cap_theta, params.f_cap_enabled,
        params.f_step_value, params.f_step_theta, params.f_step_enabled,
    ))


def compute_theta(v: float, params: CellParams) -> float:
    """Normalise a potential against v_r, clamped to [0, 1]."""
    if v < 0.0:
        logger.warning("Negative potential %.4f mV at theta capture, clamping theta to 0", v)
        return 0.0
    if v > params.v_r:
        logger.debug("Potential %.4f mV above v_r at theta capture, clamping theta to 1", v)
        return 1.0
    return v / params.v_r


def membrane_potential(state: CellState, params: Optional[CellParams] = None) -> float:
    """Compose v_x, v_y, v_z into the membrane potential (mV)."""
    signs = params.v_signs if params is not None else _DEFAULT_SIGNS
    return signs[0] * state.v_x + signs[1] * state.v_y + signs[2] * state.v_z


# ---------------------------------------------------------------------------
# Vectorised cell store
# ---------------------------------------------------------------------------

class Transitions(NamedTuple):
    """Cells that moved in one discrete step."""
    entered_q2: np.ndarray
    changed: np.ndarray


# Integration factors for a rate table: rate (..., 3) -> (growth, forced) with
# v_next = growth * v + forced * drive
StepFactors = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]


class CellBank:
    """
    A fixed set of cells held as numpy arrays.

    Parameter tables are built once; state arrays are updated in place by
    the engine. Time stamps that have not happened yet are NaN.

    Per-location step factors are tabulated by bind_step, so advancing the
    bank is one multiply-add and only cells that change location (or capture
    a new theta) touch the tables again.

    Usage:
        bank = CellBank(params)
        bank.bind_step(factors)
        bank.advance(v_in)
        moved = bank.discrete_step(v_in, now_ms)
    """

    def __init__(self, params: Sequence[CellParams]):
        if not params:
            raise ValueError("CellBank needs at least one cell")

        self.params: Tuple[CellParams, ...] = tuple(params)
        self.size: int = len(self.params)
        self._rows = np.arange(self.size)

        # Parameter tables
        self.alpha = np.array([p.alpha for p in self.params], dtype=np.float64)  # (n, 4, 3)
        self.beta = np.array([[p.beta_x, p.beta_y, p.beta_z] for p in self.params])
        self.signs = np.array([p.v_signs for p in self.params])
        self.v_r = np.array([p.v_r for p in self.params])
        self.v_t = np.array([p.v_t for p in self.params])
        self.v_o = np.array([p.v_o for p in self.params])
        self.f_cap = np.array([p.f_cap for p in self.params])
        self.f_cap_theta = np.array([p.f_cap_theta for p in self.params])
        self.f_cap_enabled = np.array([p.f_cap_enabled for p in self.params])
        self.f_step = np.array([p.f_step_value for p in self.params])
        self.f_step_theta = np.array([p.f_step_theta for p in self.params])
        self.f_step_enabled = np.array([p.f_step_enabled for p in self.params])
        self.q3_f_enabled = np.array([p.q3_f_theta_enabled for p in self.params])
        self.overshoot_gain = np.array([p.overshoot_gain for p in self.params])
        self._shared_signs = self.signs[0] if (self.signs == self.signs[0]).all() else None

        # Rates per location, q3 row scaled by f(theta)
        self.rate_table = self.alpha.copy()
        self._drive_table = np.zeros_like(self.alpha)
        self._drive_table[:, Location.Q1] = self.beta

        # State
        self.location = np.zeros(self.size, dtype=np.int8)
        self.v = np.zeros((self.size, 3))
        self.theta = np.zeros(self.size)
        self.overshoot_target = self.v_o.copy()
        self.last_q2_entry = np.full(self.size, np.nan)
        self.last_q0_entry = np.full(self.size, np.nan)

        # Step factors and guard bounds for the current locations
        self._factors: Optional[StepFactors] = None
        self._growth_table = self._input_table = None
        self._growth = np.ones((self.size, 3))
        self._input_gain = np.zeros((self.size, 3))
        self._driven = False
        self._upper = np.full(self.size, np.inf)
        self._lower = np.full(self.size, -np.inf)
        self._input_floor = np.zeros(self.size)

        self._refresh_q3_rate(self._rows)
        self._sync(self._rows)

    @classmethod
    def from_states(cls, params: Sequence[CellParams], states: Sequence[CellState]) -> "CellBank":
        bank = cls(params)
        for i, state in enumerate(states):
            bank.location[i] = int(state.location)
            bank.v[i] = (state.v_x, state.v_y, state.v_z)
            bank.theta[i] = state.theta
            bank.overshoot_target[i] = state.overshoot_target
            bank.last_q2_entry[i] = np.nan if state.last_q2_entry_ms is None else state.last_q2_entry_ms
            bank.last_q0_entry[i] = np.nan if state.last_q0_entry_ms is None else state.last_q0_entry_ms
        bank._refresh_q3_rate(bank._rows)
        bank._sync(bank._rows)
        return bank

    def state(self, index: int) -> CellState:
        """Snapshot one cell as an immutable CellState."""
        def stamp(value: float) -> Optional[float]:
            return None if math.isnan(value) else float(value)

        vx, vy, vz = (float(c) for c in self.v[index])
        return CellState(
            location=Location(int(self.location[index])),
            v_x=vx, v_y=vy, v_z=vz,
            theta=float(self.theta[index]),
            overshoot_target=float(self.overshoot_target[index]),
            last_q2_entry_ms=stamp(self.last_q2_entry[index]),
            last_q0_entry_ms=stamp(self.last_q0_entry[index]),
        )

    def _refresh_q3_rate(self, idx) -> None:
        """Recompute the q3 rates (and their step factors) of the given cells from theta."""
        f = _f_theta_array(
            self.theta[idx], self.f_cap[idx], self.f_cap_theta[idx], self.f_cap_enabled[idx],
            self.f_step[idx], self.f_step_theta[idx], self.f_step_enabled[idx],
        )
        scale = np.stack([np.where(self.q3_f_enabled[idx], f, 1.0), f, np.ones_like(f)], axis=-1)
        self.rate_table[idx, Location.Q3] = self.alpha[idx, Location.Q3] * scale
        if self._factors is not None:
            growth, forced = self._factors(self.rate_table[idx, Location.Q3])
            self._growth_table[idx, Location.Q3] = growth
            self._input_table[idx, Location.Q3] = forced * self._drive_table[idx, Location.Q3]

    def _sync(self, idx) -> None:
        """Point the current factors and guard bounds of the given cells at their locations."""
        loc = self.location[idx]
        if self._factors is not None:
            self._growth[idx] = self._growth_table[idx, loc]
            self._input_gain[idx] = self._input_table[idx, loc]
        self._driven = bool((self.location == Location.Q1).any())

        # A move is possible once pot >= upper, pot < lower or v_in > input_floor
        self._upper[idx] = np.select(
            [loc == Location.Q1, loc == Location.Q2], [self.v_t[idx], self.overshoot_target[idx]], np.inf
        )
        self._lower[idx] = np.select(
            [loc == Location.Q1, loc == Location.Q3], [np.inf, self.v_r[idx]], -np.inf
        )
        self._input_floor[idx] = np.where(loc == Location.Q0, 0.0, np.inf)

    def bind_step(self, factors: StepFactors) -> None:
        """
        Tabulate integration factors for every cell and location.

        Args:
            factors: maps a rate array (..., 3) to (growth, forced) arrays
        """
        self._factors = factors
        growth, forced = factors(self.rate_table)
        self._growth_table = np.array(growth, dtype=np.float64)
        self._input_table = np.array(forced, dtype=np.float64) * self._drive_table
        self._sync(self._rows)

    def advance(self, v_in: np.ndarray) -> None:
        """
        Integrate every cell over one step with its input held constant.

        Raises:
            RuntimeError: If bind_step has not been called
        """
        if self._factors is None:
            raise RuntimeError("CellBank.advance needs bind_step first")
        np.multiply(self.v, self._growth, out=self.v)
        if self._driven:
            self.v += v_in[:, None] * self._input_gain

    def potential(self) -> np.ndarray:
        if self._shared_signs is not None:
            return self.v @ self._shared_signs
        return (self.v * self.signs).sum(axis=1)

    def flow_terms(self, v_in: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Linear flow coefficients for the current locations.

        Returns:
            (rate, drive) with v' = rate * v + drive, both shaped (n, 3)
        """
        loc = self.location
        rate = self.rate_table[self._rows, loc]
        drive = self._drive_table[self._rows, loc] * np.asarray(v_in, dtype=np.float64)[:, None]
        return rate, drive

    def refractory_ms(self, now_ms: float) -> np.ndarray:
        """
        Length of each cell's most recent action potential.

        A cell inside an action potential reports the time since its
        upstroke; a cell that never fired reports 0.
        """
        in_ap = ~(self.last_q0_entry >= self.last_q2_entry)
        last_apd = self.last_q0_entry - self.last_q2_entry
        ongoing = now_ms - self.last_q2_entry
        return np.nan_to_num(np.where(in_ap, ongoing, last_apd), nan=0.0)

    def discrete_step(
        self, v_in: np.ndarray, now_ms: float, pot: Optional[np.ndarray] = None,
    ) -> Optional[Transitions]:
        """
        Apply at most one guarded transition per cell.

        Guards are evaluated on the pre-step locations, so a cell can never
        take two transitions in one call.

        Args:
            v_in: input per cell held over the step
            now_ms: time stamp for entry records
            pot: current potentials, computed when omitted

        Returns:
            Transitions of this step, or None when no cell moved
        """
        pot = self.potential() if pot is None else pot
        v_in = np.asarray(v_in, dtype=np.float64)
        if not (
            (pot >= self._upper).any() or (pot < self._lower).any() or (v_in > self._input_floor).any()
        ):
            return None

        loc = self.location
        to_q1 = (loc == Location.Q0) & (v_in > 0.0)
        in_q1 = loc == Location.Q1
        # A q1 cell drops back only once it is under v_r again
        to_q0_failed = in_q1 & (v_in <= 0.0) & (pot <= self.v_r)
        to_q2 = in_q1 & ~to_q0_failed & (pot >= self.v_t)
        to_q3 = (loc == Location.Q2) & (pot >= self.overshoot_target)
        to_q0 = (loc == Location.Q3) & (pot < self.v_r)
        changed = to_q1 | to_q0_failed | to_q2 | to_q3 | to_q0
        if not changed.any():
            return None

        if to_q1.any():
            idx = np.flatnonzero(to_q1)
            ratio = pot[idx] / self.v_r[idx]
            if (ratio < 0.0).any():
                logger.debug("Clamped negative theta on %d cell(s) at %.4f ms", int((ratio < 0).sum()), now_ms)
            self.theta[idx] = np.clip(ratio, 0.0, 1.0)
            self._refresh_q3_rate(idx)
            loc[idx] = Location.Q1

        if to_q0_failed.any():
            loc[to_q0_failed] = Location.Q0

        if to_q2.any():
            loc[to_q2] = Location.Q2
            self.overshoot_target[to_q2] = (
                self.v_o[to_q2] - self.overshoot_gain[to_q2] * np.sqrt(self.theta[to_q2])
            )
            self.last_q2_entry[to_q2] = now_ms

        if to_q3.any():
            loc[to_q3] = Location.Q3

        if to_q0.any():
            loc[to_q0] = Location.Q0
            self.last_q0_entry[to_q0] = now_ms

        self._sync(np.flatnonzero(changed))
        return Transitions(to_q2, changed)


# ---------------------------------------------------------------------------
# Scalar operations on one cell
# ---------------------------------------------------------------------------

def cell_flow(state: CellState, v_in: float, params: CellParams) -> Tuple[float, float, float]:
    """Time derivatives (dv_x, dv_y, dv_z) per ms for the current location."""
    bank = CellBank.from_states([params], [state])
    rate, drive = bank.flow_terms(np.array([v_in], dtype=np.float64))
    dv = rate[0] * bank.v[0] + drive[0]
    return float(dv[0]), float(dv[1]), float(dv[2])


def cell_discrete_step(state: CellState, v_in: float, params: CellParams, now_ms: float) -> CellState:
    """Apply the enabled discrete transition (if any) to a single cell."""
    bank = CellBank.from_states([params], [state])
    bank.discrete_step(np.array([v_in], dtype=np.float64), now_ms)
    return bank.state(0)


def measure_apd_di(
    times: Sequence[float],
    potentials: Sequence[float],
    locations: Optional[Sequence[int]] = None,
    threshold_frac: float = 0.10,
) -> List[Beat]:
    """
    Segment a single-cell voltage series into beats.

    A beat starts at q2 entry (or, without locations, where the potential
    first rises above half of the series peak). APD runs until the potential
    falls to threshold_frac of the beat's peak; DI runs from that fall to the
    next beat's start. Beats that never fall are dropped, and the final beat
    has no DI.

    Args:
        times: sample times in ms
        potentials: membrane potential per sample in mV
        locations: optional HA location per sample
        threshold_frac: repolarisation level as a fraction of the beat peak

    Returns:
        List of Beat records, empty when no beat completes
    """
    t = np.asarray(times, dtype=np.float64)
    v = np.asarray(potentials, dtype=np.float64)
    if t.size < 2:
        return []

    if locations is not None:
        active = np.asarray(locations) >= Location.Q2
    else:
        peak = v.max()
        if peak <= 0.0:
            return []
        active = v >= 0.5 * peak

    # A beat already under way at the first sample is incomplete
    onsets = np.flatnonzero(active[1:] & ~active[:-1]) + 1

    beats: List[Beat] = []
    for n, start in enumerate(onsets):
        end = onsets[n + 1] if n + 1 < len(onsets) else len(v)
        segment = v[start:end]
        peak = segment.max()
        if peak <= 0.0:
            continue
        below = np.flatnonzero(segment <= threshold_frac * peak)
        if below.size == 0:
            continue
        fall = start + below[0]
        di = float(t[onsets[n + 1]] - t[fall]) if n + 1 < len(onsets) else None
        beats.append(Beat(float(t[start]), float(t[fall] - t[start]), di))

    return beats


def excited_durations(times: Sequence[float], locations: Sequence[int]) -> List[float]:
    """
    Time each beat spends excited, from q2 entry until the cell is back in q0.

    Unlike measure_apd_di this ignores the potential, so a residual plateau
    left behind in q0 does not count towards the beat. A beat still excited
    at the end of the series is dropped.
    """
    t = np.asarray(times, dtype=np.float64)
    excited = np.asarray(locations) >= Location.Q2
    if t.size < 2:
        return []

    onsets = np.flatnonzero(excited[1:] & ~excited[:-1]) + 1
    ends = np.flatnonzero(~excited[1:] & excited[:-1]) + 1
    durations = []
    for start in onsets:
        later = ends[ends > start]
        if later.size == 0:
            break
        durations.append(float(t[later[0]] - t[start]))
    return durations


# ---------------------------------------------------------------------------
# Closed-form action potential estimate
# ---------------------------------------------------------------------------

def _linear_solution(v0: np.ndarray, rate: np.ndarray, drive: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Exact solution of v' = rate * v + drive sampled at times t, shape (len(t), 3)."""
    rt = np.outer(t, rate)
    growth = np.exp(rt)
    with np.errstate(divide="ignore", invalid="ignore"):
        forced = np.where(rate != 0.0, np.expm1(rt) / np.where(rate != 0.0, rate, 1.0), t[:, None])
    return v0 * growth + drive * forced


def _time_to_guard(
    v0: np.ndarray,
    rate: np.ndarray,
    drive: np.ndarray,
    signs: np.ndarray,
    guard,
    horizon_ms: float,
    max_horizon_ms: float,
    samples: int = 4001,
) -> Tuple[Optional[float], np.ndarray]:
    """First sampled time at which guard(potential) holds, widening the horizon as needed."""
    while horizon_ms <= max_horizon_ms:
        t = np.linspace(0.0, horizon_ms, samples)
        values = _linear_solution(v0, rate, drive, t)
        hit = np.flatnonzero(guard(values @ signs))
        if hit.size:
            return float(t[hit[0]]), values[hit[0]]
        horizon_ms *= 2.0
    return None, v0


@lru_cache(maxsize=256)
def estimate_apd_ms(params: CellParams, amplitude_mv: float = 100.0, duration_ms: float = 1.0) -> float:
    """
    Action potential duration of a resting cell hit by one stimulus.

    Follows the flows location by location in closed form, from q2 entry
    until the potential drops below v_r in q3.

    Returns:
        APD in ms, or NaN when the stimulus does not capture
    """
    signs = np.asarray(params.v_signs)
    alpha = np.asarray(params.alpha)
    beta = np.array([params.beta_x, params.beta_y, params.beta_z])
    v0 = np.zeros(3)

    t_up, v_up = _time_to_guard(
        v0, alpha[Location.Q1], beta * amplitude_mv, signs,
        lambda pot: pot >= params.v_t, duration_ms, duration_ms,
    )
    if t_up is None:
        return float("nan")

    # A stimulus from rest captures theta = 0
    t_peak, v_peak = _time_to_guard(
        v_up, alpha[Location.Q2], np.zeros(3), signs,
        lambda pot: pot >= params.v_o, 1.0, 4096.0,
    )
    if t_peak is None:
        return float("nan")

    f0 = f_theta(0.0, params)
    q3_rate = alpha[Location.Q3] * np.array([f0 if params.q3_f_theta_enabled else 1.0, f0, 1.0])
    t_rest, _ = _time_to_guard(
        v_peak, q3_rate, np.zeros(3), signs,
        lambda pot: pot < params.v_r, 64.0, 65536.0,
    )
    if t_rest is None:
        return float("nan")
    return t_peak + t_rest
