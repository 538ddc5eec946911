"""
Records that make up a heart configuration file.

Configs are treated as immutable values: transformations in
heartsim.network return new records instead of editing these in place.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Tuple

from heartsim.cell import Variant
from heartsim.path import PathParams

SCHEMA_VERSION = 1


class Region(str, Enum):
    ATRIAL = "atrial"
    AV = "av"
    PURKINJE = "purkinje"
    VENTRICULAR = "ventricular"


class CouplingMode(str, Enum):
    UOA_H_K = "uoa_h_k"
    OXFORD_G_K = "oxford_g_k"


class Severity(str, Enum):
    ERROR = "error"
    WARNING = "warning"
    INFO = "info"


@dataclass(frozen=True)
class NodeSpec:
    """One cell of the network."""
    id: str
    region: Region
    cell_overrides: Dict[str, Any] = field(default_factory=dict)
    distance_coeff: Optional[float] = None  # Oxford d_k

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValueError(f"Node id must be a non-empty string, got {self.id!r}")
        object.__setattr__(self, "region", Region(self.region))


@dataclass(frozen=True)
class PathSpec:
    """A bidirectional path; direction ij runs from `a` to `b`."""
    a: str
    b: str
    params: PathParams

    @property
    def id(self) -> str:
        return f"{self.a}-{self.b}"


@dataclass(frozen=True)
class Stimulus:
    node_id: str
    time_ms: float
    amplitude_mv: float = 100.0
    duration_ms: float = 1.0

    def __post_init__(self):
        """Reject stimuli that cannot be scheduled."""
        if self.time_ms < 0:
            raise ValueError(f"Stimulus time must be >= 0, got {self.time_ms}")
        if self.amplitude_mv <= 0:
            raise ValueError(f"Stimulus amplitude must be > 0, got {self.amplitude_mv}")
        if self.duration_ms <= 0:
            raise ValueError(f"Stimulus duration must be > 0, got {self.duration_ms}")


@dataclass(frozen=True)
class HeartConfig:
    """
    A complete network: cells, paths, stimuli and global constants.

    Cell parameters resolve as preset, then region_overrides[region], then
    the node's own cell_overrides.
    """
    name: str
    nodes: Tuple[NodeSpec, ...]
    paths: Tuple[PathSpec, ...]
    stimuli: Tuple[Stimulus, ...] = ()
    cell_preset: Variant = Variant.UOA
    coupling_mode: CouplingMode = CouplingMode.UOA_H_K
    a_m: float = 1.0
    c_m: float = 1.0
    sa_node: Optional[str] = "SA"
    sa_cycle_ms: Optional[float] = None
    region_overrides: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "paths", tuple(self.paths))
        object.__setattr__(self, "stimuli", tuple(self.stimuli))
        object.__setattr__(self, "cell_preset", Variant(self.cell_preset))
        object.__setattr__(self, "coupling_mode", CouplingMode(self.coupling_mode))
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(
                f"Unsupported schema_version {self.schema_version} (expected {SCHEMA_VERSION})"
            )

    @property
    def node_ids(self) -> Tuple[str, ...]:
        return tuple(node.id for node in self.nodes)

    def node(self, node_id: str) -> NodeSpec:
        for node in self.nodes:
            if node.id == node_id:
                return node
        raise KeyError(f"Unknown node '{node_id}'")

    def __repr__(self) -> str:
        return (
            f"HeartConfig(name='{self.name}', nodes={len(self.nodes)}, paths={len(self.paths)}, "
            f"stimuli={len(self.stimuli)}, coupling='{self.coupling_mode.value}')"
        )


@dataclass(frozen=True)
class Diagnostic:
    severity: Severity
    code: str
    message: str

    def __str__(self) -> str:
        return f"[{self.severity.value}] {self.code}: {self.message}"
