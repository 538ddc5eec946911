"""
Heart Conduction Simulator Package
"""
__version__ = "0.3.0"

# Make main components easily importable
from heartsim.models import SCHEMA_VERSION, HeartConfig
from heartsim.cell import CellParams, cell_params_preset
from heartsim.path import PathParams
from heartsim.network import Scenario, apply_scenario, default_heart, load_heart, validate_config
from heartsim.engine import SimSettings, Trace, activation_report, restitution_curve, simulate
from heartsim.config import config

__all__ = [
    "SCHEMA_VERSION",
    "HeartConfig",
    "Scenario",
    "CellParams",
    "cell_params_preset",
    "PathParams",
    "apply_scenario",
    "default_heart",
    "load_heart",
    "validate_config",
    "SimSettings",
    "Trace",
    "activation_report",
    "restitution_curve",
    "simulate",
    "config",
]
