"""
Tests for the command line: argument handling, output files and
re-running from a manifest.
"""
import json
import logging

import pandas as pd
import pytest

from heartsim import __version__
from heartsim.main import (
    ACTIVATION_FILE,
    LOCATIONS_FILE,
    MANIFEST_FILE,
    PATHS_FILE,
    RESTITUTION_FILE,
    TRACE_FILE,
    bcl_range,
    main,
    parse_set,
)
from heartsim.network import SCENARIOS, save_heart, two_cell_demo

# Configure logging for test output
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Test Fixtures
# ---------------------------------------------------------------------------

@pytest.fixture
def two_cell_file(tmp_path):
    path = tmp_path / "two_cell.json"
    save_heart(two_cell_demo(), path)
    return path


def _run_args(config_file, out_dir, *extra):
    return [
        "run", "--config", str(config_file), "--duration-ms", "100",
        "--dt-ms", "0.05", "--decimation", "4", "--output", str(out_dir), *extra,
    ]


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def test_parse_set():
    assert parse_set(["path.I-J.delta_ij=40", "name=demo", "region.av.alpha3_y=0.02", "x=true"]) == {
        "path.I-J.delta_ij": 40,
        "name": "demo",
        "region.av.alpha3_y": 0.02,
        "x": True,
    }
    with pytest.raises(ValueError):
        parse_set(["no_equals_sign"])


def test_bcl_range():
    assert bcl_range(100.0, 140.0, 20.0) == [100.0, 120.0, 140.0]
    assert bcl_range(300.0, 300.0, 10.0) == [300.0]
    assert bcl_range(200.0, 100.0, 10.0) == []
    assert bcl_range(100.0, 200.0, 0.0) == []


# ---------------------------------------------------------------------------
# Argument handling
# ---------------------------------------------------------------------------

def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    names = [line.split()[0] for line in lines]
    assert names == sorted(s.value for s in SCENARIOS)
    assert all("[" in line for line in lines)


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert f"heartsim {__version__} (schema 1)" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "--duration-ms", "10", "--bogus"],
        ["run", "--scenario", "no_such_scenario", "--duration-ms", "10"],
        ["run"],
        ["restitution", "--bcl-start", "400", "--bcl-end", "300", "--bcl-step", "10"],
        [],
    ],
)
def test_usage_errors_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def test_run_writes_outputs(two_cell_file, tmp_path):
    out = tmp_path / "out"
    assert main(_run_args(two_cell_file, out, "--record-paths")) == 0

    for name in (TRACE_FILE, LOCATIONS_FILE, ACTIVATION_FILE, PATHS_FILE, MANIFEST_FILE):
        assert (out / name).exists(), name

    raw = (out / TRACE_FILE).read_bytes()
    assert raw.startswith(b"time_ms,I,J\n")
    assert b"\r\n" not in raw

    trace = pd.read_csv(out / TRACE_FILE)
    assert len(trace) == 501
    activation = pd.read_csv(out / ACTIVATION_FILE)
    assert activation["q2_entry_count"].tolist() == [1, 1]

    manifest = json.loads((out / MANIFEST_FILE).read_text(encoding="utf-8"))
    assert manifest["version"] == __version__
    assert manifest["schema_version"] == 1
    assert manifest["settings"]["dt_ms"] == 0.05
    assert len(manifest["config_hash"]) == 64
    assert manifest["outputs"]["path_locations"] == PATHS_FILE


def test_run_from_manifest_is_byte_identical(two_cell_file, tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    assert main(_run_args(two_cell_file, first, "--set", "path.I-J.delta_ij=25")) == 0
    assert main(["run", "--from-manifest", str(first / MANIFEST_FILE), "--output", str(second)]) == 0

    for name in (TRACE_FILE, LOCATIONS_FILE, ACTIVATION_FILE, MANIFEST_FILE):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name
    manifest = json.loads((second / MANIFEST_FILE).read_text(encoding="utf-8"))
    assert manifest["overrides"] == {"path.I-J.delta_ij": 25}


def test_run_rejects_invalid_config(two_cell_file, tmp_path):
    out = tmp_path / "out"
    assert main(_run_args(two_cell_file, out, "--set", "path.I-J.sigma_ij=0")) == 1
    assert not (out / TRACE_FILE).exists()


def test_run_rejects_unknown_override(two_cell_file, tmp_path):
    assert main(_run_args(two_cell_file, tmp_path / "out", "--set", "path.X-Y.delta_ij=5")) == 1


@pytest.mark.timeout(120)
def test_run_default_heart_scenario(tmp_path):
    out = tmp_path / "out"
    argv = [
        "run", "--scenario", "normal", "--duration-ms", "20", "--dt-ms", "0.01",
        "--decimation", "100", "--output", str(out),
    ]
    assert main(argv) == 0
    header = (out / TRACE_FILE).read_text(encoding="utf-8").splitlines()[0].split(",")
    assert len(header) == 34
    assert header[:2] == ["time_ms", "SA"]


# ---------------------------------------------------------------------------
# restitution
# ---------------------------------------------------------------------------

@pytest.mark.timeout(120)
def test_restitution_single_bcl(tmp_path):
    argv = [
        "restitution", "--preset", "uoa", "--bcl-start", "300", "--bcl-end", "300",
        "--bcl-step", "10", "--dt-ms", "0.05", "--output", str(tmp_path),
    ]
    assert main(argv) == 0
    frame = pd.read_csv(tmp_path / RESTITUTION_FILE)
    assert list(frame.columns) == ["bcl_ms", "di_ms", "apd_ms"]
    assert len(frame) == 1
    assert frame["bcl_ms"].iloc[0] == 300.0
    assert frame["apd_ms"].iloc[0] + frame["di_ms"].iloc[0] == pytest.approx(300.0, abs=3.0)
