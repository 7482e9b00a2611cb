from __future__ import annotations

import json
import math
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from conftest import SCENARIOS
from iobnt_aoi.cli import EXIT_FAILED, EXIT_INVALID, EXIT_OK, main
from iobnt_aoi.scenario import (REPORT_COLUMNS, ScenarioError, StageError, load_scenario, run, run_point, sweep,
                                validate, write_atomic)

GOLDEN = Path(__file__).parent / "golden"
SHIPPED = ("heart", "wrist", "femoralis", "ultrasonic", "thz_bandwidth")

FAST = """[scenario]
name = fast
infection = {infection}
gateway = {gateway}
n_s = 1000
seed = 3

[heart]
f_heart_bpm = 75

[channel]
kind = fixed-p_loss
p_loss = {p_loss}

[oracle]
enabled = {oracle}
horizon_s = 2000

[sweep]
parameter = channel.p_loss
values = {values}
"""


def scenario_file(tmp_path, name="s.ini", **kw):
    fields = dict(infection="S42", gateway="S3", p_loss="0.0", oracle="no", values="0, 0.5")
    fields.update(kw)
    path = tmp_path / name
    path.write_text(FAST.format(**fields))
    return path


# --- validate ---------------------------------------------------------------


def test_empty_file_matches_golden(tmp_path, capsys):
    path = tmp_path / "empty.ini"
    path.write_text("")
    assert main(["validate", "--config", str(path)]) == EXIT_INVALID
    assert capsys.readouterr().out == (GOLDEN / "validate_empty.txt").read_text()


def test_shipped_scenarios_match_golden(capsys):
    codes = [main(["validate", "--config", str(SCENARIOS / f"{s}.ini")]) for s in SHIPPED]
    assert codes == [EXIT_OK] * len(SHIPPED)
    assert capsys.readouterr().out == (GOLDEN / "validate_shipped.txt").read_text()


def test_infection_equals_gateway(tmp_path):
    diags = validate(scenario_file(tmp_path, gateway="S42"))
    assert [str(d) for d in diags] == ["scenario.gateway: infection and gateway must differ"]


@pytest.mark.parametrize("kw, key", [
    (dict(gateway="S99"), "scenario.gateway"),
    (dict(p_loss="1.0"), "channel.p_loss"),
    (dict(p_loss="abc"), "channel.p_loss"),
    (dict(values=""), "sweep.values"),
    (dict(values="0, x"), "sweep.values"),
])
def test_bad_fields_are_keyed(tmp_path, kw, key):
    assert key in {d.key for d in validate(scenario_file(tmp_path, **kw))}


def test_unreadable_file():
    assert validate("/nonexistent/s.ini")[0].key == "file"


def test_load_rejects_invalid(tmp_path):
    with pytest.raises(ScenarioError, match="must differ"):
        load_scenario(scenario_file(tmp_path, gateway="S42"))


# --- run and sweep ----------------------------------------------------------


def test_run_writes_schema_stable_report(tmp_path):
    paths = run(load_scenario(scenario_file(tmp_path)), tmp_path / "out")
    names = {p.name for p in paths}
    assert names == {"report.csv", "manifest.json", "summary.txt"}
    header = (tmp_path / "out" / "report.csv").read_text().splitlines()[0].split(",")
    assert tuple(header[:len(REPORT_COLUMNS)]) == REPORT_COLUMNS
    assert not list((tmp_path / "out").glob(".*.tmp"))


def test_manifest_reproduces_inputs(tmp_path):
    sc = load_scenario(scenario_file(tmp_path))
    run(sc, tmp_path / "out")
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["scenario"]["seed"] == 3 and man["scenario"]["infection"] == "S42"
    assert set(man["fixtures"]) >= {"catalog", "default_transition_75bpm.csv"}
    assert all(len(h) == 64 for h in man["fixtures"].values())
    assert "aoi" in man["stage_seconds"]
    assert man["outputs"] == ["report.csv"]


def test_rerun_is_byte_identical(tmp_path):
    sc = load_scenario(scenario_file(tmp_path, oracle="yes"))
    run(sc, tmp_path / "a")
    run(sc, tmp_path / "b")
    for name in ("report.csv", "sawtooth.csv", "summary.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_seed_override_changes_oracle(tmp_path):
    path = scenario_file(tmp_path, oracle="yes")
    a = run_point(load_scenario(path)).report
    b = run_point(load_scenario(path, seed=4)).report
    assert a.paoi_closed == b.paoi_closed and a.paoi_oracle_mean != b.paoi_oracle_mean


def test_sweep_p_loss_rows_increase(tmp_path):
    sweep(load_scenario(scenario_file(tmp_path)), tmp_path / "out")
    lines = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
    header = lines[0].split(",")
    assert header[:2] == ["sweep_parameter", "sweep_value"] and len(lines) == 3
    col = header.index("paoi_closed")
    assert float(lines[2].split(",")[col]) > float(lines[1].split(",")[col])


def test_sweep_parallel_equals_serial(tmp_path):
    sc = load_scenario(scenario_file(tmp_path, oracle="yes", values="0, 0.3, 0.6"))
    sweep(sc, tmp_path / "one", jobs=1)
    sweep(sc, tmp_path / "two", jobs=2)
    assert (tmp_path / "one" / "sweep.csv").read_bytes() == (tmp_path / "two" / "sweep.csv").read_bytes()


def test_sweep_errors(tmp_path):
    sc = load_scenario(scenario_file(tmp_path))
    with pytest.raises(ScenarioError, match="empty"):
        sweep(sc, tmp_path / "out", values=[])
    with pytest.raises(ScenarioError, match="not numeric"):
        sweep(sc, tmp_path / "out", parameter="channel.kind", values=[1.0])
    with pytest.raises(ScenarioError, match="unknown"):
        sweep(sc, tmp_path / "out", parameter="scenario.gateway", values=[1.0])


def test_bandwidth_sweep_flags_interior_minimum(tmp_path):
    sc = load_scenario(SCENARIOS / "thz_bandwidth.ini")
    sweep(sc, tmp_path / "out", values=[1e9, 5e9, 50e9])
    assert "interior BER minimum at channel.bandwidth_hz = 5e+09" in (tmp_path / "out" / "summary.txt").read_text()


def test_placement_ordering(tmp_path):
    paoi = {gw: run_point(load_scenario(scenario_file(tmp_path, f"{gw}.ini", gateway=gw))).report.paoi_closed
            for gw in ("S3", "S13", "S39")}
    assert paoi["S3"] == min(paoi.values())
    assert abs(paoi["S13"] - paoi["S39"]) / paoi["S39"] < 0.15


def test_stage_failure_names_stage(tmp_path):
    path = scenario_file(tmp_path, oracle="yes")
    path.write_text(path.read_text().replace("horizon_s = 2000", "horizon_s = 5"))
    with pytest.raises(StageError) as err:
        run_point(load_scenario(path))
    assert err.value.stage == "oracle"


# --- CLI --------------------------------------------------------------------


def test_cli_exit_codes(tmp_path, capsys):
    good = scenario_file(tmp_path)
    assert main(["run", "--config", str(good), "--out", str(tmp_path / "o")]) == EXIT_OK
    assert "average PAoI" in capsys.readouterr().out
    assert main(["run", "--config", str(scenario_file(tmp_path, "bad.ini", gateway="S42")),
                 "--out", str(tmp_path / "o")]) == EXIT_INVALID
    assert main(["sweep", "--config", str(good), "--out", str(tmp_path / "o"), "--values", ""]) == EXIT_INVALID
    assert main(["bogus"]) == EXIT_INVALID
    slow = scenario_file(tmp_path, "short.ini", oracle="yes")
    slow.write_text(slow.read_text().replace("horizon_s = 2000", "horizon_s = 5"))
    assert main(["run", "--config", str(slow), "--out", str(tmp_path / "o")]) == EXIT_FAILED
    assert "stage oracle failed" in capsys.readouterr().err


def test_cli_exports(tmp_path):
    good = scenario_file(tmp_path)
    assert main(["export-matrix", "--config", str(good), "--out", str(tmp_path / "m")]) == EXIT_OK
    assert main(["export-loops", "--config", str(good), "--out", str(tmp_path / "m")]) == EXIT_OK
    assert (tmp_path / "m" / "loops.csv").read_text().startswith("loop,capillary,p_c,T_c_seconds")
    assert (tmp_path / "m" / "matrix.csv").exists() and (tmp_path / "m" / "stationary.csv").exists()


def test_write_atomic_replaces(tmp_path):
    p = tmp_path / "x" / "f.txt"
    write_atomic(p, "one")
    write_atomic(p, "two")
    assert p.read_text() == "two" and len(list(p.parent.iterdir())) == 1


@settings(max_examples=25, deadline=None)
@given(p=st.floats(0.0, 0.99), n_s=st.integers(1, 5000))
def test_with_value_preserves_everything_else(p, n_s):
    sc = load_scenario(SCENARIOS / "heart.ini")
    moved = sc.with_value("channel.p_loss", p).with_value("scenario.n_s", n_s)
    assert moved.channel["p_loss"] == p and moved.n_s == n_s
    assert moved.echo() | {"channel": sc.channel, "n_s": sc.n_s} == sc.echo()
    assert not math.isnan(float(moved.channel["p_loss"]))
