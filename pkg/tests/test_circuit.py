from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iobnt_aoi.circuit import (GROUND, AssemblyError, Branch, BranchKind, CircuitNetwork, DegenerateBifurcation,
                               FlowTrace, HeartParameters, TraceLengthError, TransientConfig, assemble_network,
                               bifurcation_ratios, count_peaks, kcl_residual, mean_flow, simulate_transient)
from iobnt_aoi.markov import build_transition_matrix
from iobnt_aoi.vascular import parse_catalog

SRC = BranchKind.PRESSURE_SOURCE


def rc_net(r=2.0, c=0.5, v=10.0):
    return CircuitNetwork(("a", "b"), (Branch(SRC, GROUND, "a", v, "src"),
                                       Branch(BranchKind.RESISTOR, "a", "b", r, "r"),
                                       Branch(BranchKind.CAPACITOR, "b", GROUND, c, "c")))


def rc_error(scheme, dt):
    tr = simulate_transient(rc_net(), TransientConfig(dt=dt, duration=5.0, initial_pressure=0.0, scheme=scheme))
    return float(np.max(np.abs(tr.pressure("b") - 10 * (1 - np.exp(-tr.t))))) / 10


@pytest.mark.parametrize("scheme", ["bdf1", "bdf2"])
def test_rc_step_response(scheme):
    assert rc_error(scheme, 1e-3) < 1e-3


def test_bdf2_is_second_order():
    ratio = rc_error("bdf2", 2e-3) / rc_error("bdf2", 1e-3)
    assert 3.5 < ratio < 4.5


def test_rl_current_rise():
    r, l, v = 4.0, 2.0, 8.0
    net = CircuitNetwork(("a", "b"), (Branch(SRC, GROUND, "a", v, "src"),
                                      Branch(BranchKind.RESISTOR, "a", "b", r, "r"),
                                      Branch(BranchKind.INDUCTOR, "b", GROUND, l, "l")))
    tr = simulate_transient(net, TransientConfig(dt=1e-3, duration=3.0))
    analytic = v / r * (1 - np.exp(-r / l * tr.t))
    assert np.max(np.abs(tr.current("l") - analytic)) < 1e-3 * v / r


def test_reverse_biased_diode_blocks():
    # source drives node a negative; the diode a->b must carry (almost) nothing
    net = CircuitNetwork(("a", "b"), (Branch(SRC, GROUND, "a", -5.0, "src"),
                                      Branch(BranchKind.IDEAL_DIODE, "a", "b", None, "d"),
                                      Branch(BranchKind.RESISTOR, "b", GROUND, 1.0, "r")))
    tr = simulate_transient(net, TransientConfig(dt=1e-3, duration=0.1))
    assert np.max(np.abs(tr.current("d"))) < 1e-8


def test_diode_rectifies_sine():
    f = 2.0
    net = CircuitNetwork(("a", "b"), (Branch(SRC, GROUND, "a", lambda t: math.sin(2 * math.pi * f * t), "src"),
                                      Branch(BranchKind.IDEAL_DIODE, "a", "b", None, "d"),
                                      Branch(BranchKind.RESISTOR, "b", GROUND, 1.0, "r")))
    tr = simulate_transient(net, TransientConfig(dt=1e-3, duration=2.0))
    i = tr.current("d")
    assert i.min() > -1e-8
    assert i.max() == pytest.approx(1.0, rel=1e-3)


@pytest.mark.parametrize("branches, fragment", [
    ((Branch(SRC, GROUND, "a", 1.0, "s"), Branch(BranchKind.RESISTOR, "a", "zz", 1.0, "r")), "unknown node"),
    ((Branch(SRC, GROUND, "a", 1.0, "s"), Branch(BranchKind.RESISTOR, "a", "a", 1.0, "r")), "self loop"),
    ((Branch(SRC, GROUND, "a", 1.0, "s"), Branch(BranchKind.RESISTOR, "a", GROUND, 1.0, "s")), "used twice"),
    ((Branch(BranchKind.RESISTOR, "a", GROUND, 1.0, "r"),), "pressure source"),
])
def test_network_validation(branches, fragment):
    with pytest.raises(AssemblyError, match=fragment):
        CircuitNetwork(("a",), branches)


def test_disconnected_network_rejected():
    with pytest.raises(AssemblyError, match="disconnected"):
        CircuitNetwork(("a", "b"), (Branch(SRC, GROUND, "a", 1.0, "s"),))


def test_config_validation():
    with pytest.raises(ValueError):
        TransientConfig(dt=0.0, duration=1.0)
    with pytest.raises(ValueError):
        TransientConfig(dt=1e-3, duration=1.0, scheme="trapezoid")
    with pytest.raises(ValueError):
        HeartParameters(c_min=5.0, c_max=1.0)
    with pytest.raises(ValueError):
        HeartParameters(clip_fraction=1.0)


def test_default_assembly_counts(catalog):
    net = assemble_network(catalog)
    assert net.count(BranchKind.VARIABLE_CAPACITOR) == 1
    assert net.count(BranchKind.IDEAL_DIODE) == 2


SINGLE = """state_id,name,kind,length_m,radius_m,thickness_m,speed_mps,downstream,R,L,C
S1,Right Heart,heart-chamber,0.05,,,0.1,S2,0.003,0.0001,2.0
S2,Lungs,lung,0.2,,,0.05,S3,0.08,0.0005,4.0
S3,Left Heart,heart-chamber,0.05,,,0.1,S4,0.003,0.0001,2.0
S4,Aorta,artery,0.1,0.012,0.002,0.2,S5,,,
S5,Bed,capillary,0.02,0.001,0.0001,0.1,S6,5.0,0.0,0.0
S6,Vein,vein,0.5,0.01,0.001,0.03,S1,0.01,0.0,1.0
"""


def test_single_segment_assembly():
    net = assemble_network(parse_catalog(SINGLE))
    s4 = [net.branches[i].kind for i in net.tagged("S4")]
    assert sorted(k.value for k in s4) == ["capacitor", "inductor", "resistor"]


def test_capacitance_waveform_is_clipped():
    h = HeartParameters()
    t = np.linspace(0, h.period, 1001)
    c = np.array([h.capacitance(x) for x in t])
    assert c.min() == pytest.approx(h.c_min) and c.max() == pytest.approx(h.c_max)
    assert np.mean(np.isclose(c, h.c_min)) == pytest.approx(h.clip_fraction, abs=0.01)


def _trace(values, dt=0.01):
    values = np.asarray(values, float)
    t = dt * np.arange(1, len(values) + 1)
    return FlowTrace(t, values[:, None], np.zeros((len(values), 1)), ["x"], ["n"])


def test_mean_flow_constant_sine_and_rectified():
    f = 60.0  # one cycle per second
    n = 9000
    dt = 0.001  # whole number of samples per cycle
    t = dt * np.arange(1, n + 1)
    assert mean_flow(_trace(np.full(n, 2.0), dt), f, 5, 4)[0] == pytest.approx(2.0)
    assert mean_flow(_trace(np.sin(2 * np.pi * t), dt), f, 5, 4)[0] == pytest.approx(0.0, abs=1e-12)
    rect = 3.0 * np.maximum(np.sin(2 * np.pi * t), 0.0)
    assert mean_flow(_trace(rect, dt), f, 5, 4)[0] == pytest.approx(3.0 / math.pi, rel=1e-4)


def test_mean_flow_rejects_short_trace():
    with pytest.raises(TraceLengthError):
        mean_flow(_trace(np.ones(100), 0.01), 60.0, 5, 4)


def test_bifurcation_ratios_examples():
    cat = parse_catalog(SINGLE.replace("S4,Aorta,artery,0.1,0.012,0.002,0.2,S5,,,",
                                       "S4,Aorta,artery,0.1,0.012,0.002,0.2,S5;S7,,,")
                        + "S7,Bed2,capillary,0.02,0.001,0.0001,0.1,S6,5.0,0.0,0.0\n")
    w = bifurcation_ratios({"S4": 10.0, "S5": 7.0, "S7": 3.0}, cat)
    assert w["S4"] == pytest.approx({"S5": 0.7, "S7": 0.3})
    assert bifurcation_ratios({"S4": 2.0, "S5": 1.0, "S7": 1.0}, cat)["S4"] == pytest.approx({"S5": 0.5, "S7": 0.5})
    with pytest.raises(DegenerateBifurcation):
        bifurcation_ratios({"S4": 0.0, "S5": 0.0, "S7": 0.0}, cat)


def test_count_peaks():
    t = np.linspace(0, 1, 400, endpoint=False)
    assert count_peaks(np.sin(2 * np.pi * t)) == 1
    assert count_peaks(np.sin(4 * np.pi * t)) == 2


# --- default body -----------------------------------------------------------


def test_kirchhoff_and_systolic_band(heart_run):
    net, tr, cfg, _ = heart_run(75.0)
    scale = np.abs(tr.currents).max(axis=1)
    assert np.max(kcl_residual(net, tr) / scale) <= 1e-9
    lv = tr.pressure("lv")[-int(round(0.8 / cfg.dt)):]
    assert 100.0 <= lv.max() <= 140.0


def test_weights_reproduce_frozen_matrix(heart_run, catalog, default_matrix):
    *_, w = heart_run(75.0)
    tm = build_transition_matrix(w, catalog)
    assert np.max(np.abs(tm.P - default_matrix.P)) < 1e-9


def test_weights_sum_to_one(heart_run):
    *_, w = heart_run(75.0)
    for parent, children in w.items():
        assert sum(children.values()) == pytest.approx(1.0, abs=1e-6), parent


@pytest.mark.parametrize("scale", [0.8, 1.2])
def test_flow_ratios_invariant_under_source_scaling(heart_run, scale):
    *_, base = heart_run(75.0)
    *_, w = heart_run(75.0, scale)
    drift = max(abs(w[p][c] - base[p][c]) for p in base for c in base[p])
    assert drift <= 1e-3


def test_transient_is_deterministic(catalog):
    net = assemble_network(catalog)
    cfg = TransientConfig.for_heart(75.0, steps_per_cycle=100, settle_cycles=1, average_cycles=1)
    a = simulate_transient(net, cfg)
    b = simulate_transient(net, cfg)
    assert np.array_equal(a.currents, b.currents)


@settings(max_examples=20, deadline=None)
@given(r=st.floats(0.1, 10.0), c=st.floats(0.05, 2.0), v=st.floats(-50.0, 50.0))
def test_rc_kirchhoff_property(r, c, v):
    net = rc_net(r, c, v)
    tr = simulate_transient(net, TransientConfig(dt=1e-2, duration=0.5, initial_pressure=0.0))
    scale = max(np.abs(tr.currents).max(), 1e-12)
    assert np.max(kcl_residual(net, tr)) <= 1e-9 * scale


def test_flow_trace_csv(tmp_path):
    tr = simulate_transient(rc_net(), TransientConfig(dt=0.1, duration=0.3, initial_pressure=0.0))
    p = tmp_path / "trace.csv"
    tr.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "t,branch_tag,current,node_tag,pressure"
    assert len(lines) == 1 + 3 * 3
