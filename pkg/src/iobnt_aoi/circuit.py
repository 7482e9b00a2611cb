"""Electrical analog of the arterial tree driven by a valved, variable-capacitance heart.

Units throughout: pressure in mmHg, flow in mL/s, time in s.

Each vessel segment contributes a series R and L followed by a shunt C to
ground (L-inverted cell). Capillary segments are resistive terminations into
the venous pressure source. The heart block is

    P_AT --R_AT--> (MV) --> LV --(AV)--> root
    LV: variable capacitor to ground, C(t) modulated by a clipped sine
    root --RSA--> ca --RCA--> P_SV,  C_CA from ca to ground

The transient is integrated with a backward-difference formula (BDF1 or
BDF2) on a modified-nodal system; the two valves are ideal switches whose
states are resolved at every step.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg

from .vascular import VesselCatalog, VesselKind, circuit_rlc

GROUND = "gnd"
DIODE_ON_RESISTANCE = 1e-6
DIODE_OFF_CONDUCTANCE = 1e-9

_BDF = {1: (1.0, -1.0, 0.0), 2: (1.5, -2.0, 0.5)}


class BranchKind(str, enum.Enum):
    RESISTOR = "resistor"
    INDUCTOR = "inductor"
    CAPACITOR = "capacitor"
    VARIABLE_CAPACITOR = "variable-capacitor"
    IDEAL_DIODE = "ideal-diode"
    PRESSURE_SOURCE = "pressure-source"


class AssemblyError(ValueError):
    pass


class SolverError(RuntimeError):
    def __init__(self, message: str, step: int):
        self.step = step
        super().__init__(f"step {step}: {message}")


@dataclass(frozen=True)
class Branch:
    kind: BranchKind
    from_node: str
    to_node: str
    value: float | Callable[[float], float] | None = None
    tag: str = ""
    role: str = ""

    @property
    def label(self) -> str:
        return f"{self.tag}.{self.role}" if self.role else self.tag


@dataclass(frozen=True)
class CircuitNetwork:
    nodes: tuple[str, ...]
    branches: tuple[Branch, ...]
    f_heart: float | None = None

    def __post_init__(self):
        known = set(self.nodes) | {GROUND}
        seen: set[tuple[str, str]] = set()
        for b in self.branches:
            if b.from_node not in known or b.to_node not in known:
                raise AssemblyError(f"branch {b.label} references an unknown node")
            if b.from_node == b.to_node:
                raise AssemblyError(f"branch {b.label} is a self loop")
            key = (b.tag, b.role)
            if b.tag and key in seen:
                raise AssemblyError(f"tag {b.label} is used twice")
            seen.add(key)
        if not any(b.kind == BranchKind.PRESSURE_SOURCE for b in self.branches):
            raise AssemblyError("network needs at least one pressure source")
        self._check_connected()

    def _check_connected(self) -> None:
        adj: dict[str, set[str]] = {n: set() for n in (*self.nodes, GROUND)}
        for b in self.branches:
            adj[b.from_node].add(b.to_node)
            adj[b.to_node].add(b.from_node)
        seen = {GROUND}
        todo = [GROUND]
        while todo:
            for nxt in adj[todo.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    todo.append(nxt)
        if len(seen) != len(adj):
            raise AssemblyError(f"network is disconnected: {sorted(set(adj) - seen)[:5]}")

    def count(self, kind: BranchKind) -> int:
        return sum(b.kind == kind for b in self.branches)

    def find(self, tag: str, role: str = "") -> int:
        for i, b in enumerate(self.branches):
            if b.tag == tag and b.role == role:
                return i
        raise KeyError(f"{tag}.{role}")

    def tagged(self, tag: str) -> list[int]:
        return [i for i, b in enumerate(self.branches) if b.tag == tag]


@dataclass(frozen=True)
class HeartParameters:
    f_heart: float = 75.0  # beats per minute
    p_at: float = 8.0  # atrial pressure, mmHg
    r_at: float = 0.01
    rsa: float = 0.05
    rca: float = 5.3
    c_ca: float = 0.3
    p_sv: float = 5.0
    c_min: float = 0.6  # mL/mmHg, tuned for a 100-140 mmHg systolic peak
    c_max: float = 12.0
    clip_fraction: float = 0.5  # share of the cycle the capacitor sits at c_min

    def __post_init__(self):
        if not self.f_heart > 0:
            raise ValueError("f_heart must be positive")
        if not 0 < self.c_min < self.c_max:
            raise ValueError("need 0 < c_min < c_max")
        if not 0 < self.clip_fraction < 1:
            raise ValueError("clip_fraction must lie in (0, 1)")

    @property
    def period(self) -> float:
        return 60.0 / self.f_heart

    def capacitance(self, t: float) -> float:
        # clipped sine: floor chosen so the waveform is clipped for clip_fraction of each cycle
        floor = -math.cos(math.pi * self.clip_fraction)
        s = math.sin(2 * math.pi * self.f_heart / 60.0 * t)
        shape = (max(s, floor) - floor) / (1.0 - floor)
        return self.c_min + (self.c_max - self.c_min) * shape


@dataclass(frozen=True)
class TransientConfig:
    dt: float
    duration: float
    settle_cycles: int = 5
    average_cycles: int = 4
    scheme: str = "bdf2"
    accelerate: bool = True
    initial_pressure: float = 90.0
    shooting_iterations: int = 8

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.scheme not in ("bdf1", "bdf2"):
            raise ValueError(f"unknown scheme {self.scheme!r}")

    @classmethod
    def for_heart(cls, f_heart: float, steps_per_cycle: int = 400, **kw) -> "TransientConfig":
        period = 60.0 / f_heart
        settle = kw.pop("settle_cycles", 5)
        avg = kw.pop("average_cycles", 4)
        return cls(dt=period / steps_per_cycle, duration=(settle + avg) * period,
                   settle_cycles=settle, average_cycles=avg, **kw)

    def validate_for(self, f_heart: float) -> None:
        if self.duration < (self.settle_cycles + 1) * 60.0 / f_heart - 1e-12:
            raise ValueError("duration must cover settle_cycles + 1 cardiac cycles")


@dataclass
class FlowTrace:
    t: np.ndarray
    currents: np.ndarray  # (steps, branches)
    voltages: np.ndarray  # (steps, nodes)
    branch_labels: list[str]
    node_names: list[str]

    def current(self, label: str) -> np.ndarray:
        return self.currents[:, self.branch_labels.index(label)]

    def pressure(self, node: str) -> np.ndarray:
        return self.voltages[:, self.node_names.index(node)]

    def to_csv(self, path: str | Path, every: int = 1) -> None:
        """Long format ``t,branch_tag,current,node_tag,pressure``.

        Each row pairs the i-th branch with the i-th node of the same time
        sample; the shorter list is padded with empty cells.
        """
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "branch_tag", "current", "node_tag", "pressure"])
            nb, nn = len(self.branch_labels), len(self.node_names)
            for k in range(0, len(self.t), every):
                for i in range(max(nb, nn)):
                    w.writerow([
                        f"{self.t[k]:.9g}",
                        self.branch_labels[i] if i < nb else "",
                        f"{self.currents[k, i]:.12g}" if i < nb else "",
                        self.node_names[i] if i < nn else "",
                        f"{self.voltages[k, i]:.12g}" if i < nn else "",
                    ])


# ---------------------------------------------------------------------------
# assembly


def _tree_segments(catalog: VesselCatalog) -> tuple[list[str], dict[str, list[str]]]:
    """Arterial/capillary segments fed by the heart, in breadth-first order."""
    tree_kinds = (VesselKind.ARTERY, VesselKind.CAPILLARY)
    roots = [d for sid in catalog.of_kind(VesselKind.HEART_CHAMBER)
             for d in catalog[sid].downstream if catalog[d].kind in tree_kinds]
    if not roots:
        raise AssemblyError("no arterial segment leaves a heart chamber")
    order: list[str] = []
    parents: dict[str, list[str]] = {}
    queue = list(dict.fromkeys(roots))
    seen = set(queue)
    while queue:
        sid = queue.pop(0)
        order.append(sid)
        if catalog[sid].kind == VesselKind.CAPILLARY:
            continue
        for child in catalog[sid].downstream:
            if catalog[child].kind not in tree_kinds:
                continue
            parents.setdefault(child, []).append(sid)
            if child not in seen:
                seen.add(child)
                queue.append(child)
    return order, parents


def assemble_network(catalog: VesselCatalog, heart: HeartParameters | None = None,
                     formula_mode: str = "paper") -> CircuitNetwork:
    heart = heart or HeartParameters()
    order, parents = _tree_segments(catalog)

    # nodes where several parents merge into one child are shared
    alias: dict[str, str] = {}
    for child, ps in parents.items():
        if len(ps) > 1:
            for p in ps:
                alias[p] = f"{child}.in"

    def out_node(sid: str) -> str:
        return alias.get(sid, sid)

    branches: list[Branch] = [
        Branch(BranchKind.PRESSURE_SOURCE, GROUND, "pat", heart.p_at, "heart", "P_AT"),
        Branch(BranchKind.RESISTOR, "pat", "atr", heart.r_at, "heart", "R_AT"),
        Branch(BranchKind.IDEAL_DIODE, "atr", "lv", None, "heart", "MV"),
        Branch(BranchKind.VARIABLE_CAPACITOR, "lv", GROUND, heart.capacitance, "heart", "C_LV"),
        Branch(BranchKind.IDEAL_DIODE, "lv", "root", None, "heart", "AV"),
        Branch(BranchKind.RESISTOR, "root", "ca", heart.rsa, "heart", "RSA"),
        Branch(BranchKind.CAPACITOR, "ca", GROUND, heart.c_ca, "heart", "C_CA"),
        Branch(BranchKind.RESISTOR, "ca", "psv", heart.rca, "heart", "RCA"),
        Branch(BranchKind.PRESSURE_SOURCE, GROUND, "psv", heart.p_sv, "heart", "P_SV"),
    ]
    nodes = ["pat", "atr", "lv", "root", "ca", "psv"]

    for sid in order:
        seg = catalog[sid]
        try:
            rlc = circuit_rlc(seg, catalog.blood, formula_mode)
        except ValueError as exc:
            raise AssemblyError(f"{sid}: {exc}") from None
        ps = parents.get(sid)
        inlet = "root" if not ps else (f"{sid}.in" if len(ps) > 1 else out_node(ps[0]))
        if seg.kind == VesselKind.CAPILLARY:
            if rlc.inductance > 0:
                nodes.append(f"{sid}.m")
                branches.append(Branch(BranchKind.RESISTOR, inlet, f"{sid}.m", rlc.resistance, sid, "R"))
                branches.append(Branch(BranchKind.INDUCTOR, f"{sid}.m", "psv", rlc.inductance, sid, "L"))
            else:
                branches.append(Branch(BranchKind.RESISTOR, inlet, "psv", rlc.resistance, sid, "R"))
            continue
        has_tree_child = any(catalog[c].kind in (VesselKind.ARTERY, VesselKind.CAPILLARY)
                             for c in seg.downstream)
        outlet = out_node(sid) if has_tree_child else "psv"
        if outlet not in nodes:
            nodes.append(outlet)
        mid = f"{sid}.m"
        nodes.append(mid)
        branches.append(Branch(BranchKind.RESISTOR, inlet, mid, rlc.resistance, sid, "R"))
        branches.append(Branch(BranchKind.INDUCTOR, mid, outlet, rlc.inductance, sid, "L"))
        if rlc.compliance > 0:
            branches.append(Branch(BranchKind.CAPACITOR, outlet, GROUND, rlc.compliance, sid, "C"))

    return CircuitNetwork(tuple(dict.fromkeys(nodes)), tuple(branches), heart.f_heart)


def segment_flow_labels(network: CircuitNetwork, catalog: VesselCatalog) -> dict[str, str]:
    """Branch label carrying each tree segment's through-flow."""
    out = {}
    for b in network.branches:
        if b.tag in catalog and b.role in ("L", "R"):
            if b.role == "L" or b.tag not in out:
                out[b.tag] = b.label
    return out


# ---------------------------------------------------------------------------
# transient solver


class _System:
    """Modified nodal system with companion models for reactive branches.

    Unknowns are the node pressures followed by one current for every
    resistor, inductor, pressure source and valve. The history needed by the BDF
    companions is the vector ``z = [v_caps, i_inductors, q_varcaps]`` at the
    two previous steps, stacked as ``s = [z_prev, z_last]``.
    """

    def __init__(self, network: CircuitNetwork, dt: float, scale: float = 1.0):
        self.net = network
        self.dt = dt
        self.scale = scale
        br = network.branches
        nb = len(br)
        self.n_nodes = len(network.nodes)
        node_index = {n: i for i, n in enumerate(network.nodes)}
        kinds = [b.kind for b in br]
        self.extra = {}
        k = self.n_nodes
        for i, kind in enumerate(kinds):
            if kind in (BranchKind.RESISTOR, BranchKind.INDUCTOR, BranchKind.PRESSURE_SOURCE,
                        BranchKind.IDEAL_DIODE):
                self.extra[i] = k
                k += 1
        self.size = k
        # d_i: +1 at from-node, -1 at to-node; branch voltage = D @ x
        self.D = np.zeros((nb, self.size))
        for i, b in enumerate(br):
            if b.from_node in node_index:
                self.D[i, node_index[b.from_node]] += 1.0
            if b.to_node in node_index:
                self.D[i, node_index[b.to_node]] -= 1.0

        def idx(kind):
            return np.array([i for i, kk in enumerate(kinds) if kk == kind], dtype=int)

        self.res = idx(BranchKind.RESISTOR)
        self.caps = idx(BranchKind.CAPACITOR)
        self.inds = idx(BranchKind.INDUCTOR)
        self.vars = idx(BranchKind.VARIABLE_CAPACITOR)
        self.srcs = idx(BranchKind.PRESSURE_SOURCE)
        self.diodes = idx(BranchKind.IDEAL_DIODE)
        self.g_res = np.array([1.0 / br[i].value for i in self.res])
        self.c_caps = np.array([br[i].value for i in self.caps])
        self.l_inds = np.array([br[i].value for i in self.inds])
        self.x_inds = np.array([self.extra[i] for i in self.inds], dtype=int)
        self.x_srcs = np.array([self.extra[i] for i in self.srcs], dtype=int)
        self.x_diodes = np.array([self.extra[i] for i in self.diodes], dtype=int)
        self.nz = len(self.caps) + len(self.inds) + len(self.vars)
        self._base = {order: self._build_base(order) for order in (1, 2)}
        self._diode_rows = []
        for i in self.diodes:
            k = self.extra[i]
            on = self.D[i].copy()
            on[k] -= DIODE_ON_RESISTANCE
            off = -DIODE_OFF_CONDUCTANCE * self.D[i]
            off[k] += 1.0
            self._diode_rows.append((off, on))
        self._hist_maps = {order: self._build_history_map(order) for order in (1, 2)}

    def _build_base(self, order: int) -> np.ndarray:
        a0 = _BDF[order][0]
        A = np.zeros((self.size, self.size))
        Dn = self.D
        for c, i in zip(self.c_caps, self.caps):
            A += a0 * c / self.dt * np.outer(Dn[i], Dn[i])
        for i in self.extra:
            A[:, self.extra[i]] += Dn[i]  # branch current leaves from-node, enters to-node
        # resistors carry their own current so tiny resistances stay well conditioned
        for g, i in zip(self.g_res, self.res):
            k = self.extra[i]
            A[k] = Dn[i]
            A[k, k] -= 1.0 / g
        for l, i in zip(self.l_inds, self.inds):
            k = self.extra[i]
            A[k] = Dn[i]
            A[k, k] -= a0 * l / self.dt
        for i in self.srcs:
            A[self.extra[i]] = -Dn[i]  # p(to) - p(from) = source value
        return A

    def _build_history_map(self, order: int) -> np.ndarray:
        """Matrix G with rhs_history = G @ s."""
        _, a1, a2 = _BDF[order]
        nz, dt = self.nz, self.dt
        G = np.zeros((self.size, 2 * nz))
        nc, nl = len(self.caps), len(self.inds)
        for j, (c, i) in enumerate(zip(self.c_caps, self.caps)):
            G[:, nz + j] -= self.D[i] * c * a1 / dt
            G[:, j] -= self.D[i] * c * a2 / dt
        for j, (l, i) in enumerate(zip(self.l_inds, self.inds)):
            k = self.extra[i]
            G[k, nz + nc + j] += l * a1 / dt
            G[k, nc + j] += l * a2 / dt
        for j, i in enumerate(self.vars):
            G[:, nz + nc + nl + j] -= self.D[i] * a1 / dt
            G[:, nc + nl + j] -= self.D[i] * a2 / dt
        return G

    def source_rhs(self, t: float) -> np.ndarray:
        r = np.zeros(self.size)
        for i, k in zip(self.srcs, self.x_srcs):
            val = self.net.branches[i].value
            r[k] = self.scale * (val(t) if callable(val) else val)
        return r

    def varcap_values(self, t: float) -> np.ndarray:
        return np.array([self.net.branches[i].value(t) for i in self.vars])

    def matrix(self, order: int, cvar: np.ndarray, diode_on: np.ndarray) -> np.ndarray:
        A = self._base[order].copy()
        a0 = _BDF[order][0]
        for c, i in zip(cvar, self.vars):
            A += a0 * c / self.dt * np.outer(self.D[i], self.D[i])
        for j, k in enumerate(self.x_diodes):
            A[k] = self._diode_rows[j][int(diode_on[j])]
        return A

    def z_map(self, cvar: np.ndarray) -> np.ndarray:
        """Matrix E with z_new = E @ x."""
        E = np.zeros((self.nz, self.size))
        nc, nl = len(self.caps), len(self.inds)
        E[:nc] = self.D[self.caps]
        E[np.arange(nc, nc + nl), self.x_inds] = 1.0
        E[nc + nl:] = cvar[:, None] * self.D[self.vars]
        return E

    def step(self, t: float, order: int, s: np.ndarray, diode_on: np.ndarray, step: int):
        """Solve one step in place on ``diode_on``; returns (x, lu, cvar)."""
        cvar = self.varcap_values(t)
        rhs = self.source_rhs(t) + self._hist_maps[order] @ s
        for _ in range(4 * len(self.diodes) + 8):
            A = self.matrix(order, cvar, diode_on)
            try:
                lu = scipy.linalg.lu_factor(A, check_finite=False)
            except (ValueError, np.linalg.LinAlgError) as exc:
                raise SolverError(f"singular system ({exc})", step) from None
            x = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
            if not np.all(np.isfinite(x)):
                raise SolverError("singular system", step)
            flips = False
            for j, (i, k) in enumerate(zip(self.diodes, self.x_diodes)):
                if diode_on[j] and x[k] < 0.0:
                    diode_on[j] = False
                    flips = True
                elif not diode_on[j] and self.D[i] @ x > 0.0:
                    diode_on[j] = True
                    flips = True
            if not flips:
                return x, lu, cvar
        raise SolverError("valve states did not settle", step)

    def currents(self, x: np.ndarray, s: np.ndarray, order: int, cvar: np.ndarray) -> np.ndarray:
        a0, a1, a2 = _BDF[order]
        dt, nz = self.dt, self.nz
        nc, nl = len(self.caps), len(self.inds)
        v = self.D @ x
        out = np.zeros(len(self.net.branches))
        out[self.caps] = self.c_caps * (a0 * v[self.caps] + a1 * s[nz:nz + nc] + a2 * s[:nc]) / dt
        for i, k in self.extra.items():
            out[i] = x[k]
        out[self.vars] = (a0 * cvar * v[self.vars] + a1 * s[nz + nc + nl:] + a2 * s[nc + nl:nz]) / dt
        return out


def _initial_state(system: _System, config: TransientConfig) -> np.ndarray:
    nc, nl = len(system.caps), len(system.inds)
    z = np.zeros(system.nz)
    z[:nc] = config.initial_pressure * system.scale
    p_fill = next((b.value for b in system.net.branches if b.role == "P_AT"), 0.0)
    if callable(p_fill):
        p_fill = p_fill(0.0)
    z[nc + nl:] = system.varcap_values(0.0) * p_fill * system.scale
    return np.concatenate([z, z])


def _advance(system: _System, s: np.ndarray, diode_on: np.ndarray, t0: float, n_steps: int,
             order: int, record: bool = False, sensitivity: np.ndarray | None = None, step0: int = 0):
    """March ``n_steps``; optionally record traces and propagate ds/ds0."""
    dt, nz = system.dt, system.nz
    ts, xs, cs = [], [], []
    P = sensitivity
    for k in range(1, n_steps + 1):
        t = t0 + k * dt
        use = 1 if (order == 2 and k + step0 == 1) else order
        x, lu, cvar = system.step(t, use, s, diode_on, step0 + k)
        E = system.z_map(cvar)
        if P is not None:
            dx = scipy.linalg.lu_solve(lu, system._hist_maps[use] @ P, check_finite=False)
            P = np.vstack([P[nz:], E @ dx])
        if record:
            ts.append(t)
            xs.append(x[: system.n_nodes].copy())
            cs.append(system.currents(x, s, use, cvar))
        s = np.concatenate([s[nz:], E @ x])
    return s, P, (ts, xs, cs)


def simulate_transient(network: CircuitNetwork, config: TransientConfig,
                       source_scale: float = 1.0) -> FlowTrace:
    """Integrate the network over ``config.duration``.

    With ``config.accelerate`` and a heart-driven network the start-up
    transient is removed first: the one-cycle map is affine for a fixed valve
    schedule, so its Jacobian is propagated alongside the state and Newton
    steps solve for the periodic orbit. The recorded run starts from it.
    ``source_scale`` multiplies every pressure source.
    """
    if network.f_heart:
        config.validate_for(network.f_heart)
    order = 2 if config.scheme == "bdf2" else 1
    system = _System(network, config.dt, source_scale)
    s = _initial_state(system, config)
    diode_on = np.zeros(len(system.diodes), dtype=bool)
    started = False

    if config.accelerate and network.f_heart:
        period = 60.0 / network.f_heart
        per_cycle = int(round(period / config.dt))
        if abs(per_cycle * config.dt - period) > 1e-9 * period:
            raise ValueError("dt must divide the cardiac period for periodic-orbit settling")
        s, _, _ = _advance(system, s, diode_on, 0.0, per_cycle, order)
        started = True
        n = 2 * system.nz
        for _ in range(config.shooting_iterations):
            s1, M, _ = _advance(system, s, diode_on, 0.0, per_cycle, order,
                                sensitivity=np.eye(n), step0=per_cycle)
            r = s1 - s
            if np.max(np.abs(r)) <= 1e-12 * (1.0 + np.max(np.abs(s))):
                break
            s = s + np.linalg.solve(np.eye(n) - M, r)

    n_steps = int(round(config.duration / config.dt))
    _, _, (ts, xs, cs) = _advance(system, s, diode_on, 0.0, n_steps, order, record=True,
                                  step0=1 if started else 0)
    return FlowTrace(
        t=np.asarray(ts),
        currents=np.asarray(cs),
        voltages=np.asarray(xs),
        branch_labels=[b.label for b in network.branches],
        node_names=list(network.nodes),
    )


def kcl_residual(network: CircuitNetwork, trace: FlowTrace) -> np.ndarray:
    """Per step, max |sum of branch currents| over non-ground nodes."""
    idx = {n: i for i, n in enumerate(network.nodes)}
    inc = np.zeros((len(network.nodes), len(network.branches)))
    for j, b in enumerate(network.branches):
        if b.from_node in idx:
            inc[idx[b.from_node], j] += 1.0
        if b.to_node in idx:
            inc[idx[b.to_node], j] -= 1.0
    return np.max(np.abs(trace.currents @ inc.T), axis=1)


# ---------------------------------------------------------------------------
# post-processing


class TraceLengthError(ValueError):
    pass


def mean_flow(trace: FlowTrace, f_heart: float, settle_cycles: int = 5,
              average_cycles: int | None = None) -> np.ndarray:
    """Per-branch current averaged over whole cardiac cycles after ``settle_cycles``."""
    period = 60.0 / f_heart
    t = np.asarray(trace.t)
    dt = t[1] - t[0] if len(t) > 1 else period
    start = settle_cycles * period
    available = int(math.floor((t[-1] - start) / period + 1e-9)) if len(t) else 0
    if available < 1:
        raise TraceLengthError("trace too short to average over one cycle after settling")
    n_cycles = available if average_cycles is None else average_cycles
    if n_cycles > available:
        raise TraceLengthError(f"trace holds {available} whole cycles after settling, {n_cycles} requested")
    i0 = int(round((start - t[0]) / dt)) + 1
    n = int(round(n_cycles * period / dt))
    window = trace.currents[i0: i0 + n]
    if len(window) != n:
        raise TraceLengthError("trace too short for the averaging window")
    return window.mean(axis=0)


class DegenerateBifurcation(ValueError):
    pass


def bifurcation_ratios(flows: Mapping[str, float], catalog: VesselCatalog,
                       tol: float = 1e-6) -> dict[str, dict[str, float]]:
    """Flow-ratio weights I_child / I_parent at every arterial bifurcation.

    ``flows`` maps segment id to its mean through-flow. Only parents with two
    or more downstream children present in ``flows`` are returned.
    """
    out: dict[str, dict[str, float]] = {}
    for sid in catalog.state_ids:
        children = [c for c in catalog[sid].downstream if c in flows]
        if sid not in flows or len(catalog[sid].downstream) < 2:
            continue
        if len(children) != len(catalog[sid].downstream):
            raise DegenerateBifurcation(f"{sid}: missing child flows")
        parent = flows[sid]
        if not parent > 0:
            raise DegenerateBifurcation(f"{sid}: parent mean flow {parent:g} is not positive")
        weights = {c: flows[c] / parent for c in children}
        # children merging elsewhere (shared capillary beds) still split the parent flow
        total = sum(weights.values())
        if abs(total - 1.0) > tol:
            raise DegenerateBifurcation(f"{sid}: weights sum to {total:.9f}, flow not conserved")
        out[sid] = weights
    return out


def segment_mean_flows(network: CircuitNetwork, catalog: VesselCatalog, means: np.ndarray) -> dict[str, float]:
    labels = segment_flow_labels(network, catalog)
    index = {b.label: i for i, b in enumerate(network.branches)}
    return {sid: float(means[index[lab]]) for sid, lab in labels.items()}


def hemodynamic_weights(catalog: VesselCatalog, heart: HeartParameters | None = None,
                        config: TransientConfig | None = None, formula_mode: str = "paper",
                        source_scale: float = 1.0, tol: float = 1e-6):
    """Assemble, simulate and reduce to bifurcation weights in one call."""
    heart = heart or HeartParameters()
    network = assemble_network(catalog, heart, formula_mode)
    config = config or TransientConfig.for_heart(heart.f_heart)
    trace = simulate_transient(network, config, source_scale)
    means = mean_flow(trace, heart.f_heart, config.settle_cycles, config.average_cycles)
    flows = segment_mean_flows(network, catalog, means)
    return bifurcation_ratios(flows, catalog, tol), network, trace


def count_peaks(signal: np.ndarray, rel_height: float = 0.5) -> int:
    """Local maxima rising above ``rel_height`` of the signal range."""
    s = np.asarray(signal)
    lo, hi = s.min(), s.max()
    level = lo + rel_height * (hi - lo)
    d = np.diff(s)
    idx = np.where((d[:-1] > 0) & (d[1:] <= 0))[0] + 1
    peaks = [i for i in idx if s[i] > level]
    # merge maxima on the same excursion above the level
    merged = 0
    last = -2
    above = s > level
    for i in peaks:
        if merged and above[last: i + 1].all():
            continue
        merged += 1
        last = i
    return merged
