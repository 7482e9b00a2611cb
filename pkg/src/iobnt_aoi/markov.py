"""Markov mobility model of a nanosensor drifting with the blood.

Orientation: row-stochastic. Row i of ``P`` holds the probabilities of
leaving state i, and the stationary vector solves nu^T = nu^T P.
"""

from __future__ import annotations

import bisect
import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .vascular import VesselCatalog, VesselKind, natural_key

ROW_TOL = 1e-12


class MarkovError(ValueError):
    pass


class NoUniqueStationary(MarkovError):
    pass


@dataclass(frozen=True)
class TransitionMatrix:
    states: tuple[str, ...]
    P: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        n = len(self.states)
        if P.shape != (n, n):
            raise MarkovError(f"matrix shape {P.shape} does not match {n} states")
        if len(set(self.states)) != n:
            raise MarkovError("duplicate state ids")
        if np.any(P < 0) or np.any(P > 1 + ROW_TOL):
            raise MarkovError("entries must lie in [0, 1]")
        sums = P.sum(axis=1)
        bad = np.where(np.abs(sums - 1.0) > ROW_TOL)[0]
        if len(bad):
            raise MarkovError(f"row {self.states[bad[0]]} sums to {sums[bad[0]]:.15g}")
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    @property
    def index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.states)}

    def prob(self, a: str, b: str) -> float:
        idx = self.index
        return float(self.P[idx[a], idx[b]])

    def successors(self, state: str) -> dict[str, float]:
        row = self.P[self.index[state]]
        return {self.states[j]: float(row[j]) for j in np.nonzero(row)[0]}

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["state", *self.states])
        for s, row in zip(self.states, self.P):
            w.writerow([s, *(repr(float(x)) for x in row)])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TransitionMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        header = rows[0][1:]
        if [r[0] for r in rows[1:]] != header:
            raise MarkovError("row labels must match the header order")
        return cls(tuple(header), np.array([[float(x) for x in r[1:]] for r in rows[1:]]))


@dataclass(frozen=True)
class StationaryVector:
    states: tuple[str, ...]
    nu: np.ndarray
    residual: float
    iterations: int

    def __getitem__(self, state: str) -> float:
        return float(self.nu[self.states.index(state)])

    def as_dict(self) -> dict[str, float]:
        return {s: float(v) for s, v in zip(self.states, self.nu)}

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["state", "nu"])
        for s, v in zip(self.states, self.nu):
            w.writerow([s, repr(float(v))])
        return out.getvalue()


@dataclass(frozen=True)
class CirculationLoop:
    loop_id: str  # capillary name
    capillary: str
    states: tuple[str, ...]  # most probable route, left heart first
    p_c: float
    T_c: float


def build_transition_matrix(weights: Mapping[str, Mapping[str, float]],
                            catalog: VesselCatalog) -> TransitionMatrix:
    """Flow-ratio weights on bifurcation rows, probability 1 on single exits.

    Bifurcation rows are renormalized so they sum to 1 to machine precision;
    the raw weights are expected to be within the circuit's conservation
    tolerance already.
    """
    states = tuple(catalog.state_ids)
    idx = {s: i for i, s in enumerate(states)}
    P = np.zeros((len(states), len(states)))
    for s in states:
        succ = catalog[s].downstream
        if not succ:
            raise MarkovError(f"state {s} has no successors")
        if len(succ) == 1:
            P[idx[s], idx[succ[0]]] = 1.0
            continue
        if s not in weights:
            raise MarkovError(f"no flow weights for bifurcation {s}")
        w = weights[s]
        if set(w) != set(succ):
            raise MarkovError(f"weights for {s} do not match its successors")
        row = np.array([float(w[c]) for c in succ])
        if np.any(row < 0) or not row.sum() > 0:
            raise MarkovError(f"invalid weights for {s}")
        row /= row.sum()
        for c, p in zip(succ, row):
            P[idx[s], idx[c]] = p
    return TransitionMatrix(states, P)


def _irreducible(P: np.ndarray) -> bool:
    n = len(P)
    adj = P > 0

    def reach(mat):
        seen = np.zeros(n, bool)
        seen[0] = True
        frontier = seen.copy()
        while frontier.any():
            nxt = mat[frontier].any(axis=0) & ~seen
            seen |= nxt
            frontier = nxt
        return seen.all()

    return reach(adj) and reach(adj.T)


def stationary_distribution(tm: TransitionMatrix, tol: float = 1e-12,
                            max_iter: int = 100_000) -> StationaryVector:
    """Power iteration on the lazy chain (I + P)/2 with Aitken extrapolation.

    The lazy chain has the same fixed point and is aperiodic, so periodic
    rings converge too.
    """
    P = tm.P
    n = len(P)
    if not _irreducible(P):
        raise NoUniqueStationary("chain is reducible; stationary vector is not unique")
    lazy = 0.5 * (np.eye(n) + P)
    nu = np.full(n, 1.0 / n)
    hist: list[np.ndarray] = []
    it = 0
    for it in range(1, max_iter + 1):
        nxt = nu @ lazy
        if np.abs(nxt - nu).sum() < tol:
            nu = nxt
            break
        hist.append(nxt)
        nu = nxt
        if len(hist) == 3:
            x0, x1, x2 = hist
            denom = x2 - 2 * x1 + x0
            safe = np.abs(denom) > 1e-300
            acc = np.where(safe, x2 - (x2 - x1) ** 2 / np.where(safe, denom, 1.0), x2)
            if np.all(acc >= 0) and acc.sum() > 0:
                acc = acc / acc.sum()
                if np.abs(acc @ P - acc).sum() < np.abs(x2 @ P - x2).sum():
                    nu = acc
            hist.clear()
    else:
        raise NoUniqueStationary(f"power iteration did not converge in {max_iter} steps")
    nu = np.clip(nu, 0.0, None)
    nu /= nu.sum()
    residual = float(np.abs(nu @ P - nu).max())
    return StationaryVector(tm.states, nu, residual, it)


def path_probability(tm: TransitionMatrix, path: Sequence[str]) -> float:
    idx = tm.index
    p = 1.0
    for a, b in zip(path, path[1:]):
        if a not in idx or b not in idx:
            raise MarkovError(f"unknown state in path: {a if a not in idx else b}")
        q = tm.P[idx[a], idx[b]]
        if q == 0:
            raise MarkovError(f"{a} -> {b} is not a transition")
        p *= q
    return float(p)


def first_passage_probability(p_g: float, p_i: float) -> float:
    """Chance to enter the gateway loop before the infection loop."""
    if p_g < 0 or p_i < 0:
        raise ValueError("probabilities must be non-negative")
    total = p_g + p_i
    if total == 0:
        raise ValueError("p_G + p_I must be positive")
    if total > 1 + 1e-12:
        raise ValueError("p_G + p_I must not exceed 1")
    return p_g / total


def left_heart(catalog: VesselCatalog) -> str:
    """Heart chamber that feeds the arterial tree."""
    for sid in catalog.of_kind(VesselKind.HEART_CHAMBER):
        if any(catalog[d].kind == VesselKind.ARTERY for d in catalog[sid].downstream):
            return sid
    raise MarkovError("no heart chamber feeds an artery")


def _routes(tm: TransitionMatrix, start: str, stop: str) -> list[tuple[list[str], float]]:
    """Simple paths start -> stop with positive probability (stop not revisited)."""
    out = []

    def walk(path, prob):
        for nxt, q in tm.successors(path[-1]).items():
            if nxt == stop:
                out.append((path + [nxt], prob * q))
            elif nxt not in path and nxt != start:
                walk(path + [nxt], prob * q)

    walk([start], 1.0)
    return out


def enumerate_loops(tm: TransitionMatrix, catalog: VesselCatalog,
                    travel_times: Mapping[str, float] | None = None,
                    start: str | None = None) -> list[CirculationLoop]:
    """One closed circuit per capillary, conditioned on leaving ``start``.

    A capillary reachable along several arterial routes (the head is fed by
    both carotids) gets the summed probability, and its time is the
    probability-weighted mean over routes. Every state on the circuit counts
    once, ``start`` included.
    """
    start = start or left_heart(catalog)
    times = dict(travel_times or catalog.travel_times())
    loops = []
    for cap in catalog.of_kind(VesselKind.CAPILLARY):
        out_routes = _routes(tm, start, cap)
        if not out_routes:
            raise MarkovError(f"capillary {cap} is unreachable from {start}")
        back_routes = _routes(tm, cap, start)
        if not back_routes:
            raise MarkovError(f"capillary {cap} does not return to {start}")
        p_out = sum(p for _, p in out_routes)
        t_out = sum(p * sum(times[s] for s in path[:-1]) for path, p in out_routes) / p_out
        p_back = sum(p for _, p in back_routes)
        t_back = sum(p * sum(times[s] for s in path[:-1]) for path, p in back_routes) / p_back
        best_out = max(out_routes, key=lambda r: r[1])[0]
        best_back = max(back_routes, key=lambda r: r[1])[0]
        loops.append(CirculationLoop(
            loop_id=catalog[cap].name,
            capillary=cap,
            states=tuple(best_out[:-1] + best_back[:-1]),
            p_c=p_out,
            T_c=t_out + t_back,
        ))
    return loops


def loops_to_csv(loops: Iterable[CirculationLoop]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["loop", "capillary", "p_c", "T_c_seconds"])
    for lp in loops:
        w.writerow([lp.loop_id, lp.capillary, repr(lp.p_c), repr(lp.T_c)])
    return out.getvalue()


def read_loop_table(text: str) -> dict[str, tuple[float, float]]:
    """``capillary -> (p_c, T_c)`` from a loop table CSV."""
    rows = csv.DictReader(io.StringIO("\n".join(l for l in text.splitlines() if not l.startswith("#"))))
    return {r["capillary"]: (float(r["p_c"]), float(r["T_c_seconds"])) for r in rows}


def load_matrix(path: str | Path) -> TransitionMatrix:
    return TransitionMatrix.from_csv(Path(path).read_text())


# ---------------------------------------------------------------------------
# random-walk oracles


def simulate_walk(P: np.ndarray, n_steps: int, rng: np.random.Generator, start: int = 0) -> np.ndarray:
    """State sequence of one walk of ``n_steps`` transitions (start excluded)."""
    cum = [list(np.cumsum(row)) for row in np.asarray(P)]
    for row in cum:
        row[-1] = 1.0 + 1e-15
    u = rng.random(n_steps)
    out = np.empty(n_steps, dtype=np.int64)
    s = start
    bis = bisect.bisect_right
    for k in range(n_steps):
        s = bis(cum[s], u[k])
        out[k] = s
    return out


def visit_frequencies(P: np.ndarray, n_steps: int, rng: np.random.Generator,
                      batches: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Visit frequencies and batch-means standard errors of one long walk."""
    seq = simulate_walk(P, n_steps, rng)
    n = len(P)
    size = n_steps // batches
    per_batch = np.array([np.bincount(seq[b * size:(b + 1) * size], minlength=n) / size
                          for b in range(batches)])
    freq = np.bincount(seq, minlength=n) / n_steps
    se = per_batch.std(axis=0, ddof=1) / math.sqrt(batches)
    return freq, se


def competing_absorption(P: np.ndarray, start: int, gateway: Iterable[int], infection: Iterable[int],
                         n_walks: int, rng: np.random.Generator, max_steps: int = 100_000) -> float:
    """Fraction of walks from ``start`` that hit ``gateway`` before ``infection``."""
    P = np.asarray(P)
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0 + 1e-15
    g = np.zeros(len(P), bool)
    g[list(gateway)] = True
    i = np.zeros(len(P), bool)
    i[list(infection)] = True
    state = np.full(n_walks, start)
    alive = np.ones(n_walks, bool)
    hit_g = np.zeros(n_walks, bool)
    for _ in range(max_steps):
        idx = np.nonzero(alive)[0]
        if not len(idx):
            break
        u = rng.random(len(idx))
        nxt = (u[:, None] >= cum[state[idx]]).sum(axis=1)
        state[idx] = nxt
        hit_g[idx] = g[nxt]
        alive[idx] = ~(g[nxt] | i[nxt])
    else:
        raise MarkovError("walks not absorbed within max_steps")
    return float(hit_g.mean())
