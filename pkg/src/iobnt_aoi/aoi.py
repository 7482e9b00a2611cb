"""Average peak age of information: closed forms and a walk oracle.

The closed form is Delta = E[T_g] / (1 - p_loss) + E[T_d], with an
exponential generation time E[T_g] = T_i / (nu_i * N_s) and a loop-sum
expression for the infection-to-gateway travel time E[T_d].

The oracle moves N_s independent nanosensors through the chain. Each one
stays in a state for that state's travel time. Leaving the infection segment
loads a fresh sample (replacing any sample already on board); entering the
gateway segment makes one delivery attempt, lost with probability p_loss.
The monitor shows the freshest delivered sample, and each update that
refreshes it closes one peak of the age sawtooth.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .markov import CirculationLoop, MarkovError, TransitionMatrix, _routes, left_heart
from .vascular import VesselCatalog

MIN_PEAKS_CI = 100
MIN_PEAKS = 10
REPORT_COLUMNS = ("scenario", "E_Tg", "E_Td", "p_loss", "paoi_closed", "paoi_oracle_mean",
                  "paoi_oracle_ci95", "n_peaks", "seed")


class SubOccupancyWarning(UserWarning):
    """nu_i * N_s < 1: fewer than one nanosensor expected in the segment."""


class InsufficientSamples(RuntimeError):
    pass


@dataclass(frozen=True)
class GenerationModel:
    nu_i: float
    n_s: int
    t_i: float

    def __post_init__(self):
        if not self.nu_i > 0 or self.n_s < 1 or not self.t_i > 0:
            raise ValueError("need nu_i > 0, N_s >= 1 and T_i > 0")

    @property
    def rate(self) -> float:
        return self.nu_i * self.n_s / self.t_i

    @property
    def expectation(self) -> float:
        return self.t_i / (self.nu_i * self.n_s)


def generation_expectation(nu_i: float, n_s: int, t_i: float) -> float:
    """E[T_g] = T_i / (nu_i * N_s); warns when nu_i * N_s < 1."""
    model = GenerationModel(nu_i, n_s, t_i)
    if nu_i * n_s < 1:
        warnings.warn(f"nu_i * N_s = {nu_i * n_s:.3g} < 1", SubOccupancyWarning, stacklevel=2)
    return model.expectation


@dataclass(frozen=True)
class DelayModel:
    t_direct: float
    p_direct: float
    loops: tuple[tuple[float, float], ...] = ()  # (p_c, T_c) of the detour circuits
    excluded: tuple[str, ...] = ()

    def __post_init__(self):
        if not 0 < self.p_direct <= 1:
            raise ValueError("p_direct must lie in (0, 1]")
        if self.t_direct < 0:
            raise ValueError("T_direct must be non-negative")
        for p, t in self.loops:
            if not 0 <= p <= 1 or t <= 0:
                raise ValueError("loop needs p_c in [0, 1] and T_c > 0")


class DivergentDelay(ValueError):
    pass


def expected_delay(model: DelayModel) -> float:
    """Loop-sum closed form as published.

    E[T_d] = T_direct p_direct + sum_c [T_c p_c/(1-p_c)^2 + T_direct p_c/(1-p_c)]
    """
    total = model.t_direct * model.p_direct
    for p, t in model.loops:
        if p >= 1:
            raise DivergentDelay("a detour loop with p_c = 1 never returns")
        total += t * p / (1 - p) ** 2 + model.t_direct * p / (1 - p)
    return total


def average_paoi(e_tg: float, e_td: float, p_loss: float) -> float:
    if not 0 <= p_loss < 1:
        raise ValueError("p_loss must lie in [0, 1)")
    return e_tg / (1 - p_loss) + e_td


def build_delay_model(tm: TransitionMatrix, catalog: VesselCatalog, loops: Sequence[CirculationLoop],
                      infection: str, gateway: str,
                      travel_times: Mapping[str, float] | None = None) -> DelayModel:
    """Direct route and detour circuits for an infection/gateway pair.

    The direct route runs from the infection segment through the heart to the
    gateway without closing any other circuit; its time counts the states
    strictly between the two. Circuits that pass the infection or the gateway
    are excluded from the detour sum, so a gateway in the heart leaves none.
    """
    if infection == gateway:
        raise ValueError("infection and gateway must differ")
    times = dict(travel_times or catalog.travel_times())
    routes = _routes(tm, infection, gateway)
    if not routes:
        raise MarkovError(f"no route from {infection} to {gateway}")
    p_direct = sum(p for _, p in routes)
    t_direct = sum(p * sum(times[s] for s in path[1:-1]) for path, p in routes) / p_direct
    start = left_heart(catalog)
    detours, excluded = [], []
    for lp in loops:
        on_loop = {s for path, _ in _routes(tm, start, lp.capillary) for s in path}
        on_loop |= {s for path, _ in _routes(tm, lp.capillary, start) for s in path}
        if infection in on_loop or gateway in on_loop:
            excluded.append(lp.capillary)
        else:
            detours.append((lp.p_c, lp.T_c))
    return DelayModel(t_direct, min(p_direct, 1.0), tuple(detours), tuple(excluded))


# ---------------------------------------------------------------------------
# oracle


@dataclass
class OracleResult:
    peaks: np.ndarray
    peak_times: np.ndarray
    generation_times: np.ndarray
    deliveries: np.ndarray  # (k, 2) delivery time, generation time; successful, time ordered
    horizon: float
    n_s: int
    seed: int

    @property
    def mean_peak(self) -> float:
        return float(self.peaks.mean())

    @property
    def ci95(self) -> float:
        if len(self.peaks) < 2:
            return math.inf
        return float(1.96 * self.peaks.std(ddof=1) / math.sqrt(len(self.peaks)))

    @property
    def mean_generation_interval(self) -> float:
        g = np.sort(self.generation_times)
        return float(np.diff(g).mean())

    def sawtooth(self) -> np.ndarray:
        """(t, age) corners: age just before and just after each refresh."""
        pts = []
        shown = None
        for t, g in self.deliveries:
            if shown is not None and g <= shown:
                continue
            if shown is not None:
                pts.append((t, t - shown))
            pts.append((t, t - g))
            shown = g
        return np.array(pts)


def _time_stationary(P: np.ndarray, times: np.ndarray) -> np.ndarray:
    w = np.linalg.lstsq(np.vstack([P.T - np.eye(len(P)), np.ones(len(P))]),
                        np.r_[np.zeros(len(P)), 1.0], rcond=None)[0]
    w = np.clip(w, 0, None) * times
    return w / w.sum()


def simulate_aoi(tm: TransitionMatrix, travel_times: Mapping[str, float], infection: str, gateway: str,
                 p_loss: float, n_s: int, horizon: float, rng: np.random.Generator, seed: int = 0,
                 min_peaks: int = MIN_PEAKS, max_generations: int | None = None) -> OracleResult:
    """Event-driven walk of ``n_s`` nanosensors up to ``horizon`` seconds.

    Walkers start in the time-stationary regime (state drawn by occupancy,
    remaining holding time uniform). With ``max_generations`` the run stops
    early once that many samples have been generated.
    """
    if infection == gateway:
        raise ValueError("infection and gateway must differ")
    if not 0 <= p_loss < 1:
        raise ValueError("p_loss must lie in [0, 1)")
    idx = tm.index
    P = np.asarray(tm.P)
    hold = np.array([travel_times[s] for s in tm.states], dtype=float)
    if np.any(hold <= 0):
        raise ValueError("oracle needs positive holding times")
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0 + 1e-15
    i_idx, g_idx = idx[infection], idx[gateway]

    occ = _time_stationary(P, hold)
    state = rng.choice(len(P), size=n_s, p=occ)
    t_exit = rng.random(n_s) * hold[state]
    carried = np.full(n_s, np.nan)

    gens: list[np.ndarray] = []
    deliv_t: list[np.ndarray] = []
    deliv_g: list[np.ndarray] = []
    n_gen = 0
    while True:
        active = t_exit < horizon
        if not active.any():
            break
        a = np.nonzero(active)[0]
        leaving = state[a]
        at_i = leaving == i_idx
        if at_i.any():
            gi = a[at_i]
            gens.append(t_exit[gi].copy())
            carried[gi] = t_exit[gi]
            n_gen += len(gi)
        u = rng.random(len(a))
        nxt = (u[:, None] >= cum[leaving]).sum(axis=1)
        state[a] = nxt
        arrive = t_exit[a]
        at_g = (nxt == g_idx) & ~np.isnan(carried[a])
        if at_g.any():
            ga = a[at_g]
            ok = rng.random(len(ga)) >= p_loss
            deliv_t.append(arrive[at_g][ok])
            deliv_g.append(carried[ga][ok])
            carried[ga] = np.nan
        t_exit[a] = arrive + hold[nxt]
        if max_generations is not None and n_gen >= max_generations:
            horizon = min(horizon, float(np.max(arrive)))
            break

    gen = np.sort(np.concatenate(gens)) if gens else np.empty(0)
    dt_ = np.concatenate(deliv_t) if deliv_t else np.empty(0)
    dg = np.concatenate(deliv_g) if deliv_g else np.empty(0)
    keep = dt_ <= horizon
    order = np.lexsort((dg[keep], dt_[keep]))
    deliveries = np.column_stack([dt_[keep][order], dg[keep][order]]) if keep.any() else np.empty((0, 2))

    peaks, peak_t = [], []
    shown = None
    for t, g in deliveries:
        if shown is not None and g <= shown:
            continue
        if shown is not None:
            peaks.append(t - shown)
            peak_t.append(t)
        shown = g
    if len(peaks) < min_peaks:
        raise InsufficientSamples(f"{len(peaks)} peaks within the horizon, need {min_peaks}")
    return OracleResult(np.array(peaks), np.array(peak_t), gen, deliveries, horizon, n_s, seed)


def travel_time_oracle(tm: TransitionMatrix, travel_times: Mapping[str, float], infection: str,
                       gateway: str, n_walks: int, rng: np.random.Generator,
                       max_steps: int = 1_000_000) -> tuple[float, float]:
    """Mean and standard error of the time from leaving the infection to entering the gateway."""
    idx = tm.index
    P = np.asarray(tm.P)
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0 + 1e-15
    hold = np.array([travel_times[s] for s in tm.states], dtype=float)
    g_idx = idx[gateway]
    state = np.full(n_walks, idx[infection])
    elapsed = np.zeros(n_walks)
    alive = np.ones(n_walks, bool)
    first = True
    for _ in range(max_steps):
        a = np.nonzero(alive)[0]
        if not len(a):
            break
        if not first:
            elapsed[a] += hold[state[a]]
        first = False
        u = rng.random(len(a))
        nxt = (u[:, None] >= cum[state[a]]).sum(axis=1)
        state[a] = nxt
        alive[a] = nxt != g_idx
    else:
        raise MarkovError("walks did not reach the gateway")
    return float(elapsed.mean()), float(elapsed.std(ddof=1) / math.sqrt(n_walks))


def loop_count_oracle(tm: TransitionMatrix, hub: str, exits: Iterable[str], n_walks: int,
                      rng: np.random.Generator, max_steps: int = 1_000_000) -> np.ndarray:
    """Number of returns to ``hub`` before a walker from ``hub`` enters ``exits``."""
    idx = tm.index
    P = np.asarray(tm.P)
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0 + 1e-15
    stop = np.zeros(len(P), bool)
    stop[[idx[e] for e in exits]] = True
    h = idx[hub]
    state = np.full(n_walks, h)
    count = np.zeros(n_walks, dtype=np.int64)
    alive = np.ones(n_walks, bool)
    for _ in range(max_steps):
        a = np.nonzero(alive)[0]
        if not len(a):
            return count
        u = rng.random(len(a))
        nxt = (u[:, None] >= cum[state[a]]).sum(axis=1)
        state[a] = nxt
        count[a] += nxt == h
        alive[a] = ~stop[nxt]
    raise MarkovError("walks did not exit")


@dataclass(frozen=True)
class PaoiReport:
    scenario: str
    e_tg: float
    e_td: float
    p_loss: float
    paoi_closed: float
    paoi_oracle_mean: float = math.nan
    paoi_oracle_ci95: float = math.nan
    n_peaks: int = 0
    seed: int = 0
    td_oracle_mean: float = math.nan

    def __post_init__(self):
        if self.p_loss == 1:
            # a channel that loses every packet never refreshes the monitor
            if self.paoi_closed != math.inf:
                raise ValueError("p_loss = 1 requires an infinite paoi_closed")
            return
        if abs(self.paoi_closed - average_paoi(self.e_tg, self.e_td, self.p_loss)) > 1e-9 * max(1.0, self.paoi_closed):
            raise ValueError("paoi_closed is inconsistent with E[T_g], E[T_d] and p_loss")

    def row(self) -> list[str]:
        def f(x):
            return "" if isinstance(x, float) and math.isnan(x) else (repr(float(x)) if isinstance(x, float) else str(x))
        return [self.scenario, f(self.e_tg), f(self.e_td), f(self.p_loss), f(self.paoi_closed),
                f(self.paoi_oracle_mean), f(self.paoi_oracle_ci95), str(self.n_peaks), str(self.seed)]


def reports_to_csv(reports: Iterable[PaoiReport], extra: Sequence[tuple[str, Sequence]] = ()) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow([*REPORT_COLUMNS, *(name for name, _ in extra)])
    for k, r in enumerate(reports):
        w.writerow([*r.row(), *(repr(float(vals[k])) for _, vals in extra)])
    return out.getvalue()
