"""Terahertz nanosensor-to-gateway link through skin, tissue and a vessel.

The nanosensor flows at depth l_v inside the vessel (uniform on [0, L_v])
and is only allowed to transmit in blocks one coherence time long, centred
at positions x_m along the vessel. Each block has an SNR that depends on the
depth; the outage probability is the share of depths whose SNR misses the
decoder threshold.

Also holds the gateway-side synchronization chain: matched filter, square
law and lowpass envelope, then a first-difference zero crossing that marks
the moment the nanosensor passes below the gateway.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.signal import lfilter

from .rng import stream

C_LIGHT = 299_792_458.0
LAYERS = ("skin", "tissue", "vessel")


class ThzError(ValueError):
    pass


class InversionAmbiguity(ThzError):
    pass


@dataclass(frozen=True)
class Layer:
    name: str
    thickness: float
    mu: float  # absorption coefficient, 1/m
    refractive_index: float

    def wavelength(self, f_c: float) -> float:
        return C_LIGHT / (f_c * self.refractive_index)


@dataclass(frozen=True)
class TissueStack:
    skin: Layer
    tissue: Layer
    vessel: Layer

    def __post_init__(self):
        for lay in (self.skin, self.tissue, self.vessel):
            if not (lay.thickness > 0 and lay.mu >= 0 and lay.refractive_index > 0):
                raise ThzError(f"layer {lay.name}: thickness and index must be positive, mu non-negative")

    @property
    def layers(self) -> tuple[Layer, Layer, Layer]:
        return (self.skin, self.tissue, self.vessel)

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["layer", "thickness_m", "mu_per_m", "refractive_index"])
        for lay in self.layers:
            w.writerow([lay.name, repr(lay.thickness), repr(lay.mu), repr(lay.refractive_index)])
        return out.getvalue()


def parse_stack(text: str) -> TissueStack:
    rows = list(csv.DictReader(io.StringIO("\n".join(
        ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")))))
    layers = {}
    for r in rows:
        try:
            layers[r["layer"].strip()] = Layer(r["layer"].strip(), float(r["thickness_m"]),
                                               float(r["mu_per_m"]), float(r["refractive_index"]))
        except (KeyError, ValueError) as exc:
            raise ThzError(f"malformed stack row {r}: {exc}") from None
    missing = [n for n in LAYERS if n not in layers]
    if missing:
        raise ThzError(f"stack lacks layers: {', '.join(missing)}")
    return TissueStack(layers["skin"], layers["tissue"], layers["vessel"])


def load_stack(source: str | Path) -> TissueStack:
    """Stack file path, or ``"link"`` / ``"sync"`` for the shipped stacks."""
    shipped = {"link": "stack_link.csv", "sync": "stack_sync.csv"}
    if str(source) in shipped:
        return parse_stack(resources.files("iobnt_aoi.data").joinpath(shipped[str(source)]).read_text())
    return parse_stack(Path(source).read_text())


def cos_phi(stack: TissueStack, x: float, l_v: float) -> float:
    ratio = x / (l_v + stack.tissue.thickness + stack.skin.thickness)
    arg = 1.0 - ratio * ratio
    if arg <= 0:
        raise ThzError(f"x = {x:g} m lies outside the geometric range at depth {l_v:g} m")
    return math.sqrt(arg)


def path_loss(stack: TissueStack, x: float, l_v: float, f_c: float) -> float:
    """Linear power factor (< 1) of the three-layer path.

    Each layer contributes exp(-mu d) (lambda / (4 pi d))^2 with
    d = L / cos(phi). The absorption of the skin uses the skin coefficient.
    """
    if not 0 <= l_v <= stack.vessel.thickness * (1 + 1e-12):
        raise ThzError("depth l_v must lie in [0, L_v]")
    c = cos_phi(stack, x, l_v)
    out = 1.0
    for lay in stack.layers:
        d = lay.thickness / c
        out *= math.exp(-lay.mu * d) * (lay.wavelength(f_c) / (4 * math.pi * d)) ** 2
    return out


def path_loss_db(stack: TissueStack, x: float, l_v: float, f_c: float) -> float:
    return -10 * math.log10(path_loss(stack, x, l_v, f_c))


def coherence_time(v: float, f_c: float, c: float = C_LIGHT) -> float:
    """T_c = sqrt(9 / (16 pi)) / nu_max with nu_max = v f_c / c."""
    if not v > 0 or not f_c > 0:
        raise ThzError("coherence time needs v > 0 and f_c > 0")
    return math.sqrt(9 / (16 * math.pi)) / (v * f_c / c)


@dataclass(frozen=True)
class ThzLinkConfig:
    f_c: float = 0.5e12
    p_tx: float = 5e3  # peak power, W
    sensitivity: float = 1e-10  # W / sqrt(Hz)
    gamma0_db: float = 15.0
    v: float = 0.03
    x_max: float = 0.5e-3
    bits_per_symbol: int = 1
    bandwidth: float = 5e9
    packet_bits: int = 8 * 8192
    block_airtime: float = 8 * 8192 / 5e9  # s of transmission a block can hold

    def __post_init__(self):
        for name in ("f_c", "p_tx", "sensitivity", "v", "x_max", "bandwidth", "block_airtime"):
            if not getattr(self, name) > 0:
                raise ThzError(f"{name} must be positive")
        if self.bits_per_symbol < 1 or self.packet_bits < 1:
            raise ThzError("bits_per_symbol and packet_bits must be >= 1")
        if not math.isfinite(self.gamma0_db):
            raise ThzError("gamma0_db must be finite")

    @property
    def noise_power(self) -> float:
        return self.sensitivity ** 2 * self.bandwidth

    @property
    def gamma0(self) -> float:
        return 10 ** (self.gamma0_db / 10)


@dataclass(frozen=True)
class BlockPlan:
    coherence_time: float
    count: int
    centers: tuple[float, ...]


def block_plan(config: ThzLinkConfig) -> BlockPlan:
    tc = coherence_time(config.v, config.f_c)
    m = int(math.floor(2 * config.x_max / (config.v * tc) + 1e-12))
    if m < 1:
        raise ThzError("range too short for a single coherence-time block")
    step = config.v * tc
    centers = tuple((k - (m - 1) / 2) * step for k in range(m))
    return BlockPlan(tc, m, centers)


def snr_at(config: ThzLinkConfig, stack: TissueStack, m: int, l_v: float,
           plan: BlockPlan | None = None) -> float:
    """Linear SNR of block m (1-based) at depth l_v."""
    plan = plan or block_plan(config)
    if not 1 <= m <= plan.count:
        raise ThzError(f"block index {m} outside [1, {plan.count}]")
    return config.p_tx * path_loss(stack, plan.centers[m - 1], l_v, config.f_c) / config.noise_power


def outage_and_ber(config: ThzLinkConfig, stack: TissueStack, m: int, gamma0_db: float | None = None,
                   plan: BlockPlan | None = None, probe: int = 257) -> tuple[float, float]:
    """Outage probability of block m under uniform depth, and BER = p_out / B.

    The SNR is first checked for monotonicity in l_v on a probe grid. The
    crossing with the threshold is found by bisection; the outage mass is
    the part of [0, L_v] on the low-SNR side of the crossing.
    """
    plan = plan or block_plan(config)
    g0 = 10 ** ((config.gamma0_db if gamma0_db is None else gamma0_db) / 10)
    lv_max = stack.vessel.thickness
    grid = np.linspace(0.0, lv_max, probe)
    g = np.array([snr_at(config, stack, m, l, plan) for l in grid])
    d = np.diff(g)
    tol = 1e-12 * np.max(np.abs(g))
    rising, falling = np.all(d >= -tol), np.all(d <= tol)
    if not (rising or falling):
        raise InversionAmbiguity(f"SNR of block {m} is not monotone in depth")
    if np.all(g >= g0):
        p = 0.0
    elif np.all(g < g0):
        p = 1.0
    else:
        f = lambda l: snr_at(config, stack, m, l, plan) - g0  # noqa: E731
        root = brentq(f, 0.0, lv_max, xtol=1e-12 * lv_max, rtol=4 * np.finfo(float).eps, maxiter=500)
        p = root / lv_max if rising else 1.0 - root / lv_max
    return p, p / config.bits_per_symbol


def outage_quadrature(config: ThzLinkConfig, stack: TissueStack, m: int, n: int = 1_000_000,
                      plan: BlockPlan | None = None) -> float:
    """Midpoint-rule mass of {l_v : gamma(l_v) < gamma0}; vectorized oracle."""
    plan = plan or block_plan(config)
    x = plan.centers[m - 1]
    l = (np.arange(n) + 0.5) / n * stack.vessel.thickness
    c = np.sqrt(1.0 - (x / (l + stack.tissue.thickness + stack.skin.thickness)) ** 2)
    pl = np.ones(n)
    for lay in stack.layers:
        d = lay.thickness / c
        pl *= np.exp(-lay.mu * d) * (lay.wavelength(config.f_c) / (4 * np.pi * d)) ** 2
    gamma = config.p_tx * pl / config.noise_power
    return float(np.mean(gamma < config.gamma0))


def packet_error_rate(ber: float, bits: int) -> float:
    """Independent bit errors: PER = 1 - (1 - BER)^bits."""
    return float(-np.expm1(bits * np.log1p(-min(ber, 1.0)))) if ber < 1 else 1.0


def _center_first(plan: BlockPlan) -> list[int]:
    return sorted(range(1, plan.count + 1), key=lambda m: (abs(plan.centers[m - 1]), plan.centers[m - 1]))


@dataclass(frozen=True)
class SweepPoint:
    bandwidth: float
    blocks: int
    blocks_used: int
    ber: float
    per: float


def packet_ber(config: ThzLinkConfig, stack: TissueStack) -> SweepPoint:
    """Bit-averaged BER of one packet laid out centre-first over the blocks.

    A block carries BW * block_airtime symbols; bits that do not fit into the
    M available blocks are sent outside the range and count with BER 0.5.
    """
    plan = block_plan(config)
    per_block = int(math.floor(config.bandwidth * config.block_airtime * config.bits_per_symbol + 1e-9))
    if per_block < 1:
        raise ThzError("a block holds no bits at this bandwidth")
    left = config.packet_bits
    err = 0.0
    used = 0
    for m in _center_first(plan):
        if left <= 0:
            break
        n = min(per_block, left)
        err += n * outage_and_ber(config, stack, m, plan=plan)[1]
        left -= n
        used += 1
    err += 0.5 * max(left, 0)
    ber = err / config.packet_bits
    return SweepPoint(config.bandwidth, plan.count, used, ber, packet_error_rate(ber, config.packet_bits))


def ber_vs_bandwidth(config: ThzLinkConfig, stack: TissueStack, bandwidths: Sequence[float]) -> list[SweepPoint]:
    return [packet_ber(replace(config, bandwidth=float(bw)), stack) for bw in bandwidths]


def sweep_to_csv(points: Sequence[SweepPoint]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["bw_hz", "M", "ber", "per"])
    for p in points:
        w.writerow([repr(p.bandwidth), p.blocks, repr(p.ber), repr(p.per)])
    return out.getvalue()


def interior_minimum(points: Sequence[SweepPoint]) -> SweepPoint | None:
    """Lowest-BER point if it is strictly below both sweep endpoints."""
    if len(points) < 3:
        return None
    best = min(points[1:-1], key=lambda p: p.ber)
    return best if best.ber < points[0].ber and best.ber < points[-1].ber else None


# ---------------------------------------------------------------------------
# synchronization


@dataclass(frozen=True)
class SyncPipeline:
    pulse_duration: float = 1e-6
    pulse_period: float = 1e-3
    sample_time: float = 50e-9
    cutoff: float | None = None  # lowpass cutoff, Hz; default 1 / (10 T)
    threshold: float = 0.5  # relative to the envelope maximum

    def __post_init__(self):
        if not 0 < self.pulse_duration < self.pulse_period:
            raise ThzError("need 0 < T < T_p")
        ratio = self.pulse_duration / self.sample_time
        if abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
            raise ThzError("sampling time must divide the pulse duration")
        if not 0 < self.threshold < 1:
            raise ThzError("threshold must lie in (0, 1)")

    @property
    def taps(self) -> int:
        return int(round(self.pulse_duration / self.sample_time))

    @property
    def lowpass_cutoff(self) -> float:
        return self.cutoff if self.cutoff is not None else 1.0 / (10 * self.pulse_duration)

    def matched_filter(self) -> np.ndarray:
        return np.ones(self.taps)

    def lowpass(self) -> tuple[np.ndarray, np.ndarray]:
        """Single-pole IIR y[n] = (1 - a) x[n] + a y[n-1]."""
        a = math.exp(-2 * math.pi * self.lowpass_cutoff * self.sample_time)
        return np.array([1 - a]), np.array([1.0, -a])


@dataclass(frozen=True)
class SyncTrace:
    t: np.ndarray
    samples: np.ndarray  # complex baseband

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["t_s", "re", "im"])
        for t, s in zip(self.t, self.samples):
            w.writerow([repr(float(t)), repr(float(np.real(s))), repr(float(np.imag(s)))])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SyncTrace":
        rows = list(csv.DictReader(io.StringIO(text)))
        t = np.array([float(r["t_s"]) for r in rows])
        s = np.array([float(r.get("re", r.get("sample", 0))) + 1j * float(r.get("im") or 0) for r in rows])
        return cls(t, s)


@dataclass(frozen=True)
class SyncResult:
    detected: bool
    t_below: float | None
    envelope: np.ndarray
    crossings: np.ndarray  # sample indices of accepted apex candidates


def envelope(trace: SyncTrace, pipeline: SyncPipeline) -> np.ndarray:
    y = lfilter(pipeline.matched_filter(), [1.0], trace.samples)
    b, a = pipeline.lowpass()
    return lfilter(b, a, np.abs(y) ** 2)


def sync_detect(trace: SyncTrace, pipeline: SyncPipeline) -> SyncResult:
    """Envelope apex via the zero crossing of its first difference.

    Candidates are falling zero crossings whose envelope exceeds
    ``threshold`` times the envelope maximum; the tallest wins. The time is
    corrected for the matched-filter delay. Returns ``detected=False`` when
    no candidate exists, e.g. for a constant-amplitude input.
    """
    env = envelope(trace, pipeline)
    d = np.diff(env)
    peak = env.max()
    if not peak > 0:
        return SyncResult(False, None, env, np.empty(0, dtype=int))
    # slopes below the rounding floor count as flat; an apex is a rise whose
    # next non-flat slope is a fall, so a settled plateau never qualifies
    sign = np.sign(d) * (np.abs(d) > 1e-9 * peak)
    moving = np.nonzero(sign)[0]
    turn = (sign[moving[:-1]] > 0) & (sign[moving[1:]] < 0)
    idx = moving[:-1][turn] + 1
    idx = idx[env[idx] >= pipeline.threshold * peak]
    if not len(idx):
        return SyncResult(False, None, env, idx)
    best = idx[np.argmax(env[idx])]
    t_hat = float(trace.t[best]) - pipeline.pulse_duration
    return SyncResult(True, t_hat, env, idx)


@dataclass(frozen=True)
class BackscatterScenario:
    """Pulse train back-scattered by a nanosensor passing below the gateway."""

    stack: TissueStack
    f_c: float = 0.14e12
    v: float = 0.03
    n_side: int = 10  # pulses on each side of the crossing
    window: int = 200  # samples simulated around each pulse
    lead: int = 40  # noise-only samples before each pulse

    def amplitudes(self, pipeline: SyncPipeline, l_v: float, offset: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        """Pulse emission times relative to t_below and round-trip amplitudes (peak 1)."""
        k = np.arange(-self.n_side, self.n_side + 1)
        t = k * pipeline.pulse_period + offset
        ref = path_loss(self.stack, 0.0, l_v, self.f_c)
        amp = np.array([path_loss(self.stack, self.v * tk, l_v, self.f_c) / ref for tk in t])
        return t, amp

    def trace(self, pipeline: SyncPipeline, snr_d_db: float, rng: np.random.Generator,
              l_v: float | None = None, offset: float = 0.0, gain: float = 1.0) -> SyncTrace:
        """Gated trace: ``window`` samples around each pulse, complex white noise.

        ``snr_d_db`` is the post-detection SNR at the apex: matched-filter
        output signal power over its noise power, (L a)^2 / (L sigma^2).
        """
        l_v = rng.uniform(0, self.stack.vessel.thickness) if l_v is None else l_v
        t_p, amp = self.amplitudes(pipeline, l_v, offset)
        L = pipeline.taps
        sigma2 = L / 10 ** (snr_d_db / 10)  # unit apex amplitude
        n = np.arange(self.window) - self.lead
        ts, xs = [], []
        theta = rng.uniform(0, 2 * np.pi, len(t_p))
        for tk, a, th in zip(t_p, amp, theta):
            pulse = np.where((n >= 0) & (n < L), a * np.exp(1j * th), 0.0)
            noise = math.sqrt(sigma2 / 2) * (rng.standard_normal(self.window) + 1j * rng.standard_normal(self.window))
            ts.append(tk + n * pipeline.sample_time)
            xs.append(gain * (pulse + noise))
        return SyncTrace(np.concatenate(ts), np.concatenate(xs))


def sync_trials(scenario: BackscatterScenario, pipeline: SyncPipeline, snr_d_db: float,
                trials: int, seed: int) -> np.ndarray:
    """Detection error (s) per seeded trial; NaN when nothing was detected."""
    errs = np.empty(trials)
    for k in range(trials):
        rng = stream(seed, k)
        offset = rng.uniform(-0.5, 0.5) * pipeline.pulse_period
        res = sync_detect(scenario.trace(pipeline, snr_d_db, rng, offset=offset), pipeline)
        errs[k] = res.t_below if res.detected else np.nan
    return errs
