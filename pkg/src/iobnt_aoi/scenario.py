"""Scenario files, pipeline orchestration and artifact writing.

A scenario is an INI file::

    [scenario]
    name = heart
    catalog = default          ; or a path to a catalog CSV
    matrix = default           ; frozen 75 bpm matrix, a CSV path, or "circuit"
    infection = S42
    gateway = S3
    n_s = 1000
    seed = 7

    [heart]
    f_heart_bpm = 75

    [channel]
    kind = fixed-p_loss        ; fixed-p_loss | ultrasonic | terahertz
    p_loss = 0.0

    [oracle]
    enabled = yes
    horizon_s = 8000

    [sweep]
    parameter = channel.p_loss
    values = 1e-6, 1e-3, 0.1, 0.9

Keys carry unit suffixes where a unit applies. Relative paths resolve
against the scenario file.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import math
import os
import tempfile
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import __version__
from .aoi import (REPORT_COLUMNS, PaoiReport, average_paoi, build_delay_model, expected_delay,
                  generation_expectation, simulate_aoi, travel_time_oracle)
from .circuit import HeartParameters, TransientConfig, hemodynamic_weights
from .markov import (TransitionMatrix, build_transition_matrix, enumerate_loops, loops_to_csv,
                     stationary_distribution)
from .rng import stream
from .terahertz import ThzLinkConfig, load_stack, packet_ber
from .ultrasonic import (FlybyGeometry, LossDelayModel, channel_point, doppler, load_cir, load_fixture_cirs,
                         rotated_bpsk_ber)
from .vascular import load_catalog

ORACLE_WALKS = 20_000  # walks behind the reported oracle E[T_d]
CHANNEL_KINDS = ("fixed-p_loss", "ultrasonic", "terahertz")
REQUIRED = (
    ("scenario", "infection"), ("scenario", "gateway"), ("scenario", "n_s"), ("scenario", "seed"),
    ("heart", "f_heart_bpm"), ("channel", "kind"),
)
HEART_KEYS = {
    "p_at_mmhg": "p_at", "r_at_mmhg_s_per_ml": "r_at", "rsa_mmhg_s_per_ml": "rsa",
    "rca_mmhg_s_per_ml": "rca", "c_ca_ml_per_mmhg": "c_ca", "p_sv_mmhg": "p_sv",
    "c_min_ml_per_mmhg": "c_min", "c_max_ml_per_mmhg": "c_max", "clip_fraction": "clip_fraction",
}
CHANNEL_REQUIRED = {
    "fixed-p_loss": ("p_loss",),
    "ultrasonic": ("eb_n0_db", "packet_bits"),
    "terahertz": ("bandwidth_hz",),
}


class ScenarioError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage} failed: {type(cause).__name__}: {cause}")


@dataclass(frozen=True)
class Diagnostic:
    key: str
    message: str

    def __str__(self) -> str:
        return f"{self.key}: {self.message}"


def _read(path: str | Path | None, text: str | None = None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    if text is not None:
        cp.read_string(text)
    else:
        with open(path) as fh:
            cp.read_file(fh)
    return cp


def _get(cp: configparser.ConfigParser, section: str, key: str, default=None):
    if cp.has_section(section) and cp.has_option(section, key):
        return cp.get(section, key).strip()
    return default


def _is_int(value: str) -> bool:
    try:
        int(value)
        return True
    except (TypeError, ValueError):
        return False


def _is_float(value: str) -> bool:
    try:
        float(value)
        return True
    except (TypeError, ValueError):
        return False


def validate_config(cp: configparser.ConfigParser, base: Path) -> list[Diagnostic]:
    diags: list[Diagnostic] = []
    for section, key in REQUIRED:
        if _get(cp, section, key) in (None, ""):
            diags.append(Diagnostic(f"{section}.{key}", "missing required key"))

    catalog = None
    cat_src = _get(cp, "scenario", "catalog", "default")
    try:
        catalog = load_catalog(_resolve(cat_src, base))
    except (OSError, ValueError) as exc:
        diags.append(Diagnostic("scenario.catalog", f"cannot load catalog: {exc}"))

    inf, gw = _get(cp, "scenario", "infection"), _get(cp, "scenario", "gateway")
    if inf and gw and inf == gw:
        diags.append(Diagnostic("scenario.gateway", "infection and gateway must differ"))
    if catalog is not None:
        for key, sid in (("infection", inf), ("gateway", gw)):
            if sid and sid not in catalog:
                diags.append(Diagnostic(f"scenario.{key}", f"unknown state {sid}"))

    n_s = _get(cp, "scenario", "n_s")
    if n_s not in (None, "") and not (_is_int(n_s) and int(n_s) >= 1):
        diags.append(Diagnostic("scenario.n_s", "must be an integer >= 1"))
    seed = _get(cp, "scenario", "seed")
    if seed not in (None, "") and not (_is_int(seed) and int(seed) >= 0):
        diags.append(Diagnostic("scenario.seed", "must be a non-negative integer"))
    f_heart = _get(cp, "heart", "f_heart_bpm")
    if f_heart not in (None, "") and not (_is_float(f_heart) and float(f_heart) > 0):
        diags.append(Diagnostic("heart.f_heart_bpm", "must be a positive number"))

    if cp.has_section("heart"):
        for key, val in cp.items("heart"):
            if key == "f_heart_bpm":
                continue
            if key not in HEART_KEYS:
                diags.append(Diagnostic(f"heart.{key}", "unknown key"))
            elif not _is_float(val):
                diags.append(Diagnostic(f"heart.{key}", "must be numeric"))

    matrix = _get(cp, "scenario", "matrix", "default")
    if matrix not in ("default", "circuit") and not _resolve(matrix, base).exists():
        diags.append(Diagnostic("scenario.matrix", f"file not found: {matrix}"))

    kind = _get(cp, "channel", "kind")
    if kind:
        if kind not in CHANNEL_KINDS:
            diags.append(Diagnostic("channel.kind", f"must be one of {', '.join(CHANNEL_KINDS)}"))
        else:
            for key in CHANNEL_REQUIRED[kind]:
                val = _get(cp, "channel", key)
                if val in (None, ""):
                    diags.append(Diagnostic(f"channel.{key}", f"required for channel kind {kind}"))
                elif not _is_float(val):
                    diags.append(Diagnostic(f"channel.{key}", "must be numeric"))
            p = _get(cp, "channel", "p_loss")
            if kind == "fixed-p_loss" and _is_float(p) and not 0 <= float(p) < 1:
                diags.append(Diagnostic("channel.p_loss", "must lie in [0, 1)"))

    if cp.has_section("sweep"):
        param = _get(cp, "sweep", "parameter")
        values = _get(cp, "sweep", "values", "")
        if not param:
            diags.append(Diagnostic("sweep.parameter", "missing required key"))
        elif "." not in param:
            diags.append(Diagnostic("sweep.parameter", "must be written as section.key"))
        grid = [v.strip() for v in values.split(",") if v.strip()]
        if not grid:
            diags.append(Diagnostic("sweep.values", "empty grid"))
        elif not all(_is_float(v) for v in grid):
            diags.append(Diagnostic("sweep.values", "non-numeric value in grid"))
    horizon = _get(cp, "oracle", "horizon_s")
    if horizon not in (None, "") and not (_is_float(horizon) and float(horizon) > 0):
        diags.append(Diagnostic("oracle.horizon_s", "must be a positive number"))
    return diags


def validate(path: str | Path) -> list[Diagnostic]:
    path = Path(path)
    try:
        cp = _read(path)
    except (OSError, configparser.Error) as exc:
        return [Diagnostic("file", f"cannot read scenario: {exc}")]
    return validate_config(cp, path.parent)


def _resolve(value: str, base: Path) -> Path | str:
    if value in ("default", "circuit", "link", "sync"):
        return value
    p = Path(value)
    return p if p.is_absolute() else base / p


# ---------------------------------------------------------------------------
# resolved scenario


@dataclass(frozen=True)
class Scenario:
    name: str
    catalog: str
    matrix: str
    infection: str
    gateway: str
    n_s: int
    seed: int
    f_heart: float
    channel: dict
    oracle: bool
    horizon_s: float
    sweep_parameter: str | None
    sweep_values: tuple[float, ...]
    heart: dict
    solver: dict
    base: str

    def echo(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items() if k != "base"}

    def with_value(self, parameter: str, value: float) -> "Scenario":
        section, key = parameter.split(".", 1)
        if section == "scenario" and key in ("n_s", "seed"):
            return replace(self, **{key: int(value)})
        if section == "heart" and key == "f_heart_bpm":
            return replace(self, f_heart=float(value))
        if section == "oracle" and key == "horizon_s":
            return replace(self, horizon_s=float(value))
        if section == "channel":
            ch = dict(self.channel)
            if key == "kind" or (key in ch and not _is_float(str(ch[key]))):
                raise ScenarioError(f"parameter {parameter} is not numeric")
            ch[key] = float(value)
            return replace(self, channel=ch)
        if section == "heart" and key in HEART_KEYS:
            return replace(self, heart={**self.heart, HEART_KEYS[key]: float(value)})
        raise ScenarioError(f"unknown sweep parameter {parameter}")


def load_scenario(path: str | Path, seed: int | None = None) -> Scenario:
    path = Path(path)
    diags = validate(path)
    if diags:
        raise ScenarioError("; ".join(map(str, diags)))
    cp = _read(path)
    channel = dict(cp.items("channel"))
    heart = {HEART_KEYS[k]: float(v) for k, v in cp.items("heart") if k != "f_heart_bpm"}
    solver = dict(cp.items("solver")) if cp.has_section("solver") else {}
    grid = tuple(float(v) for v in _get(cp, "sweep", "values", "").split(",") if v.strip())
    return Scenario(
        name=_get(cp, "scenario", "name", path.stem),
        catalog=_get(cp, "scenario", "catalog", "default"),
        matrix=_get(cp, "scenario", "matrix", "default"),
        infection=_get(cp, "scenario", "infection"),
        gateway=_get(cp, "scenario", "gateway"),
        n_s=int(_get(cp, "scenario", "n_s")),
        seed=int(_get(cp, "scenario", "seed")) if seed is None else int(seed),
        f_heart=float(_get(cp, "heart", "f_heart_bpm")),
        channel=channel,
        oracle=cp.getboolean("oracle", "enabled", fallback=False),
        horizon_s=float(_get(cp, "oracle", "horizon_s", "8000")),
        sweep_parameter=_get(cp, "sweep", "parameter"),
        sweep_values=grid,
        heart=heart,
        solver=solver,
        base=str(path.parent),
    )


# ---------------------------------------------------------------------------
# stages


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _fixture_bytes(name: str) -> bytes:
    return resources.files("iobnt_aoi.data").joinpath(name).read_bytes()


def _catalog_bytes(sc: Scenario) -> bytes:
    src = _resolve(sc.catalog, Path(sc.base))
    return _fixture_bytes("default_catalog.csv") if src == "default" else Path(src).read_bytes()


def _heart_params(sc: Scenario) -> HeartParameters:
    return HeartParameters(f_heart=sc.f_heart, **sc.heart)


def _solver_config(sc: Scenario) -> TransientConfig:
    kw = {}
    for key in ("settle_cycles", "average_cycles"):
        if key in sc.solver:
            kw[key] = int(sc.solver[key])
    if "scheme" in sc.solver:
        kw["scheme"] = sc.solver["scheme"]
    steps = int(sc.solver.get("steps_per_cycle", 400))
    return TransientConfig.for_heart(sc.f_heart, steps_per_cycle=steps, **kw)


def transition_matrix(sc: Scenario, cache_dir: Path | None, hashes: dict) -> TransitionMatrix:
    """Frozen fixture, a CSV file, or a circuit solution cached by content hash."""
    if sc.matrix == "default":
        data = _fixture_bytes("default_transition_75bpm.csv")
        hashes["default_transition_75bpm.csv"] = sha256_bytes(data)
        return TransitionMatrix.from_csv(data.decode())
    if sc.matrix != "circuit":
        p = Path(_resolve(sc.matrix, Path(sc.base)))
        hashes[p.name] = sha256_bytes(p.read_bytes())
        return TransitionMatrix.from_csv(p.read_text())
    catalog_bytes = _catalog_bytes(sc)
    heart, cfg = _heart_params(sc), _solver_config(sc)
    key = sha256_bytes(json.dumps({
        "catalog": sha256_bytes(catalog_bytes), "heart": heart.__dict__, "solver": cfg.__dict__,
        "version": __version__,
    }, sort_keys=True, default=str).encode())[:16]
    cached = cache_dir / f"pi-{key}.csv" if cache_dir else None
    if cached is not None and cached.exists():
        hashes[cached.name] = sha256_bytes(cached.read_bytes())
        return TransitionMatrix.from_csv(cached.read_text())
    catalog = load_catalog(_resolve(sc.catalog, Path(sc.base)))
    weights, _, _ = hemodynamic_weights(catalog, heart, cfg)
    tm = build_transition_matrix(weights, catalog)
    if cached is not None:
        write_atomic(cached, tm.to_csv())
        hashes[cached.name] = sha256_bytes(cached.read_bytes())
    return tm


def channel_loss(sc: Scenario, hashes: dict) -> tuple[float, dict]:
    """Packet loss probability for the scenario's channel and the link details."""
    ch = sc.channel
    kind = ch["kind"]
    if kind == "fixed-p_loss":
        return float(ch["p_loss"]), {}
    if kind == "ultrasonic":
        if "cir_files" in ch:
            paths = [Path(_resolve(p.strip(), Path(sc.base))) for p in ch["cir_files"].split(",")]
            cirs = [load_cir(p) for p in paths]
            for p in paths:
                hashes[p.name] = sha256_bytes(p.read_bytes())
        else:
            cirs = load_fixture_cirs()
            for mm in (20, 40, 80):
                name = f"cir_{mm:03d}mm.csv"
                hashes[name] = sha256_bytes(_fixture_bytes(name))
        model = LossDelayModel([channel_point(c) for c in cirs])
        geom = FlybyGeometry(d_min=float(ch.get("d_min_m", 0.02)), speed=float(ch.get("speed_mps", 0.2)),
                             f_c=float(ch.get("f_c_hz", 1e6)))
        bits = int(float(ch["packet_bits"]))
        rate = float(ch.get("symbol_rate_hz", 1e5))
        # packet centred on the closest approach; the receiver locks its phase at the first bit
        t = geom.t_below + (np.arange(bits) - 0.5 * (bits - 1)) / rate
        if t[0] < geom.t_in or t[-1] > geom.t_out:
            raise ScenarioError("packet does not fit into the fly-by window")
        phase = 2 * np.pi * cumulative_trapezoid(doppler(geom, t), t, initial=0.0) if bits > 1 else np.zeros(1)
        loss, _ = model(np.clip(geom.distance(t), model.distances[0], model.distances[-1]))
        ref, _ = model(geom.d_min)
        bit_err = np.clip(rotated_bpsk_ber(10 ** ((float(ch["eb_n0_db"]) - (loss - ref)) / 10), phase), 0.0, 1.0)
        ber = float(bit_err.mean())
        per = float(-np.expm1(np.sum(np.log1p(-bit_err))))
        return per, {"ber": ber, "per": per}
    if kind == "terahertz":
        stack_src = ch.get("stack", "link")
        stack = load_stack(_resolve(stack_src, Path(sc.base)))
        if stack_src == "link":
            hashes["stack_link.csv"] = sha256_bytes(_fixture_bytes("stack_link.csv"))
        cfg = ThzLinkConfig()
        mapping = {"bandwidth_hz": "bandwidth", "f_c_hz": "f_c", "p_tx_w": "p_tx", "gamma0_db": "gamma0_db",
                   "v_mps": "v", "x_max_m": "x_max", "packet_bits": "packet_bits",
                   "block_airtime_s": "block_airtime", "sensitivity_w_per_rthz": "sensitivity"}
        kw = {}
        for key, attr in mapping.items():
            if key in ch:
                kw[attr] = int(float(ch[key])) if attr == "packet_bits" else float(ch[key])
        cfg = replace(cfg, **kw)
        pt = packet_ber(cfg, stack)
        return pt.per, {"ber": pt.ber, "per": pt.per, "M": pt.blocks}
    raise ScenarioError(f"unknown channel kind {kind}")


@dataclass
class RunResult:
    report: PaoiReport
    link: dict
    sawtooth: np.ndarray | None
    timings: dict
    hashes: dict


def run_point(sc: Scenario, cache_dir: Path | None = None) -> RunResult:
    timings: dict[str, float] = {}
    hashes: dict[str, str] = {}

    def stage(name: str, fn: Callable):
        t0 = time.perf_counter()
        try:
            return fn()
        except Exception as exc:  # surface the stage with its upstream cause
            raise StageError(name, exc) from exc
        finally:
            timings[name] = round(time.perf_counter() - t0, 6)

    catalog = stage("catalog", lambda: load_catalog(_resolve(sc.catalog, Path(sc.base))))
    hashes["catalog"] = sha256_bytes(_catalog_bytes(sc))
    tm = stage("markov", lambda: transition_matrix(sc, cache_dir, hashes))
    sv = stage("stationary", lambda: stationary_distribution(tm))
    times = catalog.travel_times()
    loops = stage("loops", lambda: enumerate_loops(tm, catalog, times))
    p_loss, link = stage("channel", lambda: channel_loss(sc, hashes))

    def closed():

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            e_tg = generation_expectation(sv[sc.infection], sc.n_s, times[sc.infection])
        dm = build_delay_model(tm, catalog, loops, sc.infection, sc.gateway, times)
        return e_tg, expected_delay(dm)

    e_tg, e_td = stage("aoi", closed)
    mean = ci = td_oracle = math.nan
    n_peaks = 0
    saw = None
    if sc.oracle and p_loss < 1:
        def oracle():
            return simulate_aoi(tm, times, sc.infection, sc.gateway, p_loss, sc.n_s, sc.horizon_s,
                                stream(sc.seed, 1), seed=sc.seed)
        res = stage("oracle", oracle)
        mean, ci, n_peaks = res.mean_peak, res.ci95, len(res.peaks)
        saw = res.sawtooth()
        td_oracle, _ = stage("delay_oracle", lambda: travel_time_oracle(
            tm, times, sc.infection, sc.gateway, ORACLE_WALKS, stream(sc.seed, 2)))
    paoi = math.inf if p_loss == 1 else average_paoi(e_tg, e_td, p_loss)
    report = PaoiReport(sc.name, e_tg, e_td, p_loss, paoi, mean, ci, n_peaks, sc.seed, td_oracle)
    return RunResult(report, link, saw, timings, hashes)


def _run_point_job(args):
    sc, cache_dir = args
    return run_point(sc, cache_dir)


# ---------------------------------------------------------------------------
# output


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sawtooth_csv(points: np.ndarray) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["t", "age"])
    for t, a in points:
        w.writerow([repr(float(t)), repr(float(a))])
    return out.getvalue()


def _manifest(sc: Scenario, results: Sequence[RunResult], outputs: Sequence[Path], out: Path) -> str:
    hashes: dict[str, str] = {}
    timings: dict[str, float] = {}
    for r in results:
        hashes.update(r.hashes)
        for k, v in r.timings.items():
            timings[k] = round(timings.get(k, 0.0) + v, 6)
    return json.dumps({
        "package_version": __version__,
        "scenario": sc.echo(),
        "fixtures": dict(sorted(hashes.items())),
        "stage_seconds": timings,
        "outputs": sorted(str(p.relative_to(out)) for p in outputs),
    }, indent=2, sort_keys=True) + "\n"


def _table(results: Sequence[RunResult], lead: Sequence[tuple[str, Sequence[str]]] = ()) -> str:
    """Report columns, then the oracle delay and any link columns."""
    link_keys = sorted({k for r in results for k in r.link})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*(name for name, _ in lead), *REPORT_COLUMNS, "E_Td_oracle", *link_keys])

    def cell(x) -> str:
        return "" if x is None or math.isnan(x) else repr(float(x))
    for k, r in enumerate(results):
        w.writerow([*(vals[k] for _, vals in lead), *r.report.row(), cell(r.report.td_oracle_mean),
                    *(cell(r.link.get(key)) for key in link_keys)])
    return buf.getvalue()


def run(sc: Scenario, out: Path) -> list[Path]:
    out = Path(out)
    result = run_point(sc, out / "cache")
    outputs = [out / "report.csv"]
    write_atomic(outputs[0], _table([result]))
    if result.sawtooth is not None:
        outputs.append(out / "sawtooth.csv")
        write_atomic(outputs[-1], _sawtooth_csv(result.sawtooth))
    write_atomic(out / "manifest.json", _manifest(sc, [result], outputs, out))
    write_atomic(out / "summary.txt", summarize([result.report], result.link))
    return outputs + [out / "manifest.json", out / "summary.txt"]


def sweep(sc: Scenario, out: Path, parameter: str | None = None, values: Sequence[float] | None = None,
          jobs: int = 1) -> list[Path]:
    parameter = parameter or sc.sweep_parameter
    values = tuple(sc.sweep_values if values is None else values)
    if not parameter:
        raise ScenarioError("no sweep parameter given")
    if not values:
        raise ScenarioError("empty sweep grid")
    points = [sc.with_value(parameter, v) for v in values]
    out = Path(out)
    cache = out / "cache"
    if any(p.matrix == "circuit" for p in points):
        # fill the matrix cache once so parallel points do not race on it
        transition_matrix(points[0], cache, {})
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_point_job, [(p, cache) for p in points]))
    else:
        results = [run_point(p, cache) for p in points]

    lead = [("sweep_parameter", [parameter] * len(values)), ("sweep_value", [repr(float(v)) for v in values])]
    outputs = [out / "sweep.csv"]
    write_atomic(outputs[0], _table(results, lead))
    summary = summarize([r.report for r in results], None, parameter, values, results)
    write_atomic(out / "manifest.json", _manifest(sc, results, outputs, out))
    write_atomic(out / "summary.txt", summary)
    return outputs + [out / "manifest.json", out / "summary.txt"]


def summarize(reports: Sequence[PaoiReport], link: dict | None = None, parameter: str | None = None,
              values: Sequence[float] | None = None, results: Sequence[RunResult] | None = None) -> str:
    lines = []
    if parameter is None:
        r = reports[0]
        lines.append(f"scenario {r.scenario}: E[T_g] = {r.e_tg:.6g} s, E[T_d] = {r.e_td:.6g} s, "
                     f"p_loss = {r.p_loss:.3g}, average PAoI = {r.paoi_closed:.6g} s")
        if r.n_peaks:
            lines.append(f"  oracle mean peak {r.paoi_oracle_mean:.6g} s +/- {r.paoi_oracle_ci95:.3g} "
                         f"over {r.n_peaks} peaks")
        if not math.isnan(r.td_oracle_mean):
            gap = (r.e_td - r.td_oracle_mean) / r.td_oracle_mean
            lines.append(f"  oracle E[T_d] {r.td_oracle_mean:.6g} s, closed form deviates by {gap * 100:+.2f}%")
        for k, v in sorted((link or {}).items()):
            lines.append(f"  link {k} = {v:.6g}")
        return "\n".join(lines) + "\n"
    lines.append(f"sweep over {parameter}: {len(values)} points")
    for v, r in zip(values, reports):
        lines.append(f"  {parameter} = {v:.6g}: p_loss = {r.p_loss:.3g}, average PAoI = {r.paoi_closed:.6g} s")
    if parameter == "channel.bandwidth_hz" and results and len(results) >= 3:
        bers = [res.link["ber"] for res in results]
        k = int(np.argmin(bers[1:-1])) + 1
        if bers[k] < bers[0] and bers[k] < bers[-1]:
            lines.append(f"  interior BER minimum at {parameter} = {values[k]:.6g} (BER {bers[k]:.3g})")
        else:
            lines.append("  no interior BER minimum")
    return "\n".join(lines) + "\n"


def export_matrix(sc: Scenario, out: Path) -> list[Path]:
    out = Path(out)
    tm = transition_matrix(sc, out / "cache", {})
    sv = stationary_distribution(tm)
    paths = [out / "matrix.csv", out / "stationary.csv"]
    write_atomic(paths[0], tm.to_csv())
    write_atomic(paths[1], sv.to_csv())
    return paths


def export_loops(sc: Scenario, out: Path) -> list[Path]:
    out = Path(out)
    catalog = load_catalog(_resolve(sc.catalog, Path(sc.base)))
    tm = transition_matrix(sc, out / "cache", {})
    path = out / "loops.csv"
    write_atomic(path, loops_to_csv(enumerate_loops(tm, catalog)))
    return [path]
