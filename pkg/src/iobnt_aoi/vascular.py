"""Vessel catalog: states, geometry, adjacency and per-segment RLC values.

The catalog is a comma-separated table with one row per Markov state::

    state_id,name,kind,length_m,radius_m,thickness_m,speed_mps,downstream,R,L,C

``downstream`` lists successor ids separated by semicolons. ``R``, ``L`` and
``C`` are optional; when present they are taken as precomputed circuit values
(mmHg*s/mL, mmHg*s^2/mL, mL/mmHg) and the geometric derivation is skipped.
Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import csv
import enum
import io
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

MMHG_PA = 133.322387415
ML_M3 = 1e-6

CATALOG_COLUMNS = (
    "state_id", "name", "kind", "length_m", "radius_m", "thickness_m",
    "speed_mps", "downstream", "R", "L", "C",
)
_REQUIRED = CATALOG_COLUMNS[:8]


class CatalogError(ValueError):
    """Malformed catalog. ``row`` is the 1-based data row (None if global)."""

    def __init__(self, message: str, row: int | None = None, state_id: str | None = None):
        self.row = row
        self.state_id = state_id
        where = []
        if row is not None:
            where.append(f"row {row}")
        if state_id:
            where.append(state_id)
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class VesselKind(str, enum.Enum):
    ARTERY = "artery"
    VEIN = "vein"
    CAPILLARY = "capillary"
    HEART_CHAMBER = "heart-chamber"
    LUNG = "lung"


@dataclass(frozen=True)
class RlcTriple:
    resistance: float
    inductance: float
    compliance: float

    def scaled(self, factor: float) -> "RlcTriple":
        return RlcTriple(self.resistance * factor, self.inductance * factor, self.compliance * factor)


@dataclass(frozen=True)
class BloodProperties:
    viscosity: float = 3.5e-3  # Pa*s
    density: float = 1050.0  # kg/m^3
    elastic_modulus: float = 4.0e5  # Pa

    def __post_init__(self):
        for name in ("viscosity", "density", "elastic_modulus"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class VesselSegment:
    state_id: str
    name: str
    kind: VesselKind
    length: float
    radius: float | None
    wall_thickness: float | None
    mean_speed: float
    downstream: tuple[str, ...]
    rlc: RlcTriple | None = None  # precomputed, circuit units

    @property
    def has_geometry(self) -> bool:
        return self.radius is not None and self.wall_thickness is not None


@dataclass(frozen=True)
class VesselCatalog:
    segments: Mapping[str, VesselSegment]
    blood: BloodProperties = field(default_factory=BloodProperties)

    def __getitem__(self, state_id: str) -> VesselSegment:
        return self.segments[state_id]

    def __contains__(self, state_id: object) -> bool:
        return state_id in self.segments

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def state_ids(self) -> list[str]:
        """State ids in natural order (S1, S2, ..., S10, ...)."""
        return sorted(self.segments, key=natural_key)

    def index(self) -> dict[str, int]:
        return {sid: i for i, sid in enumerate(self.state_ids)}

    def of_kind(self, kind: VesselKind) -> list[str]:
        return [sid for sid in self.state_ids if self.segments[sid].kind == kind]

    def upstream(self, state_id: str) -> list[str]:
        return [sid for sid in self.state_ids if state_id in self.segments[sid].downstream]

    def travel_times(self) -> dict[str, float]:
        return {sid: segment_travel_time(seg) for sid, seg in self.segments.items()}


def natural_key(state_id: str):
    return [int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", state_id)]


def _float(value: str, column: str, row: int, sid: str | None, required: bool) -> float | None:
    value = (value or "").strip()
    if not value:
        if required:
            raise CatalogError(f"missing field {column}", row, sid)
        return None
    try:
        return float(value)
    except ValueError:
        raise CatalogError(f"field {column} is not numeric: {value!r}", row, sid) from None


def parse_catalog(text: str, blood: BloodProperties | None = None) -> VesselCatalog:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise CatalogError("empty catalog")
    reader = csv.DictReader(io.StringIO("\n".join(lines)))
    header = [h.strip() for h in (reader.fieldnames or [])]
    missing = [c for c in _REQUIRED if c not in header]
    if missing:
        raise CatalogError(f"header lacks columns: {', '.join(missing)}")

    segments: dict[str, VesselSegment] = {}
    rows: dict[str, int] = {}
    for row_no, raw in enumerate(reader, start=1):
        rec = {k.strip(): (v or "").strip() for k, v in raw.items() if k is not None}
        sid = rec.get("state_id", "")
        if not sid:
            raise CatalogError("missing field state_id", row_no)
        if sid in segments:
            raise CatalogError(f"duplicate state id {sid} (first seen in row {rows[sid]})", row_no, sid)
        for col in ("name", "kind"):
            if not rec.get(col):
                raise CatalogError(f"missing field {col}", row_no, sid)
        try:
            kind = VesselKind(rec["kind"])
        except ValueError:
            raise CatalogError(f"unknown kind {rec['kind']!r}", row_no, sid) from None

        needs_geometry = kind in (VesselKind.ARTERY, VesselKind.VEIN, VesselKind.CAPILLARY)
        length = _float(rec.get("length_m", ""), "length_m", row_no, sid, True)
        speed = _float(rec.get("speed_mps", ""), "speed_mps", row_no, sid, True)
        radius = _float(rec.get("radius_m", ""), "radius_m", row_no, sid, needs_geometry)
        thick = _float(rec.get("thickness_m", ""), "thickness_m", row_no, sid, needs_geometry)
        for col, val in (("length_m", length), ("speed_mps", speed), ("radius_m", radius), ("thickness_m", thick)):
            if val is not None and not val > 0:
                raise CatalogError(f"non-positive geometry {col}={val}", row_no, sid)

        rlc_vals = [_float(rec.get(c, ""), c, row_no, sid, False) for c in ("R", "L", "C")]
        rlc = None
        if any(v is not None for v in rlc_vals):
            if any(v is None for v in rlc_vals):
                raise CatalogError("precomputed R, L, C must be given together", row_no, sid)
            if any(v < 0 for v in rlc_vals):
                raise CatalogError("precomputed R, L, C must be non-negative", row_no, sid)
            rlc = RlcTriple(*rlc_vals)
        if not (needs_geometry or rlc is not None):
            raise CatalogError("segment without geometry needs precomputed R, L, C", row_no, sid)

        downstream = tuple(d.strip() for d in rec["downstream"].split(";") if d.strip())
        if not downstream:
            raise CatalogError("empty downstream list", row_no, sid)
        segments[sid] = VesselSegment(sid, rec["name"], kind, length, radius, thick, speed, downstream, rlc)
        rows[sid] = row_no

    for sid, seg in segments.items():
        for d in seg.downstream:
            if d not in segments:
                raise CatalogError(f"unknown state {d}", rows[sid], sid)
    return VesselCatalog(segments, blood or BloodProperties())


def load_catalog(source: str | Path | None = None, blood: BloodProperties | None = None) -> VesselCatalog:
    """Load a catalog file; ``None`` or ``"default"`` loads the shipped 51-state body."""
    if source is None or str(source) == "default":
        text = resources.files("iobnt_aoi.data").joinpath("default_catalog.csv").read_text()
    else:
        text = Path(source).read_text()
    return parse_catalog(text, blood)


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def dump_catalog(catalog: VesselCatalog) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CATALOG_COLUMNS)
    for sid in catalog.state_ids:
        s = catalog[sid]
        rlc = s.rlc
        writer.writerow([
            s.state_id, s.name, s.kind.value, _fmt(s.length), _fmt(s.radius), _fmt(s.wall_thickness),
            _fmt(s.mean_speed), ";".join(s.downstream),
            _fmt(rlc.resistance if rlc else None), _fmt(rlc.inductance if rlc else None),
            _fmt(rlc.compliance if rlc else None),
        ])
    return out.getvalue()


def save_catalog(catalog: VesselCatalog, path: str | Path) -> None:
    Path(path).write_text(dump_catalog(catalog))


def derive_rlc(segment: VesselSegment, blood: BloodProperties, mode: str = "paper") -> RlcTriple:
    """Resistance, inertance and compliance of a segment in SI units.

    ``mode="paper"`` keeps the resistance expression as published,
    8*pi*mu*dl / (pi*R^2), which reduces to 8*mu*dl/R^2 and is *not* the
    Poiseuille law. ``mode="poiseuille"`` uses 8*mu*dl / (pi*R^4) instead.
    Inertance and compliance are the same in both modes.
    """
    if not segment.has_geometry:
        raise ValueError(f"{segment.state_id} has no geometry; use its precomputed R/L/C")
    dl, r, h = segment.length, segment.radius, segment.wall_thickness
    if mode == "paper":
        resistance = 8 * math.pi * blood.viscosity * dl / (math.pi * r**2)
    elif mode == "poiseuille":
        resistance = 8 * blood.viscosity * dl / (math.pi * r**4)
    else:
        raise ValueError(f"unknown formula mode {mode!r}")
    inductance = 9 * blood.density * dl / (4 * math.pi * r**2)
    compliance = 3 * math.pi * r**3 * dl / (2 * blood.elastic_modulus * h)
    return RlcTriple(resistance, inductance, compliance)


def si_to_circuit(rlc: RlcTriple) -> RlcTriple:
    """Convert SI (Pa*s/m^3, Pa*s^2/m^3, m^3/Pa) to mmHg / mL / s units."""
    k = ML_M3 / MMHG_PA
    return RlcTriple(rlc.resistance * k, rlc.inductance * k, rlc.compliance / k)


def circuit_rlc(segment: VesselSegment, blood: BloodProperties, mode: str = "paper") -> RlcTriple:
    if segment.rlc is not None:
        return segment.rlc
    return si_to_circuit(derive_rlc(segment, blood, mode))


def segment_travel_time(segment: VesselSegment) -> float:
    if not segment.mean_speed > 0:
        raise ValueError(f"{segment.state_id}: mean speed must be positive")
    return segment.length / segment.mean_speed


def strongly_connected_components(catalog: VesselCatalog) -> list[set[str]]:
    """Tarjan's algorithm over the downstream adjacency."""
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    stack: list[str] = []
    on_stack: set[str] = set()
    comps: list[set[str]] = []
    counter = 0

    def visit(v: str) -> None:
        nonlocal counter
        index[v] = low[v] = counter
        counter += 1
        stack.append(v)
        on_stack.add(v)
        for w in catalog[v].downstream:
            if w not in index:
                visit(w)
                low[v] = min(low[v], low[w])
            elif w in on_stack:
                low[v] = min(low[v], index[w])
        if low[v] == index[v]:
            comp = set()
            while True:
                w = stack.pop()
                on_stack.discard(w)
                comp.add(w)
                if w == v:
                    break
            comps.append(comp)

    for v in catalog.state_ids:
        if v not in index:
            visit(v)
    return comps


def paths_between(catalog: VesselCatalog, start: str, stop: Iterable[str]) -> list[list[str]]:
    """All simple downstream paths from ``start`` ending at the first state in ``stop``."""
    stop = set(stop)
    out: list[list[str]] = []

    def walk(path: list[str]) -> None:
        for nxt in catalog[path[-1]].downstream:
            if nxt in path:
                continue
            if nxt in stop:
                out.append(path + [nxt])
            else:
                walk(path + [nxt])

    walk([start])
    return out
