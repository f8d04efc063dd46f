"""AIS ingestion and trajectory preparation.

Raw rows -> per-MMSI voyages -> noise filter -> trip segmentation ->
2-minute cubic Hermite resampling -> kinematic derivatives -> dataset.
Every stage works on one voyage at a time, so ``process_voyages`` can fan
out across processes without changing the result.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geo import GeoPoint, InvalidInputError, angular_difference, bearing_arr, wrap_360

KNOT_MS = 1852.0 / 3600.0
SAMPLE_INTERVAL_S = 120.0
FIELDS = ("t", "x", "y", "v", "psi", "a", "psi_dot", "j", "beta", "beta_dot")
FEATURES = FIELDS[1:]
MAIN_FEATURES = ("x", "y", "v", "psi")
PHYSICS_FEATURES = ("a", "psi_dot", "j", "beta", "beta_dot")
CANONICAL_COLUMNS = ("mmsi", "timestamp", "lat", "lon", "sog", "cog", "ship_type")
MANDATORY_COLUMNS = ("mmsi", "timestamp", "lat", "lon", "sog", "cog")
DATASET_SCHEMA_VERSION = 1


class SchemaError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class AisRecord:
    mmsi: int
    timestamp: float
    position: GeoPoint
    sog: float  # knots, as received
    cog: float
    ship_type: str = ""


@dataclass(frozen=True)
class Voyage:
    mmsi: int
    records: tuple[AisRecord, ...]

    def __len__(self):
        return len(self.records)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([r.timestamp for r in self.records], dtype=np.float64)


@dataclass(frozen=True)
class Rejection:
    """Typed "this voyage did not make it" outcome; not an error."""
    mmsi: int
    reason: str
    stage: str = ""


@dataclass(frozen=True)
class TrajectoryPoint:
    t: float
    x: float
    y: float
    v: float
    psi: float
    a: float
    psi_dot: float
    j: float
    beta: float
    beta_dot: float


@dataclass
class TrajectorySegment:
    """Fixed-interval track; ``data`` rows are the ten ``FIELDS`` columns."""
    mmsi: int
    data: np.ndarray
    source_span: tuple[float, float] = (math.nan, math.nan)
    interval: float = SAMPLE_INTERVAL_S

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[1] != len(FIELDS):
            raise InvalidInputError(f"segment data must be (n, {len(FIELDS)}), got {self.data.shape}")

    def __len__(self):
        return self.data.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.data[:, FIELDS.index(name)]

    @property
    def t(self) -> np.ndarray:
        return self.data[:, 0]

    @property
    def features(self) -> np.ndarray:
        return self.data[:, 1:]

    @property
    def span_s(self) -> float:
        return float(self.data[-1, 0] - self.data[0, 0]) if len(self) else 0.0

    def points(self) -> list[TrajectoryPoint]:
        return [TrajectoryPoint(*map(float, row)) for row in self.data]

    def is_fixed_interval(self) -> bool:
        return bool(np.all(np.diff(self.t) == self.interval))


# ---------------------------------------------------------------- ingestion

def parse_timestamp(text: str) -> float:
    """Epoch seconds, or ISO-8601; naive ISO times are taken as UTC."""
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text.replace(" ", "T", 1) if "T" not in text else text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


@dataclass
class ParseResult:
    records: list[AisRecord]
    skipped: int


def parse_ais_csv(path, schema: dict[str, str] | None = None, delimiter: str = ",") -> ParseResult:
    """Read delimited AIS text with a header row.

    ``schema`` maps canonical names (``CANONICAL_COLUMNS``) to header names
    in the file when they differ. Rows that fail to parse or violate
    coordinate bounds are skipped and counted.
    """
    schema = {c: c for c in CANONICAL_COLUMNS} | dict(schema or {})
    records: list[AisRecord] = []
    skipped = 0
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        header = [h.strip() for h in (reader.fieldnames or [])]
        reader.fieldnames = header
        missing = [c for c in MANDATORY_COLUMNS if schema[c] not in header]
        if missing:
            raise SchemaError(f"missing mandatory column(s): {', '.join(missing)}")
        has_type = schema["ship_type"] in header
        for row in reader:
            try:
                rec = AisRecord(
                    mmsi=int(row[schema["mmsi"]]),
                    timestamp=parse_timestamp(row[schema["timestamp"]]),
                    position=GeoPoint(float(row[schema["lon"]]), float(row[schema["lat"]])),
                    sog=float(row[schema["sog"]]),
                    cog=float(row[schema["cog"]]),
                    ship_type=(row[schema["ship_type"]] or "").strip() if has_type else "",
                )
            except (ValueError, TypeError, KeyError):
                skipped += 1
                continue
            if not (math.isfinite(rec.timestamp) and math.isfinite(rec.sog) and math.isfinite(rec.cog)):
                skipped += 1
                continue
            records.append(rec)
    return ParseResult(records, skipped)


def group_voyages(records: Iterable[AisRecord], ship_types: Sequence[str] | None = None) -> list[Voyage]:
    """Group by MMSI (sorted), each voyage stably sorted by timestamp."""
    by_mmsi: dict[int, list[AisRecord]] = {}
    for r in records:
        if ship_types is not None and r.ship_type not in ship_types:
            continue
        by_mmsi.setdefault(r.mmsi, []).append(r)
    return [Voyage(m, tuple(sorted(rs, key=lambda r: r.timestamp))) for m, rs in sorted(by_mmsi.items())]


# ---------------------------------------------------------------- cleaning

def valid_mmsi(mmsi: int) -> bool:
    """ITU structural rule: nine digits, leading digit 2-7."""
    return 200_000_000 <= mmsi <= 799_999_999


@dataclass(frozen=True)
class FilterConfig:
    min_sog_knots: float = 0.5
    min_points: int = 300
    mmsi_rule: str = "itu"  # "itu" or "any"


def filter_noise(voyage: Voyage, config: FilterConfig = FilterConfig()) -> Voyage | Rejection:
    if config.mmsi_rule == "itu" and not valid_mmsi(voyage.mmsi):
        return Rejection(voyage.mmsi, "invalid-mmsi", "filter")
    kept: list[AisRecord] = []
    last_t = None
    for r in voyage.records:
        if r.timestamp == last_t:
            continue  # first occurrence wins
        last_t = r.timestamp
        if r.sog < config.min_sog_knots:
            continue
        cog = wrap_360(r.cog)
        kept.append(r if cog == r.cog else AisRecord(r.mmsi, r.timestamp, r.position, r.sog, cog, r.ship_type))
    if len(kept) < config.min_points:
        return Rejection(voyage.mmsi, "too-short", "filter")
    return Voyage(voyage.mmsi, tuple(kept))


def segment_trips(voyage: Voyage, gap_threshold: float = 3600.0) -> list[Voyage]:
    """Split where consecutive reports are more than ``gap_threshold`` seconds apart."""
    if not voyage.records:
        return []
    out: list[Voyage] = []
    start = 0
    recs = voyage.records
    for i in range(1, len(recs)):
        if recs[i].timestamp - recs[i - 1].timestamp > gap_threshold:
            out.append(Voyage(voyage.mmsi, recs[start:i]))
            start = i
    out.append(Voyage(voyage.mmsi, recs[start:]))
    return out


# ---------------------------------------------------------------- resampling

def hermite_tangents(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Three-point finite-difference slopes; one-sided at the ends."""
    h = np.diff(t)
    delta = np.diff(y, axis=0) / h[:, None] if y.ndim == 2 else np.diff(y) / h
    m = np.empty_like(y, dtype=np.float64)
    m[0] = delta[0]
    m[-1] = delta[-1]
    if len(t) > 2:
        hl, hr = h[:-1], h[1:]
        if y.ndim == 2:
            hl, hr = hl[:, None], hr[:, None]
        m[1:-1] = (hr * delta[:-1] + hl * delta[1:]) / (hl + hr)
    return m


def hermite_resample(t: np.ndarray, y: np.ndarray, tq: np.ndarray) -> np.ndarray:
    """Piecewise cubic Hermite through (t, y) evaluated at ``tq``.

    ``y`` may be (n,) or (n, c). Queries landing on a knot return the knot
    value itself, not the polynomial evaluated there.
    """
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    tq = np.asarray(tq, dtype=np.float64)
    m = hermite_tangents(t, y)
    idx = np.clip(np.searchsorted(t, tq, side="right") - 1, 0, len(t) - 2)
    h = t[idx + 1] - t[idx]
    s = (tq - t[idx]) / h
    s2, s3 = s * s, s * s * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    if y.ndim == 2:
        h00, h10, h01, h11, h = (c[:, None] for c in (h00, h10, h01, h11, h))
    out = h00 * y[idx] + h10 * h * m[idx] + h01 * y[idx + 1] + h11 * h * m[idx + 1]
    pos = np.searchsorted(t, tq)
    hit = (pos < len(t)) & (t[np.minimum(pos, len(t) - 1)] == tq)
    out[hit] = y[pos[hit]]
    return out


def resample_kinematics(t, lon, lat, v, psi, tq) -> np.ndarray:
    """Hermite-resample (lon, lat, v, psi) onto ``tq``; angles unwrapped first.

    Returns a segment-shaped array with the physics columns zeroed.
    """
    lon_u = np.unwrap(np.asarray(lon, dtype=np.float64), period=360.0)
    psi_u = np.unwrap(np.asarray(psi, dtype=np.float64), period=360.0)
    vals = hermite_resample(t, np.column_stack([lon_u, lat, v, psi_u]), tq)
    # knots reproduce source values exactly, wrapped or not
    pos = np.searchsorted(t, tq)
    hit = (pos < len(t)) & (np.asarray(t)[np.minimum(pos, len(t) - 1)] == tq)
    out = np.zeros((len(tq), len(FIELDS)))
    out[:, 0] = tq
    out[:, 1] = (vals[:, 0] + 180.0) % 360.0 - 180.0
    out[:, 2] = np.clip(vals[:, 1], -90.0, 90.0)
    out[:, 3] = np.maximum(vals[:, 2], 0.0)
    out[:, 4] = wrap_360(vals[:, 3])
    src = np.column_stack([lon, lat, v, psi])
    out[hit, 1:5] = src[pos[hit]]
    return out


def interpolate_hermite(trip: Voyage, interval: float = SAMPLE_INTERVAL_S) -> TrajectorySegment | Rejection:
    if len(trip.records) < 4:
        return Rejection(trip.mmsi, "too-few-points", "interpolate")
    recs = trip.records
    t = np.array([r.timestamp for r in recs])
    lon = np.array([r.position.lon for r in recs])
    lat = np.array([r.position.lat for r in recs])
    v = np.array([r.sog for r in recs]) * KNOT_MS
    psi = np.array([r.cog for r in recs])
    n = int(math.floor((t[-1] - t[0]) / interval)) + 1
    tq = t[0] + interval * np.arange(n)
    return TrajectorySegment(trip.mmsi, resample_kinematics(t, lon, lat, v, psi, tq), (float(t[0]), float(t[-1])), interval)


def derive_physics(segment: TrajectorySegment) -> TrajectorySegment:
    """Backward-difference acceleration, jerk, course rate, bearing, bearing rate.

    Leading entries without a defined backward difference are 0: a[0],
    j[0:2], psi_dot[0], beta[0] and beta_dot[0:2] (beta_dot[1] would only
    difference against the beta[0] placeholder).
    """
    d = segment.data.copy()
    n = len(d)
    t, x, y, v, psi = d[:, 0], d[:, 1], d[:, 2], d[:, 3], d[:, 4]
    a = np.zeros(n)
    j = np.zeros(n)
    psi_dot = np.zeros(n)
    beta = np.zeros(n)
    beta_dot = np.zeros(n)
    if n > 1:
        dt = np.diff(t)
        a[1:] = np.diff(v) / dt
        j[2:] = np.diff(a[1:]) / dt[1:]
        psi_dot[1:] = angular_difference(psi[:-1], psi[1:]) / dt
        same = (x[1:] == x[:-1]) & (y[1:] == y[:-1])
        beta[1:] = np.where(same, 0.0, bearing_arr(x[:-1], y[:-1], x[1:], y[1:]))
        beta_dot[2:] = angular_difference(beta[1:-1], beta[2:]) / dt[1:]
    d[:, 5], d[:, 6], d[:, 7], d[:, 8], d[:, 9] = a, psi_dot, j, beta, beta_dot
    return TrajectorySegment(segment.mmsi, d, segment.source_span, segment.interval)


# ---------------------------------------------------------------- dataset

@dataclass
class Dataset:
    segments: list[TrajectorySegment]
    interval: float = SAMPLE_INTERVAL_S
    provenance: dict = field(default_factory=dict)

    @property
    def point_counts(self) -> list[int]:
        return [len(s) for s in self.segments]

    @property
    def total_points(self) -> int:
        return sum(self.point_counts)

    def __len__(self):
        return len(self.segments)


@dataclass(frozen=True)
class EmptyDataset:
    reason: str = "empty-dataset"


def build_dataset(segments: Sequence[TrajectorySegment], min_duration: float = 18000.0,
                  provenance: dict | None = None) -> Dataset | EmptyDataset:
    kept = [s for s in segments if len(s) and s.span_s >= min_duration]
    if not kept:
        return EmptyDataset()
    return Dataset(kept, kept[0].interval, dict(provenance or {}))


@dataclass(frozen=True)
class PipelineConfig:
    filter: FilterConfig = FilterConfig()
    gap_threshold: float = 3600.0
    interval: float = SAMPLE_INTERVAL_S
    min_duration: float = 18000.0


@dataclass
class VoyageOutcome:
    segments: list[TrajectorySegment]
    rejections: list[Rejection]


def process_voyage(voyage: Voyage, config: PipelineConfig = PipelineConfig()) -> VoyageOutcome:
    filtered = filter_noise(voyage, config.filter)
    if isinstance(filtered, Rejection):
        return VoyageOutcome([], [filtered])
    segs, rejs = [], []
    for trip in segment_trips(filtered, config.gap_threshold):
        seg = interpolate_hermite(trip, config.interval)
        if isinstance(seg, Rejection):
            rejs.append(seg)
        else:
            segs.append(derive_physics(seg))
    return VoyageOutcome(segs, rejs)


def _process_one(args):
    return process_voyage(*args)


def process_voyages(voyages: Sequence[Voyage], config: PipelineConfig = PipelineConfig(),
                    workers: int = 1) -> list[VoyageOutcome]:
    """Per-voyage pipeline; output order follows input order for any worker count."""
    jobs = [(v, config) for v in voyages]
    if workers <= 1 or len(jobs) <= 1:
        return [_process_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_process_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


# ---------------------------------------------------------------- container
#
# <dir>/manifest.json
# <dir>/segments/<index:05d>_<mmsi>.f64   rows of FIELDS, little-endian float64

def save_dataset(dataset: Dataset, directory, extra: dict | None = None) -> Path:
    directory = Path(directory)
    seg_dir = directory / "segments"
    seg_dir.mkdir(parents=True, exist_ok=True)
    for old in seg_dir.glob("*.f64"):
        old.unlink()
    entries = []
    for i, seg in enumerate(dataset.segments):
        name = f"{i:05d}_{seg.mmsi}.f64"
        raw = seg.data.astype("<f8").tobytes()
        (seg_dir / name).write_bytes(raw)
        entries.append({
            "file": f"segments/{name}", "mmsi": seg.mmsi, "points": len(seg),
            "source_span": list(seg.source_span), "sha256": hashlib.sha256(raw).hexdigest(),
        })
    manifest = {
        "schema_version": DATASET_SCHEMA_VERSION,
        "fields": list(FIELDS),
        "dtype": "<f8",
        "interval_s": dataset.interval,
        "segment_count": len(dataset),
        "total_points": dataset.total_points,
        "segments": entries,
        "provenance": dataset.provenance,
    }
    if extra:
        manifest.update(extra)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return directory


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("schema_version") != DATASET_SCHEMA_VERSION:
        raise SchemaError(f"unsupported dataset schema version {manifest.get('schema_version')}")
    if manifest.get("fields") != list(FIELDS):
        raise SchemaError("dataset field layout does not match")
    segs = []
    for e in manifest["segments"]:
        arr = np.frombuffer((directory / e["file"]).read_bytes(), dtype="<f8").reshape(-1, len(FIELDS))
        segs.append(TrajectorySegment(int(e["mmsi"]), arr.astype(np.float64), tuple(e["source_span"]),
                                      manifest["interval_s"]))
    return Dataset(segs, manifest["interval_s"], manifest.get("provenance", {}))
