"""Seeded synthetic AIS fleets for desk-scale runs and tests.

Archetypes:
  constant-velocity  fixed course and speed
  constant-turn      fixed speed, constant rate of turn
  speed-ramp         fixed course, linearly changing speed
  crossing-pair      two great-circle tracks built to meet with a chosen miss distance
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .geo import EARTH_RADIUS_M, GeoPoint, bearing_arr, destination_arr, to_local_plane, wrap_360
from .pipeline import KNOT_MS, AisRecord

ARCHETYPES = ("constant-velocity", "constant-turn", "speed-ramp", "crossing-pair")


@dataclass
class SyntheticFleetSpec:
    vessels: int = 40
    archetypes: tuple[str, ...] = ARCHETYPES
    bbox: tuple[float, float, float, float] = (-66.5, 47.5, -63.5, 49.5)  # lon_min, lat_min, lon_max, lat_max
    duration_s: float = 8 * 3600.0
    report_interval_s: float = 60.0
    report_jitter_s: float = 20.0
    speed_ms: tuple[float, float] = (4.0, 8.0)
    turn_deg_per_min: tuple[float, float] = (1.0, 3.0)
    accel_ms2: tuple[float, float] = (1e-4, 3e-4)
    miss_distance_m: tuple[float, float] = (100.0, 400.0)
    noise_m: float = 0.0
    noise_sog_kn: float = 0.0
    noise_cog_deg: float = 0.0
    start_time: float = 1_700_000_000.0
    first_mmsi: int = 316_000_001
    ship_type: str = "80"
    seed: int = 0

    def __post_init__(self):
        bad = [a for a in self.archetypes if a not in ARCHETYPES]
        if bad:
            raise ValueError(f"unknown archetype(s) {bad}")
        self.archetypes = tuple(self.archetypes)
        self.bbox = tuple(self.bbox)
        self.speed_ms = tuple(self.speed_ms)
        self.turn_deg_per_min = tuple(self.turn_deg_per_min)
        self.accel_ms2 = tuple(self.accel_ms2)
        self.miss_distance_m = tuple(self.miss_distance_m)

    @classmethod
    def from_json(cls, d: dict) -> "SyntheticFleetSpec":
        return cls(**d)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class SyntheticTrack:
    mmsi: int
    archetype: str
    t: np.ndarray  # seconds since start_time
    lon: np.ndarray
    lat: np.ndarray
    sog_ms: np.ndarray
    cog: np.ndarray
    params: dict = field(default_factory=dict)


@dataclass
class SyntheticFleet:
    spec: SyntheticFleetSpec
    tracks: list[SyntheticTrack]
    crossings: list[dict]

    def records(self) -> list[AisRecord]:
        out = []
        for tr in self.tracks:
            for i in range(len(tr.t)):
                out.append(AisRecord(tr.mmsi, self.spec.start_time + float(tr.t[i]),
                                     GeoPoint(float(tr.lon[i]), float(tr.lat[i])),
                                     float(tr.sog_ms[i] / KNOT_MS), float(tr.cog[i]), self.spec.ship_type))
        return out

    def truth(self) -> dict:
        return {
            "spec": self.spec.to_json(),
            "vessels": [{"mmsi": tr.mmsi, "archetype": tr.archetype, **tr.params} for tr in self.tracks],
            "crossings": self.crossings,
        }


def report_times(rng: np.random.Generator, spec: SyntheticFleetSpec) -> np.ndarray:
    n = int(spec.duration_s / max(spec.report_interval_s - spec.report_jitter_s, 1.0)) + 2
    gaps = spec.report_interval_s + rng.uniform(-spec.report_jitter_s, spec.report_jitter_s, n)
    t = np.concatenate([[0.0], np.cumsum(np.round(np.maximum(gaps, 1.0)))])
    return t[t <= spec.duration_s]


def integrate_track(lon0, lat0, course0, speed0, t, turn_rate_deg_s=0.0, accel=0.0, min_speed=1.0, step_s=5.0):
    """Dead-reckon with constant rate of turn and acceleration; samples at ``t`` (s, ascending, from 0)."""
    n_steps = int(math.ceil(t[-1] / step_s)) if len(t) else 0
    grid = np.arange(n_steps + 1) * step_s
    lon = np.empty(n_steps + 1)
    lat = np.empty(n_steps + 1)
    lon[0], lat[0] = lon0, lat0
    course = course0 + turn_rate_deg_s * grid
    speed = np.maximum(speed0 + accel * grid, min_speed)
    for k in range(n_steps):
        c_mid = course0 + turn_rate_deg_s * (grid[k] + step_s / 2)
        v_mid = max(speed0 + accel * (grid[k] + step_s / 2), min_speed)
        lon[k + 1], lat[k + 1] = destination_arr(lon[k], lat[k], c_mid, v_mid * step_s)
    # linear within one 5 s integration step
    lon_u = np.unwrap(lon, period=360.0)
    out_lon = (np.interp(t, grid, lon_u) + 180.0) % 360.0 - 180.0
    out_lat = np.interp(t, grid, lat)
    return out_lon, out_lat, np.interp(t, grid, speed), wrap_360(np.interp(t, grid, course))


def _great_circle_track(lon_p, lat_p, bearing_at_p, speed, t, t_pass):
    """Constant-speed great-circle track passing (lon_p, lat_p) at ``t_pass`` heading ``bearing_at_p``."""
    lon, lat = destination_arr(np.full(len(t), lon_p), np.full(len(t), lat_p), bearing_at_p, speed * (t - t_pass))
    la, ya = destination_arr(np.full(len(t), lon_p), np.full(len(t), lat_p), bearing_at_p, speed * (t - t_pass - 0.5))
    lb, yb = destination_arr(np.full(len(t), lon_p), np.full(len(t), lat_p), bearing_at_p, speed * (t - t_pass + 0.5))
    return lon, lat, np.full(len(t), float(speed)), bearing_arr(la, ya, lb, yb)


def crossing_pair(lon_p, lat_p, t, t_cpa, speed_a, course_a, speed_b, course_b, miss_m):
    """Two tracks whose closest approach is ``miss_m`` meters at ``t_cpa``.

    A passes P at t_cpa; B passes a point offset from P perpendicular to the
    relative velocity, so the relative position at t_cpa is orthogonal to it.
    """
    wa = speed_a * np.array([math.sin(math.radians(course_a)), math.cos(math.radians(course_a))])
    wb = speed_b * np.array([math.sin(math.radians(course_b)), math.cos(math.radians(course_b))])
    w = wb - wa
    perp = math.degrees(math.atan2(w[1], -w[0]))  # bearing of w rotated by 90 degrees
    lon_q, lat_q = destination_arr(lon_p, lat_p, perp, miss_m)
    a = _great_circle_track(lon_p, lat_p, course_a, speed_a, t, t_cpa)
    b = _great_circle_track(float(lon_q), float(lat_q), course_b, speed_b, t, t_cpa)
    return a, b


def _add_noise(rng, spec, lon, lat, sog, cog):
    if spec.noise_m > 0:
        lat = lat + np.degrees(rng.normal(0, spec.noise_m, len(lat)) / EARTH_RADIUS_M)
        lon = lon + np.degrees(rng.normal(0, spec.noise_m, len(lon)) / (EARTH_RADIUS_M * np.cos(np.radians(lat))))
    if spec.noise_sog_kn > 0:
        sog = np.maximum(sog + rng.normal(0, spec.noise_sog_kn * KNOT_MS, len(sog)), 0.0)
    if spec.noise_cog_deg > 0:
        cog = wrap_360(cog + rng.normal(0, spec.noise_cog_deg, len(cog)))
    return lon, lat, sog, cog


def generate_fleet(spec: SyntheticFleetSpec) -> SyntheticFleet:
    rng = np.random.default_rng(spec.seed)
    lon_min, lat_min, lon_max, lat_max = spec.bbox
    tracks: list[SyntheticTrack] = []
    crossings: list[dict] = []
    mmsi = spec.first_mmsi
    i = 0
    while len(tracks) < spec.vessels:
        kind = spec.archetypes[i % len(spec.archetypes)]
        i += 1
        t = report_times(rng, spec)
        lon0 = rng.uniform(lon_min, lon_max)
        lat0 = rng.uniform(lat_min, lat_max)
        course = rng.uniform(0, 360)
        speed = rng.uniform(*spec.speed_ms)
        if kind == "crossing-pair":
            if len(tracks) + 2 > spec.vessels:
                if set(spec.archetypes) == {"crossing-pair"}:
                    break
                continue
            t_cpa = float(rng.uniform(0.45, 0.6) * spec.duration_s)
            speed_b = rng.uniform(*spec.speed_ms)
            course_b = wrap_360(course + rng.uniform(60, 150) * rng.choice([-1, 1]))
            miss = float(rng.uniform(*spec.miss_distance_m))
            t_b = report_times(rng, spec)
            tb = np.union1d(t, t_b)  # shared sampling keeps the construction simple
            a, b = crossing_pair(lon0, lat0, tb, t_cpa, speed, course, speed_b, course_b, miss)
            a_sel = np.isin(tb, t)
            b_sel = np.isin(tb, t_b)
            params = {"t_cpa": spec.start_time + t_cpa, "miss_distance_m": miss}
            ids = (mmsi, mmsi + 1)
            for vid, trk, sel, v, c in ((ids[0], a, a_sel, speed, course), (ids[1], b, b_sel, speed_b, course_b)):
                lon, lat, sog, cog = _add_noise(rng, spec, *(arr[sel] for arr in trk))
                tracks.append(SyntheticTrack(vid, kind, tb[sel], lon, lat, sog, cog,
                                             {**params, "speed_ms": float(v), "course_at_cpa": float(c),
                                              "partner": ids[1] if vid == ids[0] else ids[0]}))
            crossings.append({"pair": list(ids), "dcpa_m": miss, "t_cpa": spec.start_time + t_cpa,
                              "lon": float(lon0), "lat": float(lat0)})
            mmsi += 2
            continue
        turn = accel = 0.0
        if kind == "constant-turn":
            turn = rng.uniform(*spec.turn_deg_per_min) / 60.0 * rng.choice([-1, 1])
        elif kind == "speed-ramp":
            accel = rng.uniform(*spec.accel_ms2) * rng.choice([-1, 1])
            if accel < 0:
                speed = max(speed, -accel * spec.duration_s + 2.0)
        lon, lat, sog, cog = integrate_track(lon0, lat0, course, speed, t, turn, accel)
        lon, lat, sog, cog = _add_noise(rng, spec, lon, lat, sog, cog)
        tracks.append(SyntheticTrack(mmsi, kind, t, lon, lat, sog, cog,
                                     {"speed_ms": float(speed), "course0": float(course),
                                      "turn_deg_s": float(turn), "accel_ms2": float(accel)}))
        mmsi += 1
    return SyntheticFleet(spec, tracks, crossings)


def write_csv(fleet: SyntheticFleet, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mmsi", "timestamp", "lat", "lon", "sog", "cog", "ship_type"])
        for tr in fleet.tracks:
            for k in range(len(tr.t)):
                w.writerow([tr.mmsi, f"{fleet.spec.start_time + tr.t[k]:.0f}", f"{tr.lat[k]:.8f}",
                            f"{tr.lon[k]:.8f}", f"{tr.sog_ms[k] / KNOT_MS:.4f}", f"{tr.cog[k]:.4f}",
                            fleet.spec.ship_type])
    return path


def write_truth(fleet: SyntheticFleet, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(fleet.truth(), indent=2, sort_keys=True))
    return path


def analytic_crossing_check(fleet: SyntheticFleet, crossing: dict) -> float:
    """Separation (m) of the constructed pair at the designed CPA time, on the tangent plane at P."""
    a_id, b_id = crossing["pair"]
    by = {tr.mmsi: tr for tr in fleet.tracks}
    t_rel = crossing["t_cpa"] - fleet.spec.start_time
    pts = []
    for vid in (a_id, b_id):
        tr = by[vid]
        pts.append((np.interp(t_rel, tr.t, tr.lon), np.interp(t_rel, tr.t, tr.lat)))
    e, n = to_local_plane(np.array([pts[0][0], pts[1][0]]), np.array([pts[0][1], pts[1][1]]),
                          crossing["lon"], crossing["lat"])
    return float(math.hypot(e[1] - e[0], n[1] - n[0]))
