"""Neighbour scenes around a target vessel and their joint prediction."""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .forecaster import ForecastModel, InsufficientHistory, Prediction, predict_trajectory
from .geo import EARTH, EarthModel, haversine_arr, path_length_arr
from .pipeline import SAMPLE_INTERVAL_S, TrajectorySegment, derive_physics, resample_kinematics


BUFFER_LOOKBACK_S = 3600.0


class TargetNotFound(LookupError):
    pass


@dataclass
class FleetSnapshot:
    """Histories on a common grid ending at ``anchor_t`` (and optional ground-truth futures)."""
    anchor_t: float
    histories: dict[int, TrajectorySegment]
    futures: dict[int, np.ndarray] = field(default_factory=dict)  # (n, 2) lon/lat after anchor_t
    interval: float = SAMPLE_INTERVAL_S

    def position(self, mmsi: int) -> np.ndarray:
        return self.histories[mmsi].data[-1, 1:3]


def align_history(segment: TrajectorySegment, anchor_t: float, interval: float = SAMPLE_INTERVAL_S,
                  max_steps: int | None = None) -> TrajectorySegment | None:
    """Resample a segment onto anchor_t - k*interval; None if it does not cover anchor_t."""
    t = segment.t
    if len(t) < 2 or not (t[0] <= anchor_t <= t[-1]):
        return None
    n = int(math.floor((anchor_t - t[0]) / interval + 1e-9)) + 1
    if max_steps is not None:
        n = min(n, max_steps)
    grid = anchor_t - interval * np.arange(n - 1, -1, -1)
    if np.array_equal(grid, t[np.searchsorted(t, grid[0]):][:n]):
        data = segment.data[np.searchsorted(t, grid[0]):][:n]
        return TrajectorySegment(segment.mmsi, data, segment.source_span, interval)
    d = segment.data
    rows = resample_kinematics(t, d[:, 1], d[:, 2], d[:, 3], d[:, 4], grid)
    return derive_physics(TrajectorySegment(segment.mmsi, rows, segment.source_span, interval))


def future_truth(segment: TrajectorySegment, anchor_t: float, steps: int,
                 interval: float = SAMPLE_INTERVAL_S) -> np.ndarray | None:
    t = segment.t
    grid = anchor_t + interval * np.arange(1, steps + 1)
    if len(t) < 2 or grid[-1] > t[-1] or anchor_t < t[0]:
        return None
    d = segment.data
    rows = resample_kinematics(t, d[:, 1], d[:, 2], d[:, 3], d[:, 4], grid)
    return rows[:, 1:3]


def snapshot_at(segments: Sequence[TrajectorySegment], anchor_t: float, interval: float = SAMPLE_INTERVAL_S,
                max_steps: int | None = None, future_steps: int = 0) -> FleetSnapshot:
    """Collect every vessel underway at ``anchor_t``; first covering segment per MMSI wins."""
    hist: dict[int, TrajectorySegment] = {}
    fut: dict[int, np.ndarray] = {}
    for seg in segments:
        if seg.mmsi in hist:
            continue
        h = align_history(seg, anchor_t, interval, max_steps)
        if h is None:
            continue
        hist[seg.mmsi] = h
        if future_steps:
            f = future_truth(seg, anchor_t, future_steps, interval)
            if f is not None:
                fut[seg.mmsi] = f
    return FleetSnapshot(anchor_t, dict(sorted(hist.items())), fut, interval)


def buffer_radius(history: TrajectorySegment, h: float, earth: EarthModel = EARTH) -> float | InsufficientHistory:
    """Twice the distance travelled over the trailing ``h`` seconds of ``history``."""
    t = history.t
    need = int(round(h / history.interval)) + 1
    if len(t) == 0 or t[-1] - t[0] < h - 1e-9:
        return InsufficientHistory(history.mmsi, len(t), need)
    sel = t >= t[-1] - h - 1e-9
    return 2.0 * path_length_arr(history.column("x")[sel], history.column("y")[sel], earth.radius_m)


@dataclass
class NeighborSet:
    target: int
    radius_m: float
    neighbors: list[int]
    excluded: list[int]  # in range but lacking w_in history
    distances: dict[int, float]


def find_neighbors(snapshot: FleetSnapshot, target: int, radius_m: float, w_in: int = 30,
                   earth: EarthModel = EARTH) -> NeighborSet:
    if target not in snapshot.histories:
        raise TargetNotFound(f"vessel {target} is not in the snapshot at t={snapshot.anchor_t}")
    ids = [m for m in snapshot.histories if m != target]
    if not ids:
        return NeighborSet(target, radius_m, [], [], {})
    pos = np.array([snapshot.position(m) for m in ids])
    tx, ty = snapshot.position(target)
    dist = haversine_arr(tx, ty, pos[:, 0], pos[:, 1], earth.radius_m)
    inside, excluded, dists = [], [], {}
    for m, d in zip(ids, dist):
        if d <= radius_m:
            dists[m] = float(d)
            (inside if len(snapshot.histories[m]) >= w_in else excluded).append(m)
    return NeighborSet(target, radius_m, sorted(inside), sorted(excluded), dists)


@dataclass
class Scene:
    anchor_t: float
    target: int
    neighbors: list[int]
    buffer_radius_m: float
    windows: dict[int, np.ndarray]  # (w_in, 10) rows in segment column order
    excluded: list[int] = field(default_factory=list)
    predictions: dict[int, Prediction] = field(default_factory=dict)
    errors: dict[int, str] = field(default_factory=dict)
    truths: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def vessels(self) -> list[int]:
        return [self.target] + list(self.neighbors)

    @property
    def partial(self) -> bool:
        return bool(self.errors)


def build_scene(snapshot: FleetSnapshot, target: int, w_in: int = 30, h: float | None = None,
                horizon_steps: int = 90, earth: EarthModel = EARTH) -> Scene | InsufficientHistory:
    """Target plus neighbours inside the buffer radius; look-back ``h`` defaults to one hour."""
    if target not in snapshot.histories:
        raise TargetNotFound(f"vessel {target} is not in the snapshot at t={snapshot.anchor_t}")
    hist = snapshot.histories[target]
    h = BUFFER_LOOKBACK_S if h is None else h
    if len(hist) < w_in:
        return InsufficientHistory(target, len(hist), w_in)
    radius = buffer_radius(hist, h, earth)
    if isinstance(radius, InsufficientHistory):
        return radius
    nbs = find_neighbors(snapshot, target, radius, w_in, earth)
    windows = {m: snapshot.histories[m].data[-w_in:].copy() for m in [target] + nbs.neighbors}
    truths = {m: snapshot.futures[m] for m in windows if m in snapshot.futures}
    return Scene(snapshot.anchor_t, target, nbs.neighbors, radius, windows, nbs.excluded, truths=truths)


def predict_scene(scene: Scene, model: ForecastModel, workers: int = 1) -> Scene:
    """Predict every scene vessel independently; identical output for any ``workers``."""
    ids = sorted(scene.windows)

    def one(m):
        try:
            return m, predict_trajectory(model, scene.windows[m], mmsi=m)
        except Exception as exc:  # noqa: BLE001  - reported per vessel
            return m, exc

    if workers <= 1:
        results = [one(m) for m in ids]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, ids))
    preds, errors = {}, {}
    for m, r in results:
        if isinstance(r, Prediction):
            preds[m] = r
        elif isinstance(r, InsufficientHistory):
            errors[m] = r.reason
        else:
            errors[m] = f"{type(r).__name__}: {r}"
    return replace(scene, predictions=preds, errors=errors)


def scene_to_geojson(scene: Scene, histories: Mapping[int, TrajectorySegment] | None = None) -> dict:
    """FeatureCollection: one LineString per observed window (or full history) and per prediction."""
    feats = []
    for m in scene.vessels:
        role = "target" if m == scene.target else "neighbor"
        obs = histories[m].data if histories and m in histories else scene.windows[m]
        feats.append({"type": "Feature", "properties": {"mmsi": m, "role": role, "kind": "history"},
                      "geometry": {"type": "LineString", "coordinates": obs[:, 1:3].tolist()}})
        if m in scene.predictions:
            p = scene.predictions[m]
            coords = np.vstack([scene.windows[m][-1, 1:3], p.lonlat]).tolist()
            feats.append({"type": "Feature",
                          "properties": {"mmsi": m, "role": role, "kind": "prediction",
                                         "t_start": scene.anchor_t, "t_end": float(p.times[-1])},
                          "geometry": {"type": "LineString", "coordinates": coords}})
    tx, ty = scene.windows[scene.target][-1, 1:3]
    feats.append({"type": "Feature",
                  "properties": {"mmsi": scene.target, "role": "target", "kind": "buffer-center",
                                 "buffer_radius_m": scene.buffer_radius_m, "anchor_t": scene.anchor_t},
                  "geometry": {"type": "Point", "coordinates": [float(tx), float(ty)]}})
    return {"type": "FeatureCollection", "features": feats}


def dumps_geojson(scene: Scene, **kw) -> str:
    return json.dumps(scene_to_geojson(scene, **kw), sort_keys=True)
