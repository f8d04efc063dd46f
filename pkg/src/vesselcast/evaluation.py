"""Horizon tables (per-window ADE/FDE) and scene-level joint metrics."""
from __future__ import annotations

import csv
import io
import math
from typing import Callable, Mapping, Sequence

import numpy as np

from .baselines import constant_position, constant_velocity
from .forecaster import ForecastModel
from .geo import haversine_arr
from .metrics import EvalReport, evaluate_scene
from .pipeline import SAMPLE_INTERVAL_S, TrajectorySegment
from .scene import BUFFER_LOOKBACK_S, build_scene, predict_scene, snapshot_at
from .windowing import ConfigError, window_arrays

Predictor = Callable[[np.ndarray, int], np.ndarray]


def model_predictor(model: ForecastModel) -> Predictor:
    def run(X, horizon):
        return model.predict_windows(X)[:, :horizon]
    return run


def horizon_label(steps: int, interval: float = SAMPLE_INTERVAL_S) -> str:
    seconds = steps * interval
    if seconds % 3600 == 0:
        return f"{seconds / 3600:g} hr"
    return f"{seconds / 60:g} min"


def horizon_table(predictors: Mapping[str, Predictor], segments: Sequence[TrajectorySegment], w_in: int,
                  horizons: Sequence[int] = (30, 60, 90), max_horizon: int | None = None,
                  interval: float = SAMPLE_INTERVAL_S) -> dict:
    """Mean ADE/FDE (m) per predictor and horizon over non-overlapping test windows.

    Windows are cut once at the longest horizon so every column scores the
    same anchors. Returns ``{"horizons": [...], "windows": n, "rows": {name: {label: {"ade_m", "fde_m"}}}}``.
    """
    horizons = sorted(int(h) for h in horizons)
    if max_horizon is not None and horizons[-1] > max_horizon:
        raise ConfigError(f"horizon {horizons[-1]} exceeds the model horizon {max_horizon}")
    h_max = horizons[-1]
    X, Y, _ = window_arrays(segments, w_in, h_max, stride=h_max)
    rows: dict[str, dict] = {}
    for name, fn in predictors.items():
        pred = fn(X, h_max) if len(X) else np.zeros((0, h_max, 2))
        err = haversine_arr(pred[..., 0], pred[..., 1], Y[..., 0], Y[..., 1]) if len(X) else np.zeros((0, h_max))
        rows[name] = {horizon_label(h, interval): {"ade_m": float(err[:, :h].mean()) if len(X) else float("nan"),
                                                   "fde_m": float(err[:, h - 1].mean()) if len(X) else float("nan")}
                      for h in horizons}
    return {"horizons": horizons, "labels": [horizon_label(h, interval) for h in horizons], "windows": int(len(X)),
            "rows": rows}


def table_to_csv(table: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model"] + [f"{lab} {m}" for lab in table["labels"] for m in ("ADE", "FDE")])
    for name, cols in table["rows"].items():
        w.writerow([name] + [f"{cols[lab][k]:.1f}" for lab in table["labels"] for k in ("ade_m", "fde_m")])
    return buf.getvalue()


def default_predictors(model: ForecastModel | None) -> dict[str, Predictor]:
    preds: dict[str, Predictor] = {}
    if model is not None:
        preds["model"] = model_predictor(model)
    preds["constant-velocity"] = lambda X, h: constant_velocity(X, h)
    preds["constant-position"] = lambda X, h: constant_position(X, h)
    return preds


def scene_anchors(segments: Sequence[TrajectorySegment], w_in: int, horizon: int,
                  lookback_s: float = BUFFER_LOOKBACK_S) -> list[tuple[int, float]]:
    """(target mmsi, anchor_t) every ``horizon`` steps, starting once both the input window
    and the buffer look-back are covered and stopping while a full future remains."""
    out = []
    for seg in segments:
        first = max(w_in - 1, int(math.ceil(lookback_s / seg.interval - 1e-9)))
        for i in range(first, len(seg) - horizon, horizon):
            out.append((seg.mmsi, float(seg.t[i])))
    return out


def evaluate_scenes(model: ForecastModel, targets: Sequence[TrajectorySegment],
                    fleet: Sequence[TrajectorySegment], max_scenes: int | None = None,
                    workers: int = 1) -> list[EvalReport]:
    """Joint metrics for scenes anchored on ``targets`` with neighbours drawn from ``fleet``.

    Only vessels with a complete ground-truth future are scored.
    """
    cfg = model.config
    reports = []
    anchors = scene_anchors(targets, cfg.w_in, cfg.horizon)
    if max_scenes is not None:
        anchors = anchors[:max_scenes]
    for target, anchor in anchors:
        snap = snapshot_at(fleet, anchor, model.interval, future_steps=cfg.horizon)
        scene = build_scene(snap, target, cfg.w_in, horizon_steps=cfg.horizon)
        if not hasattr(scene, "windows"):
            continue
        scored = [m for m in scene.vessels if m in scene.truths]
        if target not in scored:
            continue
        scene.windows = {m: scene.windows[m] for m in scored}
        scene.neighbors = [m for m in scene.neighbors if m in scored]
        scene = predict_scene(scene, model, workers)
        preds = {m: p.lonlat for m, p in scene.predictions.items()}
        truths = {m: scene.truths[m] for m in preds}
        if not preds:
            continue
        reports.append(evaluate_scene(preds, truths, scene=f"{target}@{anchor:.0f}"))
    return reports
