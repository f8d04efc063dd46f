"""Displacement errors in meters over (lon, lat) trajectories.

Predictions are (K, H, 2) sample stacks or a single (H, 2) track (K = 1);
ground truth is (H, 2). Aggregation over samples is the mean, never the
best-of-K minimum.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geo import EARTH, EarthModel, haversine_arr
from .nn.layers import ShapeError


def _samples(pred) -> np.ndarray:
    p = np.asarray(pred, dtype=np.float64)
    if p.ndim == 2:
        p = p[None]
    if p.ndim != 3 or p.shape[-1] != 2:
        raise ShapeError(f"prediction must be (H, 2) or (K, H, 2), got {p.shape}")
    return p


def displacement(pred, truth, earth: EarthModel = EARTH) -> np.ndarray:
    """Per-sample, per-step haversine error, shape (K, H)."""
    p = _samples(pred)
    t = np.asarray(truth, dtype=np.float64)
    if t.shape != p.shape[1:]:
        raise ShapeError(f"prediction steps {p.shape[1:]} do not match truth {t.shape}")
    return haversine_arr(p[..., 0], p[..., 1], t[None, :, 0], t[None, :, 1], earth.radius_m)


def ade(pred, truth, earth: EarthModel = EARTH) -> float:
    return float(displacement(pred, truth, earth).mean(axis=1).mean())


def fde(pred, truth, earth: EarthModel = EARTH) -> float:
    return float(displacement(pred, truth, earth)[:, -1].mean())


def _joint(preds: Sequence, truths: Sequence, earth: EarthModel) -> np.ndarray:
    if len(preds) != len(truths) or not preds:
        raise ShapeError("need one truth per predicted vessel and at least one vessel")
    ds = [displacement(p, t, earth) for p, t in zip(preds, truths)]
    shapes = {d.shape for d in ds}
    if len(shapes) != 1:
        raise ShapeError(f"vessels disagree on (K, H): {sorted(shapes)}")
    return np.stack(ds)  # (N, K, H)


def jade(preds: Sequence, truths: Sequence, earth: EarthModel = EARTH) -> float:
    d = _joint(preds, truths, earth)
    # (1/HN) sum_v sum_t, arranged so N = 1 reduces bit-for-bit to ade()
    return float((d.mean(axis=2).sum(axis=0) / d.shape[0]).mean())


def jfde(preds: Sequence, truths: Sequence, earth: EarthModel = EARTH) -> float:
    d = _joint(preds, truths, earth)
    return float((d[:, :, -1].sum(axis=0) / d.shape[0]).mean())


@dataclass
class EvalReport:
    per_vessel: dict[int, dict[str, float]]
    jade_m: float
    jfde_m: float
    n_vessels: int
    horizon: int
    samples: int = 1
    scene: str = ""
    extra: dict = field(default_factory=dict)

    CSV_FIELDS = ("scene", "n_vessels", "horizon", "samples", "jade_m", "jfde_m", "mean_ade_m", "mean_fde_m")

    def to_json(self) -> dict:
        d = asdict(self)
        d["per_vessel"] = {str(k): v for k, v in self.per_vessel.items()}
        return d

    def csv_row(self) -> dict:
        ades = [v["ade_m"] for v in self.per_vessel.values()]
        fdes = [v["fde_m"] for v in self.per_vessel.values()]
        return {"scene": self.scene, "n_vessels": self.n_vessels, "horizon": self.horizon, "samples": self.samples,
                "jade_m": self.jade_m, "jfde_m": self.jfde_m,
                "mean_ade_m": float(np.mean(ades)), "mean_fde_m": float(np.mean(fdes))}


def evaluate_scene(preds: Mapping[int, np.ndarray], truths: Mapping[int, np.ndarray], scene: str = "",
                   earth: EarthModel = EARTH) -> EvalReport:
    ids = sorted(preds)
    if set(ids) != set(truths):
        raise ShapeError("prediction and truth vessel sets differ")
    p = [preds[i] for i in ids]
    t = [truths[i] for i in ids]
    per = {i: {"ade_m": ade(preds[i], truths[i], earth), "fde_m": fde(preds[i], truths[i], earth)} for i in ids}
    K, H = _samples(p[0]).shape[:2]
    return EvalReport(per, jade(p, t, earth), jfde(p, t, earth), len(ids), H, K, scene)


def reports_to_csv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=EvalReport.CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


def reports_to_json(reports: Sequence[EvalReport]) -> str:
    return json.dumps([r.to_json() for r in reports], indent=2, sort_keys=True)
