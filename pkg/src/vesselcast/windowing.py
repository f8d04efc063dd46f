"""Min-max scaling, whole-trajectory splits and sliding-window extraction."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .pipeline import FEATURES, TrajectorySegment


class ConfigError(ValueError):
    pass


@dataclass
class FeatureScaler:
    minimum: np.ndarray
    maximum: np.ndarray
    feature_names: tuple[str, ...] = FEATURES

    def __post_init__(self):
        self.minimum = np.asarray(self.minimum, dtype=np.float64)
        self.maximum = np.asarray(self.maximum, dtype=np.float64)
        if np.any(self.minimum > self.maximum):
            raise ConfigError("scaler minimum exceeds maximum")

    @property
    def span(self) -> np.ndarray:
        return self.maximum - self.minimum

    def transform(self, x: np.ndarray, cols: slice | Sequence[int] = slice(None)) -> np.ndarray:
        lo, span = self.minimum[cols], self.span[cols]
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (np.asarray(x, dtype=np.float64) - lo) / safe, 0.0)

    def inverse(self, z: np.ndarray, cols: slice | Sequence[int] = slice(None)) -> np.ndarray:
        lo, span = self.minimum[cols], self.span[cols]
        return np.asarray(z, dtype=np.float64) * span + lo

    # (x, y) targets share the input coordinate statistics
    def transform_coords(self, xy: np.ndarray) -> np.ndarray:
        return self.transform(xy, slice(0, 2))

    def inverse_coords(self, z: np.ndarray) -> np.ndarray:
        return self.inverse(z, slice(0, 2))

    def to_json(self) -> dict:
        return {"features": list(self.feature_names), "min": self.minimum.tolist(), "max": self.maximum.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "FeatureScaler":
        return cls(np.array(d["min"]), np.array(d["max"]), tuple(d["features"]))


def fit_scaler(train: Sequence[TrajectorySegment]) -> FeatureScaler:
    if not train:
        raise ValueError("cannot fit a scaler on an empty training set")
    lo = np.full(len(FEATURES), np.inf)
    hi = np.full(len(FEATURES), -np.inf)
    for seg in train:
        if len(seg):
            lo = np.minimum(lo, seg.features.min(axis=0))
            hi = np.maximum(hi, seg.features.max(axis=0))
    if not np.all(np.isfinite(lo)):
        raise ValueError("training segments hold no points")
    return FeatureScaler(lo, hi)


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[int, ...]
    validation: tuple[int, ...]
    test: tuple[int, ...]
    seed: int


def _split_counts(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    n_test = int(round(n * fractions[2]))
    n_val = int(round(n * fractions[1]))
    if fractions[2] > 0:
        n_test = max(n_test, 1)
    if fractions[1] > 0:
        n_val = max(n_val, 1)
    return n - n_val - n_test, n_val, n_test


def split_dataset(segments: Sequence[TrajectorySegment], fractions=(0.72, 0.18, 0.10), seed: int = 0,
                  mode: str = "random", test_bbox: tuple[float, float, float, float] | None = None) -> DatasetSplit:
    """Assign whole segments (by index) to train/validation/test.

    ``mode="spatial"`` sends segments whose mean position lies inside
    ``test_bbox = (lon_min, lat_min, lon_max, lat_max)`` to test and splits
    the rest randomly by the train:validation ratio.
    """
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ConfigError(f"split fractions must be three non-negatives summing to 1, got {fractions}")
    n = len(segments)
    if n < 3:
        raise ConfigError("need at least 3 segments to split")
    rng = np.random.default_rng(seed)
    if mode == "random":
        order = rng.permutation(n)
        n_train, n_val, _ = _split_counts(n, fractions)
        parts = order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]
    elif mode == "spatial":
        if test_bbox is None:
            raise ConfigError("spatial split needs test_bbox")
        lon0, lat0, lon1, lat1 = test_bbox
        inside = np.array([lon0 <= s.column("x").mean() <= lon1 and lat0 <= s.column("y").mean() <= lat1
                           for s in segments])
        rest = rng.permutation(np.flatnonzero(~inside))
        val_share = fractions[1] / (fractions[0] + fractions[1]) if fractions[0] + fractions[1] > 0 else 0.0
        n_val = int(round(len(rest) * val_share))
        parts = rest[n_val:], rest[:n_val], np.flatnonzero(inside)
    else:
        raise ConfigError(f"unknown split mode {mode!r}")
    return DatasetSplit(*(tuple(sorted(int(i) for i in p)) for p in parts), seed=seed)


@dataclass(frozen=True)
class WindowPair:
    X: np.ndarray  # (w_in, 9) normalized
    Y: np.ndarray  # (w_out, 2) normalized
    anchor_t: float  # timestamp of the last input step
    mmsi: int


def window_count(n: int, w_in: int, w_out: int, stride: int = 1) -> int:
    if n < w_in + w_out:
        return 0
    return (n - w_in - w_out) // stride + 1


def window_starts(n: int, w_in: int, w_out: int, stride: int = 1) -> np.ndarray:
    return np.arange(window_count(n, w_in, w_out, stride)) * stride


def slide_windows(segment: TrajectorySegment, w_in: int, w_out: int, stride: int = 1,
                  scaler: FeatureScaler | None = None) -> list[WindowPair]:
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    feats = segment.features if scaler is None else scaler.transform(segment.features)
    out = []
    for s in window_starts(len(segment), w_in, w_out, stride):
        out.append(WindowPair(feats[s:s + w_in], feats[s + w_in:s + w_in + w_out, :2],
                              float(segment.t[s + w_in - 1]), segment.mmsi))
    return out


def window_arrays(segments: Sequence[TrajectorySegment], w_in: int, w_out: int, stride: int = 1,
                  scaler: FeatureScaler | None = None):
    """Stacked windows: X (N, w_in, 9), Y (N, w_out, 2), and (segment index, start) per row."""
    xs, ys, index = [], [], []
    for k, seg in enumerate(segments):
        starts = window_starts(len(seg), w_in, w_out, stride)
        if not len(starts):
            continue
        feats = seg.features if scaler is None else scaler.transform(seg.features)
        view = np.lib.stride_tricks.sliding_window_view(feats, w_in + w_out, axis=0)  # (m, 9, w)
        sel = view[starts].transpose(0, 2, 1)
        xs.append(sel[:, :w_in])
        ys.append(sel[:, w_in:, :2])
        index.extend((k, int(s)) for s in starts)
    if not xs:
        return np.zeros((0, w_in, len(FEATURES))), np.zeros((0, w_out, 2)), []
    return np.concatenate(xs), np.concatenate(ys), index


def eval_stride(w_out: int) -> int:
    """Non-overlapping horizons for evaluation windows."""
    return max(1, int(w_out))


def steps_for(hours: float, interval: float = 120.0) -> int:
    return int(math.floor(hours * 3600.0 / interval + 1e-9))
