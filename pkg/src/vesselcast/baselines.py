"""Reference predictors that need no training."""
from __future__ import annotations

import numpy as np

from .geo import destination_arr
from .pipeline import FEATURES, SAMPLE_INTERVAL_S

_X, _Y, _V, _PSI = (FEATURES.index(f) for f in ("x", "y", "v", "psi"))


def constant_position(windows: np.ndarray, horizon: int) -> np.ndarray:
    """Hold the last observed fix: (N, w_in, 9) -> (N, H, 2)."""
    last = windows[:, -1, [_X, _Y]]
    return np.repeat(last[:, None, :], horizon, axis=1)


def constant_velocity(windows: np.ndarray, horizon: int, interval: float = SAMPLE_INTERVAL_S) -> np.ndarray:
    """Dead reckoning along the great circle set by the last SOG and COG."""
    last = windows[:, -1]
    dist = last[:, _V][:, None] * interval * np.arange(1, horizon + 1)[None, :]
    lon, lat = destination_arr(np.broadcast_to(last[:, _X][:, None], dist.shape),
                               np.broadcast_to(last[:, _Y][:, None], dist.shape),
                               np.broadcast_to(last[:, _PSI][:, None], dist.shape), dist)
    return np.stack([lon, lat], axis=-1)


BASELINES = {"constant-position": constant_position, "constant-velocity": constant_velocity}
