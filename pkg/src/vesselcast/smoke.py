"""Desk-scale learning check: train a toy forecaster on a synthetic fleet and
compare it with the two dead-reckoning baselines on held-out curved tracks."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

from .baselines import constant_position, constant_velocity
from .forecaster import ForecastModel, ModelConfig, train_model
from .geo import haversine_arr
from .nn.train import TrainConfig
from .pipeline import build_dataset, group_voyages, process_voyages
from .synth import SyntheticFleetSpec, generate_fleet
from .windowing import fit_scaler, split_dataset, window_arrays


@dataclass
class LearningSmokeConfig:
    train_fleet: SyntheticFleetSpec = field(default_factory=lambda: SyntheticFleetSpec(
        vessels=64, duration_s=10 * 3600.0, noise_m=5.0, seed=1))
    test_fleet: SyntheticFleetSpec = field(default_factory=lambda: SyntheticFleetSpec(
        vessels=12, archetypes=("constant-turn",), duration_s=10 * 3600.0, noise_m=5.0, seed=99))
    model: ModelConfig = field(default_factory=lambda: ModelConfig(
        w_in=30, horizon=30, d_model=32, encoder_layers=1, heads=2, d_ff=64))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(max_epochs=60, seed=0, stop_patience=10))
    split_seed: int = 0
    stride: int = 1


@dataclass
class LearningSmokeResult:
    trajectories: int
    test_windows: int
    epochs: int
    seconds: float
    ade_model: float
    ade_constant_position: float
    ade_constant_velocity: float

    @property
    def passed(self) -> bool:
        return self.ade_model < self.ade_constant_position and self.ade_model < self.ade_constant_velocity


def _segments(spec: SyntheticFleetSpec):
    outs = process_voyages(group_voyages(generate_fleet(spec).records()))
    return build_dataset([s for o in outs for s in o.segments]).segments


def run_learning_smoke(cfg: LearningSmokeConfig = LearningSmokeConfig()) -> LearningSmokeResult:
    start = time.perf_counter()
    segs = _segments(cfg.train_fleet)
    split = split_dataset(segs, seed=cfg.split_seed)
    train = [segs[i] for i in split.train]
    val = [segs[i] for i in split.validation]
    model = ForecastModel.create(cfg.model, fit_scaler(train))
    res = train_model(model, train, val, cfg.train, stride=cfg.stride)

    w_in, H = cfg.model.w_in, cfg.model.horizon
    X, Y, _ = window_arrays(_segments(cfg.test_fleet), w_in, H, H)

    def score(p):
        return float(haversine_arr(p[..., 0], p[..., 1], Y[..., 0], Y[..., 1]).mean())

    return LearningSmokeResult(
        trajectories=len(segs),
        test_windows=len(X),
        epochs=len(res.history),
        seconds=time.perf_counter() - start,
        ade_model=score(model.predict_windows(X)),
        ade_constant_position=score(constant_position(X, H)),
        ade_constant_velocity=score(constant_velocity(X, H)),
    )
