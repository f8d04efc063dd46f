"""Dual-stream transformer trajectory forecaster.

Kinematic stream: causal conv stack over (x, y, v, psi) plus a dense
projection of (x, y), summed, plus sinusoidal and learned position
encodings. Physics stream: dense layer over (a, psi_dot, j, beta,
beta_dot), summed in. Then an encoder stack, a temporal resampler to the
horizon length, and a two-layer output head emitting normalized (lon, lat).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .nn.checkpoint import CheckpointValidationError, read_checkpoint, write_checkpoint
from .nn.layers import AvgPool1d, CausalConv1d, Dense, EncoderBlock, TransposedConv1d
from .nn.train import FitResult, TrainConfig, fit
from .pipeline import FEATURES, MAIN_FEATURES, PHYSICS_FEATURES, SAMPLE_INTERVAL_S, TrajectorySegment
from .windowing import ConfigError, FeatureScaler, window_arrays

MAIN_IDX = [FEATURES.index(f) for f in MAIN_FEATURES]
PHYS_IDX = [FEATURES.index(f) for f in PHYSICS_FEATURES]
RESAMPLING_MODES = ("auto", "transposed-conv", "pool", "identity")


@dataclass
class ModelConfig:
    w_in: int = 30
    horizon: int = 90
    d_model: int = 128
    conv_layers: int = 2
    conv_filters: int | None = None  # hidden conv width; None -> d_model
    conv_kernel: int = 3
    encoder_layers: int = 4
    heads: int = 8
    d_ff: int = 256
    dropout: float = 0.1
    activation: str = "relu"
    resampling: str = "auto"
    use_physics: bool = True
    use_main: bool = True
    input_features: str = "all"  # "all" or "main"
    pe_mode: str = "hybrid"  # "hybrid" or "sinusoidal"
    norm_first: bool = True
    init_seed: int = 0

    def validate(self) -> "ModelConfig":
        if self.d_model % 2:
            raise ConfigError(f"d_model must be even, got {self.d_model}")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if min(self.w_in, self.horizon, self.conv_layers, self.conv_kernel, self.heads, self.d_ff) < 1:
            raise ConfigError("sizes must be positive")
        if self.encoder_layers < 0:
            raise ConfigError("encoder_layers must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.resampling not in RESAMPLING_MODES:
            raise ConfigError(f"unknown resampling mode {self.resampling!r}")
        if self.input_features not in ("all", "main"):
            raise ConfigError(f"input_features must be 'all' or 'main', got {self.input_features!r}")
        if self.pe_mode not in ("hybrid", "sinusoidal"):
            raise ConfigError(f"pe_mode must be 'hybrid' or 'sinusoidal', got {self.pe_mode!r}")
        if self.use_physics and self.input_features == "main":
            raise ConfigError("physics stream needs input_features='all'")
        mode = self.resampling_mode
        if mode == "identity" and self.horizon != self.w_in:
            raise ConfigError("identity resampling needs horizon == w_in")
        if mode == "transposed-conv" and self.horizon < self.w_in:
            raise ConfigError("transposed-conv resampling needs horizon >= w_in")
        if mode == "pool" and self.horizon > self.w_in:
            raise ConfigError("pool resampling needs horizon <= w_in")
        return self

    @property
    def resampling_mode(self) -> str:
        if self.resampling != "auto":
            return self.resampling
        if self.horizon > self.w_in:
            return "transposed-conv"
        if self.horizon < self.w_in:
            return "pool"
        return "identity"

    @property
    def upsample_stride(self) -> int:
        return math.ceil(self.horizon / self.w_in)

    @property
    def pool_window(self) -> int:
        return max(1, self.w_in // self.horizon)

    @property
    def position_capacity(self) -> int:
        return max(self.w_in, self.horizon)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def paper_config(horizon: int = 90) -> ModelConfig:
    return ModelConfig(w_in=30, horizon=horizon, d_model=128, conv_layers=2, conv_filters=128, conv_kernel=3,
                       encoder_layers=4, heads=8, d_ff=256, dropout=0.1)


# Ablation presets, keyed by which subgraph they drop.
ABLATIONS = {
    "full": {},
    "no-physics": {"use_physics": False, "input_features": "main"},
    "no-physics-no-main": {"use_physics": False, "use_main": False, "input_features": "all"},
    "no-physics-no-main-main-features": {"use_physics": False, "use_main": False, "input_features": "main"},
    "no-physics-no-main-sinusoidal": {"use_physics": False, "use_main": False, "input_features": "all",
                                      "pe_mode": "sinusoidal"},
}


def ablation_config(base: ModelConfig, variant: str) -> ModelConfig:
    return replace(base, **ABLATIONS[variant]).validate()


def sinusoidal_encoding(T: int, d_model: int) -> np.ndarray:
    if d_model % 2:
        raise ConfigError(f"sinusoidal encoding needs even d_model, got {d_model}")
    pos = np.arange(T, dtype=np.float64)[:, None]
    two_i = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, two_i / d_model)
    out = np.empty((T, d_model))
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle)
    return out


def learned_encoding(T: int, table: torch.Tensor) -> torch.Tensor:
    if T > table.shape[0]:
        raise ConfigError(f"{T} positions requested, learned table holds {table.shape[0]}")
    return table[:T]


class Forecaster(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        cfg = self.config = config.validate()
        gen = torch.Generator().manual_seed(cfg.init_seed)
        d = cfg.d_model
        if cfg.use_main:
            width = cfg.conv_filters or d
            chans = [len(MAIN_IDX)] + [width] * (cfg.conv_layers - 1) + [d]
            self.conv = nn.ModuleList(CausalConv1d(a, b, cfg.conv_kernel, "relu", gen=gen)
                                      for a, b in zip(chans[:-1], chans[1:]))
            self.spatial = Dense(2, d, cfg.activation, gen=gen)
        else:
            self.input_proj = Dense(len(self.input_columns), d, gen=gen)
        if cfg.use_physics:
            self.physics = Dense(len(PHYS_IDX), d, cfg.activation, gen=gen)
        self.pos_table = nn.Parameter(torch.empty(cfg.position_capacity, d).uniform_(-0.05, 0.05, generator=gen))
        self.register_buffer("sinusoid", torch.tensor(sinusoidal_encoding(cfg.w_in, d), dtype=torch.float32),
                             persistent=False)
        self.blocks = nn.ModuleList(EncoderBlock(d, cfg.heads, cfg.d_ff, cfg.dropout, cfg.activation,
                                                 cfg.norm_first, gen=gen) for _ in range(cfg.encoder_layers))
        mode = cfg.resampling_mode
        if mode == "transposed-conv":
            s = cfg.upsample_stride
            self.resample = TransposedConv1d(d, d, s, s, target_length=cfg.horizon, gen=gen)
        elif mode == "pool":
            self.resample = AvgPool1d(cfg.pool_window, target_length=cfg.horizon)
        else:
            self.resample = nn.Identity()
        self.head_hidden = Dense(d, d, cfg.activation, gen=gen)
        self.head_out = Dense(d, 2, gen=gen)

    @property
    def input_columns(self) -> list[int]:
        cfg = self.config
        if cfg.use_physics or cfg.input_features == "main":
            return MAIN_IDX
        return list(range(len(FEATURES)))

    def encode_inputs(self, X: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        if X.dim() != 3 or X.shape[-1] != len(FEATURES):
            raise ValueError(f"expected (B, T, {len(FEATURES)}) input, got {tuple(X.shape)}")
        T = X.shape[1]
        if cfg.use_main:
            h = X[:, :, MAIN_IDX]
            for layer in self.conv:
                h = layer(h)
            h = h + self.spatial(X[:, :, :2])
        else:
            h = self.input_proj(X[:, :, self.input_columns])
        sin = self.sinusoid if T == cfg.w_in else torch.as_tensor(sinusoidal_encoding(T, cfg.d_model), dtype=X.dtype)
        h = h + sin.to(X.dtype)
        if cfg.pe_mode == "hybrid":
            h = h + learned_encoding(T, self.pos_table)
        if cfg.use_physics:
            h = h + self.physics(X[:, :, PHYS_IDX])
        return h

    def forward(self, X: torch.Tensor) -> torch.Tensor:
        h = self.encode_inputs(X)
        for block in self.blocks:
            h = block(h)
        h = self.resample(h)
        return self.head_out(self.head_hidden(h))


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


# ---------------------------------------------------------------- model wrapper

@dataclass(frozen=True)
class InsufficientHistory:
    mmsi: int
    have: int
    need: int
    reason: str = "insufficient-history"


@dataclass
class Prediction:
    mmsi: int
    times: np.ndarray  # (H,)
    lonlat: np.ndarray  # (H, 2)

    @property
    def anchor_t(self) -> float:
        return float(self.times[0] - (self.times[1] - self.times[0])) if len(self.times) > 1 else math.nan


@dataclass
class ForecastModel:
    config: ModelConfig
    net: Forecaster
    scaler: FeatureScaler | None = None
    train_config: TrainConfig | None = None
    history: list = field(default_factory=list)
    interval: float = SAMPLE_INTERVAL_S

    @classmethod
    def create(cls, config: ModelConfig, scaler: FeatureScaler | None = None) -> "ForecastModel":
        return cls(config, Forecaster(config), scaler).eval()

    @property
    def mode(self) -> str:
        return "train" if self.net.training else "eval"

    def eval(self) -> "ForecastModel":
        self.net.eval()
        return self

    def train(self) -> "ForecastModel":
        self.net.train()
        return self

    def forward_normalized(self, X: np.ndarray) -> np.ndarray:
        dtype = next(self.net.parameters()).dtype
        with torch.no_grad():
            return self.net(torch.as_tensor(np.asarray(X), dtype=dtype)).double().numpy()

    def _check_ready(self):
        if self.mode != "eval":
            raise RuntimeError("prediction requires eval mode")
        if self.scaler is None:
            raise RuntimeError("prediction requires a fitted scaler")

    def predict_windows(self, windows: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Raw-feature windows (N, w_in, 9) -> denormalized (N, H, 2) lon/lat."""
        self._check_ready()
        out = []
        for i in range(0, len(windows), batch_size):
            z = self.forward_normalized(self.scaler.transform(windows[i:i + batch_size]))
            out.append(self.scaler.inverse_coords(z))
        return np.concatenate(out) if out else np.zeros((0, self.config.horizon, 2))


def predict_trajectory(model: ForecastModel, window: TrajectorySegment | np.ndarray,
                       mmsi: int | None = None) -> Prediction | InsufficientHistory:
    """Forecast the next H fixes after the last ``w_in`` rows of ``window``.

    ``window`` is a segment or an (n, 10) array in segment column order.
    """
    model._check_ready()
    if isinstance(window, TrajectorySegment):
        mmsi = window.mmsi if mmsi is None else mmsi
        data = window.data
    else:
        data = np.asarray(window, dtype=np.float64)
    w_in = model.config.w_in
    if len(data) < w_in:
        return InsufficientHistory(-1 if mmsi is None else mmsi, len(data), w_in)
    tail = data[-w_in:]
    lonlat = model.predict_windows(tail[None, :, 1:])[0]
    anchor = float(tail[-1, 0])
    times = anchor + model.interval * np.arange(1, model.config.horizon + 1)
    return Prediction(-1 if mmsi is None else mmsi, times, lonlat)


# ---------------------------------------------------------------- training

def build_training_arrays(model_config: ModelConfig, scaler: FeatureScaler, segments: Sequence[TrajectorySegment],
                          stride: int = 1):
    X, Y, _ = window_arrays(segments, model_config.w_in, model_config.horizon, stride, scaler)
    return X.astype(np.float32), Y.astype(np.float32)


def train_model(model: ForecastModel, train_segments, val_segments, train_config: TrainConfig = TrainConfig(),
                stride: int = 1, on_epoch=None) -> FitResult:
    if model.scaler is None:
        raise RuntimeError("attach a fitted scaler before training")
    tr = build_training_arrays(model.config, model.scaler, train_segments, stride)
    va = build_training_arrays(model.config, model.scaler, val_segments, stride)
    if len(tr[0]) == 0 or len(va[0]) == 0:
        raise ValueError("no training or validation windows; segments shorter than w_in + horizon")
    result = fit(model.net, tr, va, train_config, on_epoch)
    model.train_config = train_config
    model.history = result.history
    model.eval()
    return result


# ---------------------------------------------------------------- persistence

CHECKPOINT_KIND = "vesselcast-forecaster"


def _validate_config(cfg: dict):
    if cfg.get("kind") != CHECKPOINT_KIND:
        raise CheckpointValidationError(f"unexpected checkpoint kind {cfg.get('kind')!r}")
    ModelConfig.from_json(cfg["model"]).validate()


def save(model: ForecastModel, path):
    cfg = {
        "kind": CHECKPOINT_KIND,
        "model": model.config.to_json(),
        "scaler": model.scaler.to_json() if model.scaler is not None else None,
        "train": model.train_config.to_json() if model.train_config is not None else None,
        "interval_s": model.interval,
    }
    tensors = {k: v.detach().cpu().float().numpy() for k, v in model.net.state_dict().items()}
    return write_checkpoint(path, cfg, tensors, model.history)


def load(path) -> ForecastModel:
    cfg, tensors, history = read_checkpoint(path, _validate_config)
    mcfg = ModelConfig.from_json(cfg["model"])
    net = Forecaster(mcfg)
    expected = set(net.state_dict())
    if set(tensors) != expected:
        raise CheckpointValidationError(f"tensor names differ from architecture: {sorted(set(tensors) ^ expected)}")
    net.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
    scaler = FeatureScaler.from_json(cfg["scaler"]) if cfg.get("scaler") else None
    tcfg = TrainConfig(**cfg["train"]) if cfg.get("train") else None
    model = ForecastModel(mcfg, net, scaler, tcfg, history, cfg.get("interval_s", SAMPLE_INTERVAL_S))
    return model.eval()
