"""Gradients, Adam, and the epoch loop with plateau / early-stop callbacks."""
from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np
import torch
from torch import nn

log = logging.getLogger(__name__)


class StateError(RuntimeError):
    pass


class NonFiniteGradientError(FloatingPointError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = history or []


def backward(loss: torch.Tensor, params: Iterable[tuple[str, nn.Parameter]]) -> dict[str, torch.Tensor]:
    """Populate ``.grad`` on every trainable parameter; unreachable ones get zeros.

    A given loss tensor may be back-propagated once only.
    """
    if loss.numel() != 1:
        raise ValueError("loss must be a scalar")
    if getattr(loss, "_vc_consumed", False):
        raise StateError("backward called twice on the same forward graph; run forward again")
    params = [(n, p) for n, p in params if p.requires_grad]
    for _, p in params:
        p.grad = None
    if loss.requires_grad:
        loss.backward()
    loss._vc_consumed = True
    grads = {}
    for n, p in params:
        if p.grad is None:
            p.grad = torch.zeros_like(p)
        grads[n] = p.grad
    return grads


@dataclass
class AdamState:
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Bias-corrected Adam, in place on ``params``; returns the advanced state."""
    bad = [n for n, g in grads.items() if not torch.isfinite(g).all()]
    if bad:
        raise NonFiniteGradientError(f"non-finite gradient in {', '.join(sorted(bad))} at step {state.step + 1}")
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    with torch.no_grad():
        for n, p in params.items():
            g = grads[n]
            m = state.m.get(n)
            v = state.v.get(n)
            m = g * (1 - beta1) if m is None else m * beta1 + g * (1 - beta1)
            v = g * g * (1 - beta2) if v is None else v * beta2 + g * g * (1 - beta2)
            state.m[n], state.v[n] = m, v
            p -= lr * (m / bc1) / (torch.sqrt(v / bc2) + eps)
    return state


@dataclass
class TrainConfig:
    max_epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    stop_patience: int = 10
    plateau_patience: int = 5
    plateau_factor: float = 0.5
    min_lr: float = 0.0
    checkpoint_best: bool = True
    seed: int = 0
    time_limit_s: float | None = None

    def __post_init__(self):
        if self.batch_size < 1 or self.stop_patience < 1 or self.plateau_patience < 1:
            raise ValueError("batch_size and patiences must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class FitResult:
    history: list[dict]
    best_epoch: int
    best_val_mse: float
    stopped_early: bool
    best_state: dict[str, torch.Tensor]


def _evaluate(model, X, Y, batch_size) -> tuple[float, float]:
    se = ae = 0.0
    count = 0
    with torch.no_grad():
        for i in range(0, len(X), batch_size):
            pred = model(X[i:i + batch_size])
            diff = pred - Y[i:i + batch_size]
            se += float((diff ** 2).sum())
            ae += float(diff.abs().sum())
            count += diff.numel()
    return se / count, ae / count


def fit(model: nn.Module, train: tuple[np.ndarray, np.ndarray], val: tuple[np.ndarray, np.ndarray],
        config: TrainConfig = TrainConfig(), on_epoch: Callable[[dict], None] | None = None) -> FitResult:
    """Mini-batch Adam on MSE with validation-driven LR halving and early stopping.

    Best-validation weights are restored into ``model`` before returning.
    """
    if len(train[0]) == 0 or len(val[0]) == 0:
        raise ValueError("fit needs non-empty train and validation sets")
    dtype = next(model.parameters()).dtype
    Xtr, Ytr = (torch.as_tensor(np.asarray(a), dtype=dtype) for a in train)
    Xva, Yva = (torch.as_tensor(np.asarray(a), dtype=dtype) for a in val)
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    named = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    params = dict(named)
    state = AdamState()
    lr = config.lr
    best = math.inf
    best_epoch = -1
    best_state = copy.deepcopy(model.state_dict())
    since_best = since_plateau = 0
    history: list[dict] = []
    stopped_early = False
    t0 = time.monotonic()

    for epoch in range(config.max_epochs):
        model.train()
        order = rng.permutation(len(Xtr))
        se = ae = 0.0
        count = 0
        for i in range(0, len(order), config.batch_size):
            idx = torch.as_tensor(order[i:i + config.batch_size])
            pred = model(Xtr[idx])
            diff = pred - Ytr[idx]
            loss = (diff ** 2).mean()
            if not torch.isfinite(loss):
                model.load_state_dict(best_state)
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", history)
            grads = backward(loss, named)
            try:
                adam_step(params, grads, state, lr, config.beta1, config.beta2, config.eps)
            except NonFiniteGradientError as exc:
                model.load_state_dict(best_state)
                raise TrainingDiverged(str(exc), history) from exc
            se += float((diff.detach() ** 2).sum())
            ae += float(diff.detach().abs().sum())
            count += diff.numel()

        model.eval()
        val_mse, val_mae = _evaluate(model, Xva, Yva, max(config.batch_size, 256))
        rec = {"epoch": epoch, "lr": lr, "train_mse": se / count, "train_mae": ae / count,
               "val_mse": val_mse, "val_mae": val_mae}
        history.append(rec)
        if on_epoch:
            on_epoch(rec)
        log.info("epoch %d train_mse %.3e val_mse %.3e lr %.1e", epoch, rec["train_mse"], val_mse, lr)

        if not math.isfinite(val_mse):
            model.load_state_dict(best_state)
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}", history)
        if val_mse < best:
            best, best_epoch = val_mse, epoch
            since_best = since_plateau = 0
            if config.checkpoint_best:
                best_state = copy.deepcopy(model.state_dict())
        else:
            since_best += 1
            since_plateau += 1
            if since_plateau >= config.plateau_patience:
                lr = max(lr * config.plateau_factor, config.min_lr)
                since_plateau = 0
            if since_best >= config.stop_patience:
                stopped_early = True
                break
        if config.time_limit_s is not None and time.monotonic() - t0 > config.time_limit_s:
            break

    if config.checkpoint_best:
        model.load_state_dict(best_state)
    else:
        best_state = copy.deepcopy(model.state_dict())
    model.eval()
    return FitResult(history, best_epoch, best, stopped_early, best_state)
