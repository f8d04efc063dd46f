"""Layer primitives on top of torch autograd.

Functional forms take explicit weights (so tests can drive them with
float64 tensors and compare against loop oracles); the ``nn.Module``
wrappers own the parameters and their seeded initialisation.

Layouts: sequences are (batch, time, channels); conv kernels are
(k, c_in, c_out); dense weights are (d_in, d_out).
"""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


class ShapeError(ValueError):
    pass


class LayerConfigError(ValueError):
    pass


ACTIVATIONS = {
    "relu": torch.relu,
    "identity": lambda x: x,
    "tanh": torch.tanh,
    "gelu": F.gelu,
}


def _act(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise LayerConfigError(f"unknown activation {name!r}") from None


def dense(x: torch.Tensor, W: torch.Tensor, b: torch.Tensor | None = None, activation: str = "identity"):
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"dense: input {tuple(x.shape)} does not match weight {tuple(W.shape)}")
    y = x @ W
    if b is not None:
        y = y + b
    return _act(activation)(y)


def causal_conv1d(x: torch.Tensor, kernels: torch.Tensor, bias: torch.Tensor | None = None):
    """y[t] = sum_j x[t - (k-1) + j] @ K[j] with zero left padding; length preserved."""
    if x.dim() != 3 or kernels.dim() != 3 or x.shape[-1] != kernels.shape[1]:
        raise ShapeError(f"causal_conv1d: input {tuple(x.shape)} vs kernels {tuple(kernels.shape)}")
    k = kernels.shape[0]
    xp = F.pad(x.transpose(1, 2), (k - 1, 0))
    y = F.conv1d(xp, kernels.permute(2, 1, 0), bias)
    return y.transpose(1, 2)


def transposed_length(T: int, stride: int, kernel: int) -> int:
    return stride * T + max(kernel - stride, 0)


def transposed_conv1d(x: torch.Tensor, kernels: torch.Tensor, bias: torch.Tensor | None = None,
                      stride: int = 1, target_length: int | None = None):
    """Scatter-add upsampling: input step t feeds outputs t*stride + j, j < k.

    Output length is ``stride*T + max(k - stride, 0)`` (trailing zeros when
    k < stride), then right-cropped to ``target_length`` if given.
    """
    if stride < 1:
        raise LayerConfigError("stride must be >= 1")
    if x.dim() != 3 or kernels.dim() != 3 or x.shape[-1] != kernels.shape[1]:
        raise ShapeError(f"transposed_conv1d: input {tuple(x.shape)} vs kernels {tuple(kernels.shape)}")
    T, k = x.shape[1], kernels.shape[0]
    full = transposed_length(T, stride, k)
    y = F.conv_transpose1d(x.transpose(1, 2), kernels.permute(1, 2, 0), None, stride=stride)
    if y.shape[-1] < full:
        y = F.pad(y, (0, full - y.shape[-1]))
    y = y.transpose(1, 2)
    if bias is not None:
        y = y + bias
    if target_length is not None:
        if target_length > full:
            raise LayerConfigError(f"target length {target_length} unreachable (max {full})")
        y = y[:, :target_length]
    return y


def avg_pool1d(x: torch.Tensor, window: int, stride: int | None = None):
    stride = stride or window
    if window > x.shape[1] or window < 1:
        raise ShapeError(f"pool window {window} incompatible with length {x.shape[1]}")
    return F.avg_pool1d(x.transpose(1, 2), window, stride).transpose(1, 2)


def layer_norm(x: torch.Tensor, gamma: torch.Tensor | None = None, beta: torch.Tensor | None = None, eps: float = 1e-6):
    mu = x.mean(dim=-1, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=-1, keepdim=True)
    y = (x - mu) / torch.sqrt(var + eps)
    if gamma is not None:
        y = y * gamma
    if beta is not None:
        y = y + beta
    return y


def multi_head_attention(x, Wq, bq, Wk, bk, Wv, bv, Wo, bo, heads: int, mask=None, return_weights=False):
    B, T, d = x.shape
    if d % heads:
        raise LayerConfigError(f"d_model {d} not divisible by {heads} heads")
    dh = d // heads

    def split(z):
        return z.reshape(B, T, heads, dh).transpose(1, 2)  # (B, h, T, dh)

    q, k, v = split(dense(x, Wq, bq)), split(dense(x, Wk, bk)), split(dense(x, Wv, bv))
    scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
    if mask is not None:
        scores = scores.masked_fill(~mask, float("-inf"))
    weights = torch.softmax(scores, dim=-1)
    ctx = (weights @ v).transpose(1, 2).reshape(B, T, d)
    out = dense(ctx, Wo, bo)
    return (out, weights) if return_weights else out


# ---------------------------------------------------------------- modules

def _uniform_(t: torch.Tensor, fan_in: int, gen: torch.Generator | None):
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    with torch.no_grad():
        t.uniform_(-bound, bound, generator=gen)
    return t


class Dense(nn.Module):
    def __init__(self, d_in, d_out, activation="identity", bias=True, gen=None):
        super().__init__()
        self.activation = activation
        _act(activation)
        self.weight = nn.Parameter(_uniform_(torch.empty(d_in, d_out), d_in, gen))
        self.bias = nn.Parameter(_uniform_(torch.empty(d_out), d_in, gen)) if bias else None

    def forward(self, x):
        return dense(x, self.weight, self.bias, self.activation)


class CausalConv1d(nn.Module):
    def __init__(self, c_in, c_out, kernel, activation="identity", gen=None):
        super().__init__()
        if kernel < 1:
            raise LayerConfigError("kernel size must be >= 1")
        self.activation = activation
        self.weight = nn.Parameter(_uniform_(torch.empty(kernel, c_in, c_out), kernel * c_in, gen))
        self.bias = nn.Parameter(_uniform_(torch.empty(c_out), kernel * c_in, gen))

    def forward(self, x):
        return _act(self.activation)(causal_conv1d(x, self.weight, self.bias))


class TransposedConv1d(nn.Module):
    def __init__(self, c_in, c_out, stride, kernel, target_length=None, gen=None):
        super().__init__()
        self.stride, self.target_length = stride, target_length
        self.weight = nn.Parameter(_uniform_(torch.empty(kernel, c_in, c_out), c_in * max(1, kernel // stride), gen))
        self.bias = nn.Parameter(_uniform_(torch.empty(c_out), c_in, gen))

    def forward(self, x):
        return transposed_conv1d(x, self.weight, self.bias, self.stride, self.target_length)


class AvgPool1d(nn.Module):
    def __init__(self, window, stride=None, target_length=None):
        super().__init__()
        self.window, self.stride, self.target_length = window, stride or window, target_length

    def forward(self, x):
        y = avg_pool1d(x, self.window, self.stride)
        return y if self.target_length is None else y[:, :self.target_length]


class LayerNorm(nn.Module):
    def __init__(self, d, eps=1e-6):
        super().__init__()
        self.eps = eps
        self.gamma = nn.Parameter(torch.ones(d))
        self.beta = nn.Parameter(torch.zeros(d))

    def forward(self, x):
        return layer_norm(x, self.gamma, self.beta, self.eps)


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model, heads, gen=None):
        super().__init__()
        if d_model % heads:
            raise LayerConfigError(f"d_model {d_model} not divisible by {heads} heads")
        self.heads = heads
        self.q = Dense(d_model, d_model, gen=gen)
        self.k = Dense(d_model, d_model, gen=gen)
        self.v = Dense(d_model, d_model, gen=gen)
        self.o = Dense(d_model, d_model, gen=gen)

    def forward(self, x, return_weights=False):
        return multi_head_attention(x, self.q.weight, self.q.bias, self.k.weight, self.k.bias,
                                    self.v.weight, self.v.bias, self.o.weight, self.o.bias,
                                    self.heads, return_weights=return_weights)


class EncoderBlock(nn.Module):
    """Self-attention and position-wise feed-forward, each wrapped in a residual.

    ``norm_first=True`` normalises the branch input (x + f(LN(x))), so zeroed
    branch outputs make the block an exact identity; ``False`` gives the
    post-norm ordering LN(x + f(x)).
    """

    def __init__(self, d_model, heads, d_ff, dropout=0.1, activation="relu", norm_first=True, gen=None):
        super().__init__()
        self.norm_first = norm_first
        self.attn = MultiHeadAttention(d_model, heads, gen=gen)
        self.ff1 = Dense(d_model, d_ff, activation, gen=gen)
        self.ff2 = Dense(d_ff, d_model, gen=gen)
        self.norm1 = LayerNorm(d_model)
        self.norm2 = LayerNorm(d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        if self.norm_first:
            x = x + self.drop(self.attn(self.norm1(x)))
            return x + self.drop(self.ff2(self.ff1(self.norm2(x))))
        x = self.norm1(x + self.drop(self.attn(x)))
        return self.norm2(x + self.drop(self.ff2(self.ff1(x))))
