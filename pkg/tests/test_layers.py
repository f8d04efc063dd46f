import math

import numpy as np
import pytest
import torch

from helpers import fd_max_rel_error
from vesselcast.nn.layers import (AvgPool1d, CausalConv1d, Dense, EncoderBlock, LayerConfigError, LayerNorm,
                                  MultiHeadAttention, ShapeError, TransposedConv1d, avg_pool1d, causal_conv1d, dense,
                                  layer_norm, multi_head_attention, transposed_conv1d, transposed_length)

GRAD_TOL = 1e-4


def rnd(*shape, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=g, dtype=torch.float64)


# ---------------------------------------------------------------- loop oracles

def dense_oracle(x, W, b):
    B, di = x.shape
    do = W.shape[1]
    out = np.zeros((B, do))
    for r in range(B):
        for o in range(do):
            acc = b[o]
            for i in range(di):
                acc += x[r, i] * W[i, o]
            out[r, o] = acc
    return out


def causal_conv_oracle(x, K, b):
    B, T, C = x.shape
    k, _, O = K.shape
    pad = np.concatenate([np.zeros((B, k - 1, C)), x], axis=1)
    out = np.zeros((B, T, O))
    for r in range(B):
        for t in range(T):
            for o in range(O):
                acc = b[o]
                for j in range(k):
                    for c in range(C):
                        acc += pad[r, t + j, c] * K[j, c, o]
                out[r, t, o] = acc
    return out


def scatter_add_oracle(x, K, b, s):
    B, T, C = x.shape
    k, _, O = K.shape
    out = np.zeros((B, s * T + max(k - s, 0), O))
    for r in range(B):
        for t in range(T):
            for j in range(k):
                for o in range(O):
                    out[r, t * s + j, o] += sum(x[r, t, c] * K[j, c, o] for c in range(C))
    return out + b


def mha_oracle(x, Ws, bs, h):
    Wq, Wk, Wv, Wo = Ws
    bq, bk, bv, bo = bs
    B, T, d = x.shape
    dh = d // h
    out = np.zeros_like(x)
    for r in range(B):
        q, k, v = x[r] @ Wq + bq, x[r] @ Wk + bk, x[r] @ Wv + bv
        ctx = np.zeros((T, d))
        for head in range(h):
            sl = slice(head * dh, (head + 1) * dh)
            for t in range(T):
                scores = np.array([q[t, sl] @ k[u, sl] / math.sqrt(dh) for u in range(T)])
                w = np.exp(scores - scores.max())
                w /= w.sum()
                ctx[t, sl] = sum(w[u] * v[u, sl] for u in range(T))
        out[r] = ctx @ Wo + bo
    return out


# ---------------------------------------------------------------- dense

def test_dense_identity_and_relu():
    x = rnd(4, 5)
    assert torch.equal(dense(x, torch.eye(5, dtype=torch.float64), torch.zeros(5)), x)
    assert torch.all(dense(-x.abs() - 1, torch.eye(5, dtype=torch.float64), None, "relu") == 0)


def test_dense_matches_loop_oracle():
    x, W, b = rnd(3, 4, seed=1), rnd(4, 6, seed=2), rnd(6, seed=3)
    np.testing.assert_allclose(dense(x, W, b).numpy(), dense_oracle(x.numpy(), W.numpy(), b.numpy()),
                               atol=1e-12, rtol=0)


def test_dense_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(3, 4\).*\(5, 6\)"):
        dense(rnd(3, 4), rnd(5, 6))


# ---------------------------------------------------------------- causal conv

def test_causal_conv_matches_oracle():
    x, K, b = rnd(2, 7, 3, seed=4), rnd(3, 3, 5, seed=5), rnd(5, seed=6)
    np.testing.assert_allclose(causal_conv1d(x, K, b).numpy(), causal_conv_oracle(x.numpy(), K.numpy(), b.numpy()),
                               atol=1e-12, rtol=0)


def test_causal_conv_k1_is_stepwise_dense():
    x, K, b = rnd(2, 6, 3), rnd(1, 3, 4, seed=1), rnd(4, seed=2)
    torch.testing.assert_close(causal_conv1d(x, K, b), dense(x, K[0], b), atol=1e-14, rtol=0)


@pytest.mark.parametrize("t", [0, 3, 9])
def test_causal_conv_causality(t):
    x, K = rnd(1, 10, 2), rnd(3, 2, 4, seed=1)
    y0 = causal_conv1d(x, K)
    x2 = x.clone()
    x2[:, t] += 5.0
    y1 = causal_conv1d(x2, K)
    assert torch.equal(y0[:, :t], y1[:, :t])
    assert not torch.equal(y0[:, t], y1[:, t])


def test_causal_conv_shape_error():
    with pytest.raises(ShapeError):
        causal_conv1d(rnd(1, 5, 3), rnd(2, 4, 4))


# ---------------------------------------------------------------- transposed conv

def test_transposed_identity():
    x = rnd(2, 5, 3)
    K = torch.eye(3, dtype=torch.float64)[None]
    assert torch.equal(transposed_conv1d(x, K, stride=1), x)


@pytest.mark.parametrize("T,s,k,expected", [(30, 3, 3, 90), (30, 2, 2, 60), (30, 2, 3, 61), (4, 3, 1, 12)])
def test_transposed_length(T, s, k, expected):
    assert transposed_length(T, s, k) == expected
    assert transposed_conv1d(rnd(1, T, 2), rnd(k, 2, 2), stride=s).shape[1] == expected


@pytest.mark.parametrize("s,k", [(3, 3), (2, 3), (3, 1), (1, 2)])
def test_transposed_matches_scatter_add(s, k):
    x, K, b = rnd(2, 5, 3, seed=7), rnd(k, 3, 4, seed=8), rnd(4, seed=9)
    np.testing.assert_allclose(transposed_conv1d(x, K, b, stride=s).numpy(),
                               scatter_add_oracle(x.numpy(), K.numpy(), b.numpy(), s), atol=1e-12, rtol=0)


def test_transposed_crop_and_unreachable():
    x, K = rnd(1, 30, 2), rnd(3, 2, 2)
    full = transposed_conv1d(x, K, stride=3)
    assert torch.equal(transposed_conv1d(x, K, stride=3, target_length=80), full[:, :80])
    with pytest.raises(LayerConfigError):
        transposed_conv1d(x, K, stride=3, target_length=91)
    with pytest.raises(LayerConfigError):
        transposed_conv1d(x, K, stride=0)


# ---------------------------------------------------------------- pooling

def test_pool_identity_constant_and_oracle():
    x = rnd(2, 90, 3)
    assert torch.equal(avg_pool1d(x, 1, 1), x)
    c = torch.full((1, 12, 2), 3.25, dtype=torch.float64)
    assert torch.equal(avg_pool1d(c, 4), torch.full((1, 3, 2), 3.25, dtype=torch.float64))
    y = avg_pool1d(x, 3, 3)
    assert y.shape == (2, 30, 3)
    oracle = np.stack([x.numpy()[:, 3 * i:3 * i + 3].mean(axis=1) for i in range(30)], axis=1)
    np.testing.assert_allclose(y.numpy(), oracle, atol=1e-12, rtol=0)


def test_pool_strided_length_and_error():
    assert avg_pool1d(rnd(1, 10, 1), 4, 3).shape[1] == (10 - 4) // 3 + 1
    with pytest.raises(ShapeError):
        avg_pool1d(rnd(1, 3, 1), 4)


# ---------------------------------------------------------------- layer norm / attention / encoder

def test_layer_norm_moments():
    y = layer_norm(rnd(4, 7, 16) * 3 + 2)
    torch.testing.assert_close(y.mean(-1), torch.zeros(4, 7, dtype=torch.float64), atol=1e-6, rtol=0)
    torch.testing.assert_close(y.var(-1, unbiased=False), torch.ones(4, 7, dtype=torch.float64), atol=1e-6, rtol=0)


def _mha_weights(d, seed=0):
    Ws = [rnd(d, d, seed=seed + i) * 0.4 for i in range(4)]
    bs = [rnd(d, seed=seed + 10 + i) * 0.1 for i in range(4)]
    return Ws, bs


def test_mha_matches_loop_oracle():
    x = rnd(2, 5, 8, seed=3)
    Ws, bs = _mha_weights(8)
    out = multi_head_attention(x, Ws[0], bs[0], Ws[1], bs[1], Ws[2], bs[2], Ws[3], bs[3], heads=2)
    np.testing.assert_allclose(out.numpy(), mha_oracle(x.numpy(), [w.numpy() for w in Ws],
                                                       [b.numpy() for b in bs], 2), atol=1e-10, rtol=0)


def test_mha_single_step_and_row_sums():
    Ws, bs = _mha_weights(8)
    args = (Ws[0], bs[0], Ws[1], bs[1], Ws[2], bs[2], Ws[3], bs[3])
    x1 = rnd(3, 1, 8)
    expected = dense(dense(x1, Ws[2], bs[2]), Ws[3], bs[3])
    torch.testing.assert_close(multi_head_attention(x1, *args, heads=4), expected, atol=1e-12, rtol=0)
    _, w = multi_head_attention(rnd(2, 6, 8), *args, heads=2, return_weights=True)
    torch.testing.assert_close(w.sum(-1), torch.ones(2, 2, 6, dtype=torch.float64), atol=1e-12, rtol=0)


def test_mha_head_divisibility():
    Ws, bs = _mha_weights(8)
    with pytest.raises(LayerConfigError):
        multi_head_attention(rnd(1, 2, 8), Ws[0], bs[0], Ws[1], bs[1], Ws[2], bs[2], Ws[3], bs[3], heads=3)
    with pytest.raises(LayerConfigError):
        MultiHeadAttention(128, 7)


def test_encoder_eval_deterministic_and_train_stochastic():
    blk = EncoderBlock(16, 4, 32, dropout=0.1).double()
    x = rnd(2, 6, 16)
    blk.eval()
    assert torch.equal(blk(x), blk(x))
    blk.train()
    assert not torch.equal(blk(x), blk(x))


def test_encoder_zero_branches_is_identity():
    blk = EncoderBlock(16, 4, 32, dropout=0.1).double().eval()
    with torch.no_grad():
        for lin in (blk.attn.o, blk.ff2):
            lin.weight.zero_()
            lin.bias.zero_()
    x = rnd(2, 6, 16)
    assert torch.equal(blk(x), x)


def test_encoder_post_norm_variant_runs():
    blk = EncoderBlock(16, 4, 32, norm_first=False).double().eval()
    y = blk(rnd(2, 6, 16))
    torch.testing.assert_close(y.mean(-1), torch.zeros(2, 6, dtype=torch.float64), atol=1e-6, rtol=0)


def test_seeded_init_reproducible():
    a = Dense(4, 3, gen=torch.Generator().manual_seed(7))
    b = Dense(4, 3, gen=torch.Generator().manual_seed(7))
    assert torch.equal(a.weight, b.weight) and a.weight.abs().max() <= 0.5


# ---------------------------------------------------------------- gradient checks

def _module_check(module, x):
    module = module.double().eval()
    x = x.clone().requires_grad_(True)
    R = rnd(*module(x).shape, seed=99)

    def loss():
        return (module(x) * R).sum()

    return fd_max_rel_error(loss, [x] + list(module.parameters()))


GRAD_CASES = {
    "dense": lambda: (Dense(5, 4, "relu"), rnd(3, 5)),
    "causal-conv": lambda: (CausalConv1d(3, 4, 3, "identity"), rnd(2, 6, 3)),
    "transposed-conv": lambda: (TransposedConv1d(3, 2, 3, 3, target_length=14), rnd(2, 5, 3)),
    "pool": lambda: (AvgPool1d(3, target_length=4), rnd(2, 12, 3)),
    "layer-norm": lambda: (LayerNorm(6), rnd(2, 4, 6)),
    "mha": lambda: (MultiHeadAttention(8, 2), rnd(2, 5, 8)),
    "encoder-block": lambda: (EncoderBlock(8, 2, 12, dropout=0.1), rnd(2, 4, 8)),
    "encoder-block-post-norm": lambda: (EncoderBlock(8, 2, 12, norm_first=False), rnd(2, 4, 8)),
}


@pytest.mark.parametrize("name", list(GRAD_CASES))
def test_layer_gradients_match_finite_differences(name):
    module, x = GRAD_CASES[name]()
    assert _module_check(module, x) < GRAD_TOL
