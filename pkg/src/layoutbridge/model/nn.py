"""Forward/backward pairs for the layers used by the layout transformer.

Every ``*_fwd`` returns ``(output, cache)``; the matching ``*_bwd`` takes the
upstream gradient and the cache and returns ``(dx, grads)`` where ``grads``
maps parameter suffixes to arrays. Shapes are ``(batch, time, features)``.
"""
from __future__ import annotations

import numpy as np

LN_EPS = 1e-5
_MASKED = -1e30


def sinusoidal_positions(length: int, d: int) -> np.ndarray:
    pos = np.arange(length, dtype=float)[:, None]
    i = np.arange(d, dtype=float)[None, :]
    angle = pos / np.power(10000.0, (2.0 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def _flat(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1])


def linear_fwd(x, w, b):
    return x @ w + b, x


def linear_bwd(dy, x, w):
    return dy @ w.T, _flat(x).T @ _flat(dy), _flat(dy).sum(0)


def layernorm_fwd(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd, g)


def layernorm_bwd(dy, cache):
    xhat, rstd, g = cache
    dg = _flat(dy * xhat).sum(0)
    db = _flat(dy).sum(0)
    dxh = dy * g
    dx = rstd * (dxh - dxh.mean(-1, keepdims=True) - xhat * (dxh * xhat).mean(-1, keepdims=True))
    return dx, {"g": dg, "b": db}


def _split_heads(x, heads):
    B, T, d = x.shape
    return x.reshape(B, T, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * dh)


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def attention_fwd(xq, xkv, p, mask, heads):
    """Multi-head attention. ``mask[b, i, j]`` is True when key j is visible to query i."""
    q, _ = linear_fwd(xq, p["wq"], p["bq"])
    k, _ = linear_fwd(xkv, p["wk"], p["bk"])
    v, _ = linear_fwd(xkv, p["wv"], p["bv"])
    qh, kh, vh = (_split_heads(t, heads) for t in (q, k, v))
    scale = 1.0 / np.sqrt(qh.shape[-1])
    scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale
    scores = np.where(mask[:, None, :, :], scores, _MASKED)
    att = softmax(scores)
    ctx = _merge_heads(att @ vh)
    out, _ = linear_fwd(ctx, p["wo"], p["bo"])
    return out, (xq, xkv, qh, kh, vh, att, ctx, scale, heads)


def attention_bwd(dout, cache, p):
    xq, xkv, qh, kh, vh, att, ctx, scale, heads = cache
    dctx, dwo, dbo = linear_bwd(dout, ctx, p["wo"])
    dctxh = _split_heads(dctx, heads)
    datt = dctxh @ vh.transpose(0, 1, 3, 2)
    dvh = att.transpose(0, 1, 3, 2) @ dctxh
    dscores = att * (datt - (datt * att).sum(-1, keepdims=True)) * scale
    dqh = dscores @ kh
    dkh = dscores.transpose(0, 1, 3, 2) @ qh
    dq, dk, dv = (_merge_heads(t) for t in (dqh, dkh, dvh))
    dxq, dwq, dbq = linear_bwd(dq, xq, p["wq"])
    dxk, dwk, dbk = linear_bwd(dk, xkv, p["wk"])
    dxv, dwv, dbv = linear_bwd(dv, xkv, p["wv"])
    grads = {"wq": dwq, "bq": dbq, "wk": dwk, "bk": dbk, "wv": dwv, "bv": dbv, "wo": dwo, "bo": dbo}
    return dxq, dxk + dxv, grads


def ffn_fwd(x, p):
    h, _ = linear_fwd(x, p["w1"], p["b1"])
    r = np.maximum(h, 0.0)
    y, _ = linear_fwd(r, p["w2"], p["b2"])
    return y, (x, h, r)


def ffn_bwd(dy, cache, p):
    x, h, r = cache
    dr, dw2, db2 = linear_bwd(dy, r, p["w2"])
    dh = dr * (h > 0)
    dx, dw1, db1 = linear_bwd(dh, x, p["w1"])
    return dx, {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def log_softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
