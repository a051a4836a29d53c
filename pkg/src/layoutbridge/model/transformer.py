"""Encoder-decoder layout transformer with a hand-derived backward pass.

Pre-LN blocks. The encoder reads concatenated captions under a block-diagonal
caption mask; the decoder reads ``[BOS, v_1, ..., v_n]`` causally and predicts
``[v_1, ..., v_n, EOS]`` over the joint grid/category classes. A three-layer
ReLU head with a sigmoid output regresses the in-cell box state from each
decoder state.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from ..codec import TargetSequence, TokenizedCaptions, build_multicaption_mask
from . import nn
from .config import ModelConfig

Params = "OrderedDict[str, np.ndarray]"


@dataclass
class Batch:
    text_ids: np.ndarray  # (B, Ti) int
    text_mask: np.ndarray  # (B, Ti, Ti) bool
    text_valid: np.ndarray  # (B, Ti) bool
    dec_in: np.ndarray  # (B, To) int
    targets: np.ndarray  # (B, To) int, -1 = padding
    reg_targets: np.ndarray  # (B, To, 4)
    reg_valid: np.ndarray  # (B, To) bool

    def __len__(self) -> int:
        return self.text_ids.shape[0]


def make_batch(
    samples: Sequence[Tuple[TokenizedCaptions, TargetSequence]],
    n_joint: int,
    pad_id: int = 0,
) -> Batch:
    """Pad a list of (captions, target) pairs into dense arrays."""
    if not samples:
        raise ValueError("empty batch")
    eos, bos = n_joint, n_joint + 1
    B = len(samples)
    Ti = max(len(tc) for tc, _ in samples)
    To = max(len(ts.tokens) for _, ts in samples)
    text_ids = np.full((B, Ti), pad_id, dtype=np.int64)
    text_mask = np.zeros((B, Ti, Ti), dtype=bool)
    text_valid = np.zeros((B, Ti), dtype=bool)
    dec_in = np.full((B, To), eos, dtype=np.int64)
    targets = np.full((B, To), -1, dtype=np.int64)
    reg_targets = np.full((B, To, 4), 0.5)
    reg_valid = np.zeros((B, To), dtype=bool)
    for b, (tc, ts) in enumerate(samples):
        n = len(tc)
        text_ids[b, :n] = tc.ids
        text_mask[b] = build_multicaption_mask(tc.partition(), Ti)
        text_valid[b, :n] = True
        toks = list(ts.tokens)
        if not toks or toks[-1] != eos or eos in toks[:-1]:
            raise ValueError("target sequence must end with exactly one EOS")
        dec_in[b, : len(toks)] = [bos] + toks[:-1]
        targets[b, : len(toks)] = toks
        if ts.n_objects:
            reg_targets[b, : ts.n_objects] = ts.regression_array()
            reg_valid[b, : ts.n_objects] = True
    return Batch(text_ids, text_mask, text_valid, dec_in, targets, reg_targets, reg_valid)


def _f32(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def param_shapes(c: ModelConfig) -> "OrderedDict[str, Tuple[int, ...]]":
    """Declared parameter order; also the checkpoint tensor order."""
    d, f, r = c.d, c.d_ff, c.d_reg
    shapes: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()
    shapes["text_embed"] = (c.K, d)
    shapes["token_embed"] = (c.n_dec_tokens, d)

    def ln(prefix):
        shapes[prefix + "g"] = (d,)
        shapes[prefix + "b"] = (d,)

    def attn(prefix):
        for n in ("q", "k", "v", "o"):
            shapes[f"{prefix}w{n}"] = (d, d)
            shapes[f"{prefix}b{n}"] = (d,)

    def ffn(prefix):
        shapes[prefix + "w1"] = (d, f)
        shapes[prefix + "b1"] = (f,)
        shapes[prefix + "w2"] = (f, d)
        shapes[prefix + "b2"] = (d,)

    for l in range(c.layers_enc):
        ln(f"enc{l}.ln1.")
        attn(f"enc{l}.attn.")
        ln(f"enc{l}.ln2.")
        ffn(f"enc{l}.ffn.")
    if c.layers_enc:
        ln("enc_ln.")
    for l in range(c.layers_dec):
        ln(f"dec{l}.ln1.")
        attn(f"dec{l}.self.")
        ln(f"dec{l}.ln2.")
        attn(f"dec{l}.cross.")
        ln(f"dec{l}.ln3.")
        ffn(f"dec{l}.ffn.")
    ln("dec_ln.")
    shapes["out.w"] = (d, c.n_classes)
    shapes["out.b"] = (c.n_classes,)
    shapes["reg.w1"] = (d, r)
    shapes["reg.b1"] = (r,)
    shapes["reg.w2"] = (r, r)
    shapes["reg.b2"] = (r,)
    shapes["reg.w3"] = (r, 4)
    shapes["reg.b3"] = (4,)
    return shapes


def init_params(c: ModelConfig) -> "OrderedDict[str, np.ndarray]":
    rng = np.random.default_rng(c.seed)
    params: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, shape in param_shapes(c).items():
        leaf = name.rsplit(".", 1)[-1]
        if name.endswith("embed"):
            a = rng.normal(0.0, 1.0, shape)
        elif leaf == "g":
            a = np.ones(shape)
        elif leaf.startswith("b"):
            a = np.zeros(shape)
        elif name == "out.w":
            a = rng.normal(0.0, 0.02, shape)
        else:
            a = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), shape)
        params[name] = _f32(a)
    return params


def _sub(params, prefix: str) -> Dict[str, np.ndarray]:
    n = len(prefix)
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix)}


def _put(grads, prefix: str, part: Dict[str, np.ndarray]) -> None:
    for k, v in part.items():
        grads[prefix + k] = grads.get(prefix + k, 0.0) + v


class LayoutTransformer:
    """Parameters plus forward/backward passes. Arrays are float64 holding
    float32-representable values, so checkpoints round-trip exactly."""

    def __init__(self, config: ModelConfig, params: Optional["OrderedDict[str, np.ndarray]"] = None):
        self.config = config
        if params is None:
            params = init_params(config)
        shapes = param_shapes(config)
        if list(params) != list(shapes):
            raise ValueError("parameter names do not match the configuration")
        for k, s in shapes.items():
            if params[k].shape != s:
                raise ValueError(f"parameter {k} has shape {params[k].shape}, expected {s}")
        self.params = params

    # --- encoder -------------------------------------------------------

    def _encode(self, ids: np.ndarray, mask: np.ndarray):
        c, P = self.config, self.params
        if ids.size and (ids.min() < 0 or ids.max() >= c.K):
            raise ValueError("text token id outside the vocabulary")
        B, T = ids.shape
        x = P["text_embed"][ids] + nn.sinusoidal_positions(T, c.d)
        caches = []
        for l in range(c.layers_enc):
            pre = f"enc{l}."
            h, ln1 = nn.layernorm_fwd(x, P[pre + "ln1.g"], P[pre + "ln1.b"])
            a, att = nn.attention_fwd(h, h, _sub(P, pre + "attn."), mask, c.heads)
            x = x + a
            h, ln2 = nn.layernorm_fwd(x, P[pre + "ln2.g"], P[pre + "ln2.b"])
            f, ff = nn.ffn_fwd(h, _sub(P, pre + "ffn."))
            x = x + f
            caches.append((ln1, att, ln2, ff))
        lnf = None
        if c.layers_enc:
            x, lnf = nn.layernorm_fwd(x, P["enc_ln.g"], P["enc_ln.b"])
        return x, (ids, caches, lnf)

    def _encode_bwd(self, dx, cache, grads):
        c, P = self.config, self.params
        ids, caches, lnf = cache
        if lnf is not None:
            dx, g = nn.layernorm_bwd(dx, lnf)
            _put(grads, "enc_ln.", g)
        for l in reversed(range(c.layers_enc)):
            pre = f"enc{l}."
            ln1, att, ln2, ff = caches[l]
            dh, g = nn.ffn_bwd(dx, ff, _sub(P, pre + "ffn."))
            _put(grads, pre + "ffn.", g)
            dln, g = nn.layernorm_bwd(dh, ln2)
            _put(grads, pre + "ln2.", g)
            dx = dx + dln
            dq, dkv, g = nn.attention_bwd(dx, att, _sub(P, pre + "attn."))
            _put(grads, pre + "attn.", g)
            dln, g = nn.layernorm_bwd(dq + dkv, ln1)
            _put(grads, pre + "ln1.", g)
            dx = dx + dln
        demb = np.zeros_like(P["text_embed"])
        np.add.at(demb, ids, dx)
        grads["text_embed"] = demb

    # --- decoder -------------------------------------------------------

    def _decode(self, dec_in: np.ndarray, enc: np.ndarray, enc_valid: np.ndarray):
        c, P = self.config, self.params
        B, T = dec_in.shape
        if T > c.max_objects + 1:
            raise ValueError(f"decoder prefix of length {T} exceeds the maximum {c.max_objects + 1}")
        x = P["token_embed"][dec_in] + nn.sinusoidal_positions(T, c.d)
        causal = np.broadcast_to(np.tril(np.ones((T, T), dtype=bool)), (B, T, T))
        cross_mask = np.broadcast_to(enc_valid[:, None, :], (B, T, enc.shape[1]))
        caches = []
        for l in range(c.layers_dec):
            pre = f"dec{l}."
            h, ln1 = nn.layernorm_fwd(x, P[pre + "ln1.g"], P[pre + "ln1.b"])
            a, sa = nn.attention_fwd(h, h, _sub(P, pre + "self."), causal, c.heads)
            x = x + a
            h, ln2 = nn.layernorm_fwd(x, P[pre + "ln2.g"], P[pre + "ln2.b"])
            a, ca = nn.attention_fwd(h, enc, _sub(P, pre + "cross."), cross_mask, c.heads)
            x = x + a
            h, ln3 = nn.layernorm_fwd(x, P[pre + "ln3.g"], P[pre + "ln3.b"])
            f, ff = nn.ffn_fwd(h, _sub(P, pre + "ffn."))
            x = x + f
            caches.append((ln1, sa, ln2, ca, ln3, ff))
        x, lnf = nn.layernorm_fwd(x, P["dec_ln.g"], P["dec_ln.b"])
        return x, (dec_in, caches, lnf)

    def _decode_bwd(self, dx, cache, grads):
        c, P = self.config, self.params
        dec_in, caches, lnf = cache
        dx, g = nn.layernorm_bwd(dx, lnf)
        _put(grads, "dec_ln.", g)
        denc = 0.0
        for l in reversed(range(c.layers_dec)):
            pre = f"dec{l}."
            ln1, sa, ln2, ca, ln3, ff = caches[l]
            dh, g = nn.ffn_bwd(dx, ff, _sub(P, pre + "ffn."))
            _put(grads, pre + "ffn.", g)
            dln, g = nn.layernorm_bwd(dh, ln3)
            _put(grads, pre + "ln3.", g)
            dx = dx + dln
            dq, dkv, g = nn.attention_bwd(dx, ca, _sub(P, pre + "cross."))
            _put(grads, pre + "cross.", g)
            denc = denc + dkv
            dln, g = nn.layernorm_bwd(dq, ln2)
            _put(grads, pre + "ln2.", g)
            dx = dx + dln
            dq, dkv, g = nn.attention_bwd(dx, sa, _sub(P, pre + "self."))
            _put(grads, pre + "self.", g)
            dln, g = nn.layernorm_bwd(dq + dkv, ln1)
            _put(grads, pre + "ln1.", g)
            dx = dx + dln
        demb = np.zeros_like(P["token_embed"])
        np.add.at(demb, dec_in, dx)
        grads["token_embed"] = demb
        return denc

    # --- heads ---------------------------------------------------------

    def logits(self, h: np.ndarray) -> np.ndarray:
        return h @ self.params["out.w"] + self.params["out.b"]

    def _regress(self, h: np.ndarray):
        P = self.params
        z1 = h @ P["reg.w1"] + P["reg.b1"]
        r1 = np.maximum(z1, 0.0)
        z2 = r1 @ P["reg.w2"] + P["reg.b2"]
        r2 = np.maximum(z2, 0.0)
        z3 = r2 @ P["reg.w3"] + P["reg.b3"]
        f = nn.sigmoid(z3)
        return f, (h, z1, r1, z2, r2, f)

    def _regress_bwd(self, df, cache, grads):
        P = self.params
        h, z1, r1, z2, r2, f = cache
        dz3 = df * f * (1.0 - f)
        dr2, grads["reg.w3"], grads["reg.b3"] = nn.linear_bwd(dz3, r2, P["reg.w3"])
        dz2 = dr2 * (z2 > 0)
        dr1, grads["reg.w2"], grads["reg.b2"] = nn.linear_bwd(dz2, r1, P["reg.w2"])
        dz1 = dr1 * (z1 > 0)
        dh, grads["reg.w1"], grads["reg.b1"] = nn.linear_bwd(dz1, h, P["reg.w1"])
        return dh

    def regress_bbox(self, h: np.ndarray) -> np.ndarray:
        """Box state ``(fx, fy, fw, fh)`` in (0, 1) for each decoder state."""
        return self._regress(h)[0]

    # --- public passes -------------------------------------------------

    def forward(self, batch: Batch):
        enc, ecache = self._encode(batch.text_ids, batch.text_mask)
        h, dcache = self._decode(batch.dec_in, enc, batch.text_valid)
        logits = self.logits(h)
        f, rcache = self._regress(h)
        return logits, f, (ecache, dcache, rcache, h)

    def loss(self, batch: Batch) -> Tuple[float, float, float]:
        logits, f, _ = self.forward(batch)
        total, cls, reg, _, _ = layout_loss(logits, f, batch, self.config.lam)
        return total, cls, reg

    def loss_and_grads(self, batch: Batch):
        """Return ``((L_layout, L_cls, L_reg), grads)`` with grads keyed like params."""
        logits, f, (ecache, dcache, rcache, h) = self.forward(batch)
        total, cls, reg, dlogits, df = layout_loss(logits, f, batch, self.config.lam)
        grads: Dict[str, np.ndarray] = {}
        P = self.params
        dh, grads["out.w"], grads["out.b"] = nn.linear_bwd(dlogits, h, P["out.w"])
        dh = dh + self._regress_bwd(df, rcache, grads)
        denc = self._decode_bwd(dh, dcache, grads)
        self._encode_bwd(denc, ecache, grads)
        ordered = OrderedDict((k, np.asarray(grads[k], dtype=float).reshape(P[k].shape)) for k in P)
        return (total, cls, reg), ordered

    def encode_text(self, captions: TokenizedCaptions, mask: Optional[np.ndarray] = None) -> np.ndarray:
        """One state per input token; attention restricted by the caption mask."""
        ids = np.asarray(captions.ids, dtype=np.int64)[None, :]
        if mask is None:
            mask = build_multicaption_mask(captions.partition(), len(captions))
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (ids.shape[1], ids.shape[1]):
            raise ValueError(f"mask shape {mask.shape} does not match {ids.shape[1]} tokens")
        return self._encode(ids, mask[None])[0][0]

    def decode_step(self, enc_states: np.ndarray, prefix: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        """Logits over ``S*S*C + 1`` classes and hidden state for the next object.

        ``prefix`` starts with BOS; the returned values belong to its last position.
        """
        dec_in = np.asarray(prefix, dtype=np.int64)[None, :]
        if dec_in.size and (dec_in.min() < 0 or dec_in.max() >= self.config.n_dec_tokens):
            raise ValueError("decoder token outside the vocabulary")
        enc = enc_states[None]
        valid = np.ones((1, enc.shape[1]), dtype=bool)
        h, _ = self._decode(dec_in, enc, valid)
        h_t = h[0, -1]
        return self.logits(h_t), h_t


def layout_loss(logits: np.ndarray, f: np.ndarray, batch: Batch, lam: float):
    """Summed cross-entropy over target steps plus ``lam`` times the YOLO-style
    box loss (squared error on offsets, on square roots of sizes).

    Returns ``(L_layout, L_cls, L_reg, dL/dlogits, dL/df)``.
    """
    if logits.shape[:2] != batch.targets.shape or f.shape[:2] != batch.targets.shape:
        raise ValueError("prediction and target lengths differ")
    valid = batch.targets >= 0
    logp = nn.log_softmax(logits)
    tgt = np.where(valid, batch.targets, 0)
    picked = np.take_along_axis(logp, tgt[..., None], axis=-1)[..., 0]
    l_cls = float(-(picked * valid).sum())
    dlogits = np.exp(logp)
    np.put_along_axis(dlogits, tgt[..., None], np.take_along_axis(dlogits, tgt[..., None], -1) - 1.0, -1)
    dlogits *= valid[..., None]

    rv = batch.reg_valid[..., None]
    t = batch.reg_targets
    diff = np.empty_like(f)
    diff[..., :2] = f[..., :2] - t[..., :2]
    sf = np.sqrt(f[..., 2:])
    diff[..., 2:] = sf - np.sqrt(t[..., 2:])
    l_reg = float((diff * diff * rv).sum())
    df = np.empty_like(f)
    df[..., :2] = 2.0 * diff[..., :2]
    df[..., 2:] = diff[..., 2:] / sf
    df *= rv * lam
    return l_cls + lam * l_reg, l_cls, l_reg, dlogits, df
