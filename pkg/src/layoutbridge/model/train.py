from __future__ import annotations

import math
from collections import OrderedDict
from typing import List, Optional, Sequence

import numpy as np

from ..codec import Vocab, TargetSequence, sequence_to_layout, tokenize_captions
from ..geometry import GridSpec, Layout
from .transformer import Batch, LayoutTransformer


class TrainingDiverged(FloatingPointError):
    pass


class Adam:
    """Adam with bias correction; parameters are rounded to float32 after
    every step so a checkpoint captures them exactly."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = OrderedDict((k, np.zeros_like(v)) for k, v in params.items())
        self.v = OrderedDict((k, np.zeros_like(v)) for k, v in params.items())

    def step(self, params, grads, lr: Optional[float] = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p[...] = (p - update).astype(np.float32)


def train_step(model: LayoutTransformer, batch: Batch, optimizer: Adam, lr: Optional[float] = None) -> float:
    """One optimizer step on ``batch``; returns the pre-update loss."""
    (loss, _, _), grads = model.loss_and_grads(batch)
    if not math.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss {loss}")
    optimizer.step(model.params, grads, lr)
    return loss


def greedy_decode(model: LayoutTransformer, captions, vocab: Vocab) -> TargetSequence:
    """Argmax decoding (lowest index wins ties) until EOS or the object cap."""
    c = model.config
    eos, bos = c.S * c.S * c.C, c.S * c.S * c.C + 1
    tc = tokenize_captions(list(captions), vocab)
    enc = model.encode_text(tc)
    prefix = [bos]
    tokens: List[int] = []
    regs = []
    for _ in range(c.max_objects):
        logits, h = model.decode_step(enc, prefix)
        v = int(np.argmax(logits))
        if v == eos:
            break
        tokens.append(v)
        regs.append(tuple(float(x) for x in model.regress_bbox(h)))
        prefix.append(v)
    tokens.append(eos)
    return TargetSequence(tuple(tokens), tuple(regs))


def greedy_generate(model: LayoutTransformer, captions: Sequence[str], vocab: Vocab,
                    g: Optional[GridSpec] = None) -> Layout:
    if g is None:
        g = model.config.gridspec()
    return sequence_to_layout(greedy_decode(model, captions, vocab), g)
