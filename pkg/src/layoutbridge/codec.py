"""Conversion between layouts and model-facing token sequences.

Decoder vocabulary: joint indices ``[0, S*S*C)``, then ``EOS = S*S*C`` and
``BOS = S*S*C + 1``. Objects are serialised by area (largest first), ties
broken by category id, then by raster order of the center cell.
"""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .geometry import (
    BBox,
    GridSpec,
    Layout,
    LayoutObject,
    bbox_area,
    grid_cell_of,
    joint_index_decode,
    joint_index_encode,
)

DEFAULT_MAX_OBJECTS = 16

PAD, BOS_TEXT, SEP, UNK = "<pad>", "<bos>", "<sep>", "<unk>"
RESERVED = (PAD, BOS_TEXT, SEP, UNK)

_WORD_RE = re.compile(r"[a-z0-9]+(?:'[a-z]+)?")


class CapacityError(ValueError):
    pass


class SequenceDecodeError(ValueError):
    pass


def eos_id(g: GridSpec) -> int:
    return g.n_joint


def bos_id(g: GridSpec) -> int:
    return g.n_joint + 1


@dataclass(frozen=True)
class TargetSequence:
    """Joint-index tokens ending in EOS, plus one regression row per object.

    Regression rows are ``(fx, fy, fw, fh)``: center offset inside its grid
    cell in cell units, and size as a fraction of the frame.
    """

    tokens: Tuple[int, ...]
    regressions: Tuple[Tuple[float, float, float, float], ...]

    @property
    def n_objects(self) -> int:
        return len(self.regressions)

    def regression_array(self) -> np.ndarray:
        return np.asarray(self.regressions, dtype=float).reshape(-1, 4)


def _order_key(obj: LayoutObject, g: GridSpec):
    b = obj.bbox
    cell = grid_cell_of((b.x, b.y), g)
    return (-bbox_area(b), obj.category, cell.gy * g.S + cell.gx, b.y, b.x, b.h, b.w)


def layout_to_sequence(layout: Layout, g: GridSpec, max_objects: int = DEFAULT_MAX_OBJECTS) -> TargetSequence:
    if len(layout) > max_objects:
        raise CapacityError(f"{len(layout)} objects exceed capacity {max_objects}")
    fw, fh = g.frame
    tokens: List[int] = []
    regs = []
    for obj in sorted(layout.objects, key=lambda o: _order_key(o, g)):
        b = obj.bbox
        cell = grid_cell_of((b.x, b.y), g)
        tokens.append(joint_index_encode(cell, obj.category, g))
        regs.append((b.x * g.S / fw - cell.gx, b.y * g.S / fh - cell.gy, b.w / fw, b.h / fh))
    tokens.append(eos_id(g))
    return TargetSequence(tuple(tokens), tuple(regs))


def decode_object(token: int, reg: Sequence[float], g: GridSpec) -> LayoutObject:
    cell, category = joint_index_decode(token, g)
    fx, fy, fw, fh = (float(v) for v in reg)
    x = (cell.gx + fx) * g.frame[0] / g.S
    y = (cell.gy + fy) * g.frame[1] / g.S
    return LayoutObject(category, BBox(x, y, fw * g.frame[0], fh * g.frame[1]))


def sequence_to_layout(seq: TargetSequence, g: GridSpec) -> Layout:
    """Decode up to the first EOS; trailing content is ignored."""
    objects = []
    eos = eos_id(g)
    for t, tok in enumerate(seq.tokens):
        if tok == eos:
            break
        if not (0 <= tok < g.n_joint):
            raise SequenceDecodeError(f"unexpected token {tok} at position {t}")
        if t >= len(seq.regressions):
            raise SequenceDecodeError(f"missing regression row for position {t}")
        objects.append(decode_object(tok, seq.regressions[t], g))
    return Layout(tuple(objects), g.frame)


# --- captions -------------------------------------------------------------


def split_words(text: str) -> List[str]:
    return _WORD_RE.findall(text.lower())


class Vocab:
    """Word <-> id map; ids 0..3 are ``<pad> <bos> <sep> <unk>``."""

    def __init__(self, words: Iterable[str] = ()) -> None:
        self._itos: List[str] = list(RESERVED)
        self._stoi: Dict[str, int] = {w: i for i, w in enumerate(self._itos)}
        for w in words:
            self.add(w)

    def add(self, word: str) -> int:
        if word not in self._stoi:
            self._stoi[word] = len(self._itos)
            self._itos.append(word)
        return self._stoi[word]

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, word: str) -> bool:
        return word in self._stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self._itos == other._itos

    def id(self, word: str) -> int:
        return self._stoi.get(word, self._stoi[UNK])

    def word(self, i: int) -> str:
        return self._itos[i]

    pad_id = property(lambda self: self._stoi[PAD])
    bos_id = property(lambda self: self._stoi[BOS_TEXT])
    sep_id = property(lambda self: self._stoi[SEP])
    unk_id = property(lambda self: self._stoi[UNK])

    @classmethod
    def build(cls, captions: Iterable[str], min_count: int = 1) -> "Vocab":
        """Words by descending corpus frequency, ties broken lexicographically."""
        counts = Counter(w for text in captions for w in split_words(text))
        words = sorted((w for w, n in counts.items() if n >= min_count and w not in RESERVED),
                       key=lambda w: (-counts[w], w))
        return cls(words)

    def save(self, path) -> None:
        lines = [f"{w}\t{i}\n" for i, w in enumerate(self._itos)]
        Path(path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        pairs = []
        for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line:
                continue
            word, _, idx = line.rpartition("\t")
            if not word or not idx.isdigit():
                raise ValueError(f"{path}:{n}: expected 'word<TAB>id'")
            pairs.append((int(idx), word))
        pairs.sort()
        if [i for i, _ in pairs] != list(range(len(pairs))):
            raise ValueError(f"{path}: ids are not dense")
        words = [w for _, w in pairs]
        if tuple(words[: len(RESERVED)]) != RESERVED:
            raise ValueError(f"{path}: reserved ids must come first")
        return cls(words[len(RESERVED):])


@dataclass(frozen=True)
class TokenizedCaptions:
    """Concatenated caption ids; ``spans`` are the half-open caption blocks."""

    ids: Tuple[int, ...]
    spans: Tuple[Tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.ids)

    def partition(self) -> Tuple[Tuple[int, int], ...]:
        """Caption spans plus a singleton span per separator token."""
        out, pos = [], 0
        for a, b in self.spans:
            if a > pos:
                out.extend((k, k + 1) for k in range(pos, a))
            out.append((a, b))
            pos = b
        out.extend((k, k + 1) for k in range(pos, len(self.ids)))
        return tuple(out)


def tokenize_captions(captions: Sequence[str], vocab: Vocab) -> TokenizedCaptions:
    if not captions:
        raise ValueError("at least one caption is required")
    ids: List[int] = []
    spans = []
    for k, text in enumerate(captions):
        if k:
            ids.append(vocab.sep_id)
        words = split_words(text) or [UNK]
        start = len(ids)
        ids.extend(vocab.id(w) for w in words)
        spans.append((start, len(ids)))
    return TokenizedCaptions(tuple(ids), tuple(spans))


def build_multicaption_mask(spans: Sequence[Tuple[int, int]], length: int | None = None) -> np.ndarray:
    """Block-diagonal visibility matrix: ``mask[i, j]`` iff i, j share a span.

    Positions not covered by any span (separators) see only themselves.
    """
    spans = sorted((int(a), int(b)) for a, b in spans)
    total = length if length is not None else (spans[-1][1] if spans else 0)
    mask = np.zeros((total, total), dtype=bool)
    prev_end = 0
    for a, b in spans:
        if a < prev_end or b <= a or b > total:
            raise ValueError(f"invalid or overlapping span ({a}, {b})")
        mask[a:b, a:b] = True
        prev_end = b
    mask[np.diag_indices(total)] = True
    return mask
