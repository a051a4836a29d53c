"""Text-object alignment: category-conditioned attention over word states,
conditioning vectors, cosine consistency scores and the batch contrastive loss.

Visual features come from a :class:`FeatureProvider`; the bundled
:class:`SyntheticGridProvider` paints category prototypes onto a noisy grid so
the math can run without a pretrained backbone.
"""
from __future__ import annotations

import abc
import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .geometry import Layout
from .model.nn import softmax


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    """Standard-normal noise for the image (``img_dim``) and each object (``obj_dim``)."""

    img_dim: int = 0
    obj_dim: int = 0
    seed: int = 0

    def image_noise(self) -> np.ndarray:
        return np.random.default_rng([self.seed, 0]).standard_normal(self.img_dim)

    def object_noise(self, k: int) -> np.ndarray:
        return np.random.default_rng([self.seed, 1, k]).standard_normal(self.obj_dim)


@dataclass(frozen=True)
class VisualFeatures:
    objects: np.ndarray  # (T_o, d)
    image: np.ndarray  # (d,)


def object_text_attention(word_states: np.ndarray, category: int, U: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Pool word states with weights ``softmax_t(z_t . U[category])``."""
    z = np.asarray(word_states, dtype=float)
    if z.ndim != 2 or z.shape[1] != U.shape[1]:
        raise AlignmentError(f"word states {z.shape} do not match category embedding width {U.shape[1]}")
    w = softmax(z @ U[category])
    return w @ z, w


def global_text_rep(word_states: np.ndarray, noise: NoiseSpec = NoiseSpec()) -> Tuple[np.ndarray, np.ndarray]:
    """Mean word state and its concatenation with image noise."""
    z = np.asarray(word_states, dtype=float)
    if z.ndim != 2 or z.shape[0] == 0:
        raise AlignmentError("need at least one word state")
    zbar = z.mean(axis=0)
    return zbar, np.concatenate([zbar, noise.image_noise()])


def layout_conditioning(a_k: np.ndarray, category: int, U: np.ndarray, noise: NoiseSpec = NoiseSpec(), k: int = 0) -> np.ndarray:
    return np.concatenate([a_k, U[category], noise.object_noise(k)])


def layout_conditioning_all(word_states, categories: Sequence[int], U, noise: NoiseSpec = NoiseSpec()) -> np.ndarray:
    """Stack one conditioning vector per layout object."""
    rows = []
    for k, c in enumerate(categories):
        a_k, _ = object_text_attention(word_states, c, U)
        rows.append(layout_conditioning(a_k, c, U, noise, k))
    return np.stack(rows) if rows else np.zeros((0, 2 * U.shape[1] + noise.obj_dim))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise AlignmentError("cosine of a zero vector is undefined")
    return float(np.dot(a, b) / (na * nb))


def object_consistency_score(B: np.ndarray, A: np.ndarray) -> float:
    """log-sum-exp over objects of cos(b_k, a_k)."""
    B, A = np.atleast_2d(B), np.atleast_2d(A)
    if B.shape != A.shape or B.shape[0] < 1:
        raise AlignmentError(f"feature sets differ or are empty: {B.shape} vs {A.shape}")
    cos = np.array([cosine(b, a) for b, a in zip(B, A)])
    m = cos.max()
    return float(m + math.log(np.exp(cos - m).sum()))


def image_consistency_score(bbar: np.ndarray, ebar: np.ndarray) -> float:
    return cosine(bbar, ebar)


def _log_softmax_cols(S: np.ndarray) -> np.ndarray:
    m = S.max(axis=0, keepdims=True)
    return S - m - np.log(np.exp(S - m).sum(axis=0, keepdims=True))


def contrastive_term(S: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean over images k of ``-log softmax_i(S[i, k])[k]`` and its gradient.

    ``S[i, k]`` scores text ``i`` against image ``k``.
    """
    S = np.asarray(S, dtype=float)
    J = S.shape[0]
    if S.ndim != 2 or S.shape[1] != J:
        raise AlignmentError(f"score matrix must be square, got {S.shape}")
    if J < 2:
        raise AlignmentError("contrastive loss needs a batch of at least 2")
    lsm = _log_softmax_cols(S)
    loss = float(-np.trace(lsm) / J)
    grad = (np.exp(lsm) - np.eye(J)) / J
    return loss, grad


def contrastive_loss(S_obj: np.ndarray, S_img: np.ndarray) -> Tuple[float, float, float]:
    """``(L_con, L_obj, L_img)`` for object- and image-level score matrices."""
    l_obj, _ = contrastive_term(S_obj)
    l_img, _ = contrastive_term(S_img)
    return l_obj + l_img, l_obj, l_img


# --- full alignment loss with gradients ------------------------------------


def _cos_and_grad(a: np.ndarray, b: np.ndarray) -> Tuple[float, np.ndarray]:
    """cos(a, b) and d cos / d a."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise AlignmentError("cosine of a zero vector is undefined")
    c = float(a @ b / (na * nb))
    return c, b / (na * nb) - c * a / (na * na)


def alignment_loss(
    word_states: Sequence[np.ndarray],
    categories: Sequence[Sequence[int]],
    obj_feats: Sequence[np.ndarray],
    img_feats: Sequence[np.ndarray],
    U: np.ndarray,
):
    """Contrastive alignment loss over a batch of text/image pairs.

    ``word_states[i]`` is (T_i, d); ``categories[k]`` and ``obj_feats[k]``
    describe the objects of image ``k``; ``img_feats[k]`` is its global
    feature. Text ``i`` is scored against image ``k`` by attending over
    text ``i``'s words with image ``k``'s categories.

    Returns ``((L_con, L_obj, L_img), dU, [dz_i])``.
    """
    J = len(word_states)
    if not (len(categories) == len(obj_feats) == len(img_feats) == J):
        raise AlignmentError("batch components have different lengths")
    S_obj = np.zeros((J, J))
    S_img = np.zeros((J, J))
    tape = {}
    for i in range(J):
        z = np.asarray(word_states[i], dtype=float)
        zbar = z.mean(axis=0)
        for k in range(J):
            cats = list(categories[k])
            Bk = np.atleast_2d(obj_feats[k])
            if len(cats) != Bk.shape[0] or not cats:
                raise AlignmentError(f"image {k}: categories and object features disagree")
            cos, dcos_da, ws = [], [], []
            for c, b in zip(cats, Bk):
                a, w = object_text_attention(z, c, U)
                cv, dv = _cos_and_grad(a, b)
                cos.append(cv)
                dcos_da.append(dv)
                ws.append(w)
            cos = np.array(cos)
            m = cos.max()
            S_obj[i, k] = m + math.log(np.exp(cos - m).sum())
            s_img, dimg = _cos_and_grad(zbar, np.asarray(img_feats[k], dtype=float))
            S_img[i, k] = s_img
            tape[i, k] = (cats, np.exp(cos - S_obj[i, k]), dcos_da, ws, dimg)

    l_obj, g_obj = contrastive_term(S_obj)
    l_img, g_img = contrastive_term(S_img)

    dU = np.zeros_like(U, dtype=float)
    dZ = []
    for i in range(J):
        z = np.asarray(word_states[i], dtype=float)
        dz = np.zeros_like(z)
        for k in range(J):
            cats, lse_w, dcos_da, ws, dimg = tape[i, k]
            for o, c in enumerate(cats):
                ga = g_obj[i, k] * lse_w[o] * dcos_da[o]  # dL / d a
                w = ws[o]
                # a = sum_t w_t z_t with w = softmax(z @ u)
                gzw = z @ ga
                dlogit = w * (gzw - w @ gzw)
                dz += np.outer(w, ga) + np.outer(dlogit, U[c])
                dU[c] += dlogit @ z
            dz += g_img[i, k] * dimg / z.shape[0]
        dZ.append(dz)
    return (l_obj + l_img, l_obj, l_img), dU, dZ


# --- visual features --------------------------------------------------------


def region_feature_pool(grid: np.ndarray, layout: Layout) -> VisualFeatures:
    """Exact area-weighted mean of a piecewise-constant feature grid over each box.

    ``grid`` is (H, W, d) and spans the layout frame; cell (r, c) covers the
    r-th row band and c-th column band. Boxes are clipped to the frame.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 3:
        raise AlignmentError("feature grid must be (H, W, d)")
    H, W, _ = grid.shape
    fw, fh = layout.frame
    xs = np.linspace(0.0, fw, W + 1)
    ys = np.linspace(0.0, fh, H + 1)
    feats = []
    for obj in layout.objects:
        b = obj.bbox
        x0, x1 = max(b.x - b.w / 2, 0.0), min(b.x + b.w / 2, fw)
        y0, y1 = max(b.y - b.h / 2, 0.0), min(b.y + b.h / 2, fh)
        if x1 <= x0 or y1 <= y0:
            raise AlignmentError(f"box {b} lies outside the feature grid")
        wx = np.clip(np.minimum(xs[1:], x1) - np.maximum(xs[:-1], x0), 0.0, None)
        wy = np.clip(np.minimum(ys[1:], y1) - np.maximum(ys[:-1], y0), 0.0, None)
        wts = np.outer(wy, wx)
        feats.append(np.tensordot(wts, grid, axes=([0, 1], [0, 1])) / wts.sum())
    d = grid.shape[2]
    objects = np.stack(feats) if feats else np.zeros((0, d))
    return VisualFeatures(objects, grid.mean(axis=(0, 1)))


class FeatureProvider(abc.ABC):
    """Source of (H, W, d) feature grids for a layout."""

    @abc.abstractmethod
    def feature_grid(self, layout: Layout, key: int = 0) -> np.ndarray:
        ...

    def features(self, layout: Layout, key: int = 0) -> VisualFeatures:
        return region_feature_pool(self.feature_grid(layout, key), layout)


class SyntheticGridProvider(FeatureProvider):
    """Seeded noise grid with a per-category prototype painted over each box."""

    def __init__(self, n_categories: int, dim: int = 16, size: int = 8, noise: float = 0.1, seed: int = 0):
        self.dim, self.size, self.noise, self.seed = dim, size, noise, seed
        self.prototypes = np.random.default_rng([seed, 7]).standard_normal((n_categories, dim))

    def feature_grid(self, layout: Layout, key: int = 0) -> np.ndarray:
        rng = np.random.default_rng([self.seed, 11, key])
        grid = self.noise * rng.standard_normal((self.size, self.size, self.dim))
        fw, fh = layout.frame
        centers_x = (np.arange(self.size) + 0.5) * fw / self.size
        centers_y = (np.arange(self.size) + 0.5) * fh / self.size
        for obj in layout.objects:
            b = obj.bbox
            inx = np.abs(centers_x - b.x) <= b.w / 2
            iny = np.abs(centers_y - b.y) <= b.h / 2
            grid[np.ix_(iny, inx)] += self.prototypes[obj.category]
        return grid
