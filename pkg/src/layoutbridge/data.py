"""COCO-style dataset ingestion, the synthetic shape grammar, and the
predictions JSON-lines format.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Tuple

import numpy as np

from .geometry import BBox, Layout, LayoutObject, canonicalize_layout, CANONICAL_SIZE, GeometryError

log = logging.getLogger(__name__)

ANNOTATIONS_FILE = "annotations.json"
CAPTIONS_FILE = "captions.json"


class SchemaError(ValueError):
    """Input file does not follow the documented schema; ``field`` names the culprit."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class DatasetRecord:
    sample_id: int
    captions: Tuple[str, ...]
    gt_layout: Layout

    def __post_init__(self) -> None:
        if not self.captions:
            raise ValueError(f"record {self.sample_id} has no captions")


@dataclass(frozen=True)
class Dataset:
    records: Tuple[DatasetRecord, ...]
    category_names: Tuple[str, ...]
    # original category ids, aligned with category_names
    category_ids: Tuple[int, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.records)

    def by_id(self) -> Dict[int, DatasetRecord]:
        return {r.sample_id: r for r in self.records}


def _get(obj, key, where, kind=None):
    if not isinstance(obj, Mapping) or key not in obj:
        raise SchemaError(f"{where}.{key}", "missing")
    val = obj[key]
    if kind is not None and (not isinstance(val, kind) or isinstance(val, bool)):
        raise SchemaError(f"{where}.{key}", f"expected {getattr(kind, '__name__', kind)}, got {type(val).__name__}")
    return val


def _load_json(path, what):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(what, f"invalid JSON ({exc})") from None


def parse_annotations(ann: dict, captions: dict) -> Dataset:
    num = (int, float)
    images = _get(ann, "images", "annotations", list)
    anns = _get(ann, "annotations", "annotations", list)
    cats = _get(ann, "categories", "annotations", list)
    cap_list = _get(captions, "annotations", "captions", list)

    cat_ids = []
    cat_names = {}
    for n, c in enumerate(cats):
        cid = _get(c, "id", f"categories[{n}]", int)
        cat_names[cid] = str(_get(c, "name", f"categories[{n}]", str))
        cat_ids.append(cid)
    cat_ids = sorted(set(cat_ids))
    dense = {cid: i for i, cid in enumerate(cat_ids)}

    frames = {}
    for n, im in enumerate(images):
        iid = _get(im, "id", f"images[{n}]", int)
        w = _get(im, "width", f"images[{n}]", num)
        h = _get(im, "height", f"images[{n}]", num)
        if not (w > 0 and h > 0):
            raise SchemaError(f"images[{n}].width", "image size must be positive")
        frames[iid] = (float(w), float(h))

    objects: Dict[int, List[LayoutObject]] = {iid: [] for iid in frames}
    for n, a in enumerate(anns):
        where = f"annotations[{n}]"
        iid = _get(a, "image_id", where, int)
        if iid not in frames:
            raise SchemaError(f"{where}.image_id", f"unknown image {iid}")
        cid = _get(a, "category_id", where, int)
        if cid not in dense:
            raise SchemaError(f"{where}.category_id", f"unknown category {cid}")
        bbox = _get(a, "bbox", where, list)
        if len(bbox) != 4 or not all(isinstance(v, num) and not isinstance(v, bool) for v in bbox):
            raise SchemaError(f"{where}.bbox", "expected [left, top, width, height]")
        left, top, bw, bh = (float(v) for v in bbox)
        if not (bw > 0 and bh > 0):
            log.warning("%s: skipping degenerate box %s", where, bbox)
            continue
        try:
            objects[iid].append(LayoutObject(dense[cid], BBox.from_corner(left, top, bw, bh)))
        except GeometryError as exc:
            raise SchemaError(f"{where}.bbox", str(exc)) from None

    caps: Dict[int, List[str]] = {}
    for n, c in enumerate(cap_list):
        where = f"captions.annotations[{n}]"
        iid = _get(c, "image_id", where, int)
        caps.setdefault(iid, []).append(_get(c, "caption", where, str))

    records = []
    for iid in sorted(frames):
        if not caps.get(iid):
            log.warning("image %d has no caption; skipped", iid)
            continue
        try:
            raw = Layout(tuple(objects[iid]), frames[iid])
        except GeometryError as exc:
            raise SchemaError(f"images[id={iid}]", str(exc)) from None
        records.append(DatasetRecord(iid, tuple(caps[iid]), canonicalize_layout(raw)))
    return Dataset(tuple(records), tuple(cat_names[c] for c in cat_ids), tuple(cat_ids))


def ingest_annotations(annotation_file, caption_file) -> Dataset:
    """Read COCO-style instance and caption files into canonical records."""
    return parse_annotations(_load_json(annotation_file, "annotations"), _load_json(caption_file, "captions"))


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    return ingest_annotations(d / ANNOTATIONS_FILE, d / CAPTIONS_FILE)


def dataset_to_json(ds: Dataset) -> Tuple[dict, dict]:
    cat_ids = ds.category_ids or tuple(range(len(ds.category_names)))
    images, anns, caps = [], [], []
    for r in ds.records:
        fw, fh = r.gt_layout.frame
        images.append({"id": r.sample_id, "width": fw, "height": fh})
        for o in r.gt_layout.objects:
            anns.append({
                "id": len(anns) + 1,
                "image_id": r.sample_id,
                "category_id": cat_ids[o.category],
                "bbox": list(o.bbox.to_corner()),
            })
        for text in r.captions:
            caps.append({"id": len(caps) + 1, "image_id": r.sample_id, "caption": text})
    categories = [{"id": cid, "name": name} for cid, name in zip(cat_ids, ds.category_names)]
    return ({"images": images, "annotations": anns, "categories": categories}, {"annotations": caps})


def write_dataset(ds: Dataset, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ann, caps = dataset_to_json(ds)
    (d / ANNOTATIONS_FILE).write_text(json.dumps(ann, indent=1) + "\n", encoding="utf-8")
    (d / CAPTIONS_FILE).write_text(json.dumps(caps, indent=1) + "\n", encoding="utf-8")


# --- synthetic shape grammar --------------------------------------------------

SHAPES = ("square", "circle", "triangle", "star")
# base (w, h) per shape; areas are far enough apart that size jitter never
# reorders two different shapes
SHAPE_SIZES = {"square": (72.0, 72.0), "circle": (56.0, 56.0), "triangle": (60.0, 40.0), "star": (36.0, 36.0)}
RELATIONS = ("above", "below", "left of", "right of", "two")
_CELL = CANONICAL_SIZE / 7
# grid cells (gx, gy) for the first and second object of each relation
_PLACEMENT = {
    "above": ((3, 1), (3, 5)),
    "below": ((3, 5), (3, 1)),
    "left of": ((1, 3), (5, 3)),
    "right of": ((5, 3), (1, 3)),
    "two": ((2, 3), (4, 3)),
}
_INVERSE = {"above": "below", "below": "above", "left of": "right of", "right of": "left of"}
_TEMPLATES = ("{a} {rel} {b}", "a {a} {rel} a {b}", "the {a} is {rel} the {b}")
_TWO_TEMPLATES = ("two {a}", "a pair of {a}", "two {a}s side by side")
SECOND_OF_TWO_SCALE = 0.7
JITTER_CELLS = 0.2
SIZE_JITTER = 0.05
_QUANT = 8.0  # coordinates are multiples of 1/8 px, exact under corner/center conversion


def _q(v: float) -> float:
    return round(v * _QUANT) / _QUANT


def toy_layout(first: str, rel: str, second: str, rng: np.random.Generator) -> Layout:
    """Layout satisfying ``first rel second`` (``second`` ignored for "two")."""
    cells = _PLACEMENT[rel]
    names = (first, first) if rel == "two" else (first, second)
    objs = []
    for k, (name, (gx, gy)) in enumerate(zip(names, cells)):
        bw, bh = SHAPE_SIZES[name]
        if rel == "two" and k == 1:
            bw, bh = bw * SECOND_OF_TWO_SCALE, bh * SECOND_OF_TWO_SCALE
        jx, jy = rng.uniform(-JITTER_CELLS, JITTER_CELLS, 2)
        sw, sh = rng.uniform(1 - SIZE_JITTER, 1 + SIZE_JITTER, 2)
        box = BBox(_q((gx + 0.5 + jx) * _CELL), _q((gy + 0.5 + jy) * _CELL), _q(bw * sw), _q(bh * sh))
        objs.append(LayoutObject(SHAPES.index(name), box))
    return Layout(tuple(objs))


def toy_captions(first: str, rel: str, second: str, rng: np.random.Generator, n: int) -> Tuple[str, ...]:
    if rel == "two":
        texts = [t.format(a=first) for t in _TWO_TEMPLATES]
    else:
        texts = [t.format(a=first, rel=rel, b=second) for t in _TEMPLATES]
        texts += [t.format(a=second, rel=_INVERSE[rel], b=first) for t in _TEMPLATES]
    picks = rng.choice(len(texts), size=n, replace=False)
    return tuple(texts[i] for i in sorted(picks))


def synth_toy_dataset(seed: int, size: int, first_id: int = 1, max_captions: int = 3) -> Dataset:
    """Captions over shapes and spatial relations with layouts obeying them."""
    if size < 1:
        raise ValueError("size must be >= 1")
    rng = np.random.default_rng(seed)
    records = []
    for n in range(size):
        rel = RELATIONS[rng.integers(len(RELATIONS))]
        a = SHAPES[rng.integers(len(SHAPES))]
        b = a if rel == "two" else SHAPES[rng.choice([i for i in range(len(SHAPES)) if SHAPES[i] != a])]
        layout = toy_layout(a, rel, b, rng)
        caps = toy_captions(a, rel, b, rng, int(rng.integers(1, max_captions + 1)))
        records.append(DatasetRecord(first_id + n, caps, layout))
    return Dataset(tuple(records), SHAPES, tuple(range(len(SHAPES))))


# --- predictions --------------------------------------------------------------


def layout_to_json(layout: Layout) -> list:
    return [{"category": o.category, "bbox": o.bbox.as_list()} for o in layout.objects]


def write_predictions(path, predictions: Iterable[Tuple[int, Layout]]) -> None:
    lines = []
    for sid, layout in predictions:
        lines.append(json.dumps({"id": sid, "objects": layout_to_json(layout)}, separators=(",", ":")))
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_predictions(path) -> Dict[int, Layout]:
    """Predictions JSON lines: ``{"id", "objects": [{"category", "bbox": [x, y, w, h]}]}``."""
    out: Dict[int, Layout] = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        where = f"line {n}"
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(where, f"invalid JSON ({exc})") from None
        sid = _get(rec, "id", where, int)
        objs = []
        for k, o in enumerate(_get(rec, "objects", where, list)):
            ow = f"{where}.objects[{k}]"
            cat = _get(o, "category", ow, int)
            bbox = _get(o, "bbox", ow, list)
            if len(bbox) != 4:
                raise SchemaError(f"{ow}.bbox", "expected [x, y, w, h]")
            try:
                objs.append(LayoutObject(cat, BBox(*(float(v) for v in bbox))))
            except (GeometryError, TypeError, ValueError) as exc:
                raise SchemaError(f"{ow}.bbox", str(exc)) from None
        if sid in out:
            raise SchemaError(f"{where}.id", f"duplicate id {sid}")
        try:
            out[sid] = Layout(tuple(objs))
        except GeometryError as exc:
            raise SchemaError(where, str(exc)) from None
    return out
