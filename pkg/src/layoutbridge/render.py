"""Static SVG rendering of layouts."""
from __future__ import annotations

import colorsys
from importlib import resources
from typing import Mapping, Optional, Sequence, Union
from xml.sax.saxutils import escape

from .geometry import Layout

CATEGORY_ASSET = "coco_categories_v1.txt"

Names = Union[Sequence[str], Mapping[int, str]]


def load_category_names(asset: str = CATEGORY_ASSET) -> dict:
    text = resources.files("layoutbridge").joinpath("assets", asset).read_text(encoding="utf-8")
    names = {}
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        idx, name = line.split("\t", 1)
        names[int(idx)] = name
    return names


def category_color(category: int) -> str:
    # golden-ratio hue walk gives well-separated, stable colors
    hue = (category * 0.618033988749895) % 1.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.65, 0.85)
    return "#{:02x}{:02x}{:02x}".format(round(r * 255), round(g * 255), round(b * 255))


def _name(names: Optional[Names], category: int) -> str:
    if names is None:
        return str(category)
    if isinstance(names, Mapping):
        return names.get(category, str(category))
    return names[category] if 0 <= category < len(names) else str(category)


def _num(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def render_layout(layout: Layout, names: Optional[Names] = None, title: str = "") -> str:
    """One labeled rectangle per object on the layout frame."""
    fw, fh = layout.frame
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_num(fw)}" height="{_num(fh)}" '
        f'viewBox="0 0 {_num(fw)} {_num(fh)}">',
    ]
    if title:
        out.append(f"  <title>{escape(title)}</title>")
    # frame drawn as a path so <rect> elements map one-to-one to objects
    out.append(f'  <path class="frame" d="M0 0H{_num(fw)}V{_num(fh)}H0Z" fill="white" stroke="black"/>')
    for obj in layout.objects:
        b = obj.bbox
        left, top, w, h = b.to_corner()
        color = category_color(obj.category)
        out.append(
            f'  <rect x="{_num(left)}" y="{_num(top)}" width="{_num(w)}" height="{_num(h)}" '
            f'fill="{color}" fill-opacity="0.35" stroke="{color}" stroke-width="2"/>'
        )
        out.append(
            f'  <text x="{_num(left + 2)}" y="{_num(top + 11)}" font-family="sans-serif" font-size="10" '
            f'fill="black">{escape(_name(names, obj.category))}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
