"""Text, CSV and JSON renderings of LQS reports (columns in the usual
LR LP ALC RLC LC AAC RAC AC LQS order)."""
from __future__ import annotations

import io
import csv
import json
from typing import Optional, Sequence, Tuple

from .metrics import COLUMNS, LqsReport

FORMATS = ("table", "csv", "json")
HEADERS = ("LR", "LP", "ALC", "RLC", "LC", "AAC", "RAC", "AC", "LQS")


def _fmt(v: Optional[float], digits: int = 4) -> str:
    return "-" if v is None else f"{v:.{digits}f}"


def format_table(corpus: LqsReport, samples: Sequence[Tuple[int, LqsReport]] = ()) -> str:
    rows = [("corpus",) + tuple(_fmt(getattr(corpus, c)) for c in COLUMNS)]
    rows += [(str(sid),) + tuple(_fmt(getattr(r, c)) for c in COLUMNS) for sid, r in samples]
    header = ("sample",) + HEADERS
    widths = [max(len(r[i]) for r in rows + [header]) for i in range(len(header))]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in rows]
    return "\n".join(lines) + "\n"


def format_csv(corpus: LqsReport, samples: Sequence[Tuple[int, LqsReport]] = ()) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("sample",) + HEADERS)
    for sid, r in [("corpus", corpus)] + list(samples):
        w.writerow([sid] + ["" if getattr(r, c) is None else repr(getattr(r, c)) for c in COLUMNS])
    return buf.getvalue()


def format_json(corpus: LqsReport, samples: Sequence[Tuple[int, LqsReport]] = ()) -> str:
    doc = {
        "columns": list(HEADERS),
        "corpus": corpus.as_dict(),
        "samples": [dict(id=sid, **r.as_dict()) for sid, r in samples],
    }
    return json.dumps(doc, indent=1) + "\n"


def format_report(fmt: str, corpus: LqsReport, samples: Sequence[Tuple[int, LqsReport]] = ()) -> str:
    if fmt not in FORMATS:
        raise ValueError(f"unknown report format {fmt!r}; choose from {FORMATS}")
    return {"table": format_table, "csv": format_csv, "json": format_json}[fmt](corpus, samples)
