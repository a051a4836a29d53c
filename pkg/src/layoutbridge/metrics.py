"""Layout Quality Score: label recall/precision, location and area consistency.

Layouts are expected in the canonical 256x256 frame. Conventions for
degenerate inputs:

* empty gt and empty prediction score LR = LP = 1; an empty side alone
  scores 1 on the rate whose denominator vanishes and 0 on the other;
* no matched pairs: LC = AC = 0 and ALC/RLC/AAC/RAC are absent (``None``);
* a single matched pair: RLC = 0 and RAC = 1.
"""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import GridSpec, Layout, bbox_area, bbox_center
from .matching import solve_assignment

COLUMNS = ("lr", "lp", "alc", "rlc", "lc", "aac", "rac", "ac", "lqs")


@dataclass(frozen=True)
class MetricParams:
    gamma_lc: float = 0.25
    gamma_ac: float = 0.25
    smoothing: float = 80.0
    max_exhaustive: int = 6

    def __post_init__(self) -> None:
        if not (0.0 <= self.gamma_lc <= 1.0 and 0.0 <= self.gamma_ac <= 1.0):
            raise ValueError("gamma_lc and gamma_ac must lie in [0, 1]")
        if not self.smoothing > 0:
            raise ValueError("smoothing must be positive")
        if self.max_exhaustive < 1:
            raise ValueError("max_exhaustive must be >= 1")


@dataclass(frozen=True)
class MatchResult:
    """Same-category pairs of ``(gt index, pred index)``, sorted by gt index."""

    gt: Layout
    pred: Layout
    pairs: Tuple[Tuple[int, int], ...]
    unmatched_gt: Tuple[int, ...]
    unmatched_pred: Tuple[int, ...]

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class LqsReport:
    lr: float
    lp: float
    alc: Optional[float]
    rlc: Optional[float]
    lc: float
    aac: Optional[float]
    rac: Optional[float]
    ac: float
    lqs: float
    n_pairs: int = field(default=0, compare=False)

    def as_dict(self) -> Dict[str, Optional[float]]:
        d = asdict(self)
        d.pop("n_pairs")
        return d


def multiset_label_scores(gt: Layout, pred: Layout) -> Tuple[float, float]:
    """(LR, LP) with multiset intersection of category labels."""
    n_gt, n_pred = len(gt), len(pred)
    cg, cp = Counter(gt.categories), Counter(pred.categories)
    inter = sum(min(n, cp[c]) for c, n in cg.items())
    lr = inter / n_gt if n_gt else 1.0
    lp = inter / n_pred if n_pred else 1.0
    if n_gt == 0 and n_pred > 0:
        lp = 0.0
    if n_pred == 0 and n_gt > 0:
        lr = 0.0
    return lr, lp


def _center_distance(a, b) -> float:
    (ax, ay), (bx, by) = bbox_center(a), bbox_center(b)
    return math.hypot(ax - bx, ay - by)


def match_objects(gt: Layout, pred: Layout, params: MetricParams = MetricParams()) -> MatchResult:
    """Pair same-category objects so the summed center distance is minimal."""
    by_cat_gt: Dict[int, List[int]] = defaultdict(list)
    by_cat_pred: Dict[int, List[int]] = defaultdict(list)
    for i, o in enumerate(gt.objects):
        by_cat_gt[o.category].append(i)
    for j, o in enumerate(pred.objects):
        by_cat_pred[o.category].append(j)

    pairs: List[Tuple[int, int]] = []
    for c in sorted(set(by_cat_gt) & set(by_cat_pred)):
        gi, pj = by_cat_gt[c], by_cat_pred[c]
        cost = np.array(
            [[_center_distance(gt.objects[i].bbox, pred.objects[j].bbox) for j in pj] for i in gi],
            dtype=float,
        )
        for a, b in solve_assignment(cost, params.max_exhaustive):
            pairs.append((gi[a], pj[b]))
    pairs.sort()
    used_gt = {i for i, _ in pairs}
    used_pred = {j for _, j in pairs}
    return MatchResult(
        gt=gt,
        pred=pred,
        pairs=tuple(pairs),
        unmatched_gt=tuple(i for i in range(len(gt)) if i not in used_gt),
        unmatched_pred=tuple(j for j in range(len(pred)) if j not in used_pred),
    )


def _matched_arrays(match: MatchResult):
    g = np.array([bbox_center(match.gt.objects[i].bbox) for i, _ in match.pairs], dtype=float).reshape(-1, 2)
    p = np.array([bbox_center(match.pred.objects[j].bbox) for _, j in match.pairs], dtype=float).reshape(-1, 2)
    return g, p


def location_consistency(
    match: MatchResult, params: MetricParams = MetricParams()
) -> Tuple[Optional[float], Optional[float], float]:
    """(ALC, RLC, LC). The kernel is exp(-d / (2 * smoothing)) on raw distances."""
    n = len(match)
    if n == 0:
        return None, None, 0.0
    g, p = _matched_arrays(match)
    alc = math.fsum(np.hypot(*(g - p).T).tolist()) / n
    if n == 1:
        rlc = 0.0
    else:
        rel_g = g[:, None, :] - g[None, :, :]
        rel_p = p[:, None, :] - p[None, :, :]
        d = np.hypot(*(rel_g - rel_p).transpose(2, 0, 1))
        off = ~np.eye(n, dtype=bool)
        rlc = math.fsum(d[off].tolist()) / (n * (n - 1))
    return alc, rlc, combine_location(alc, rlc, params.gamma_lc, params.smoothing)


def combine_area(aac: float, rac: float, gamma_ac: float = 0.25) -> float:
    return gamma_ac * aac + (1.0 - gamma_ac) * rac


def combine_location(alc: float, rlc: float, gamma_lc: float = 0.25, smoothing: float = 80.0) -> float:
    denom = 2.0 * smoothing
    return gamma_lc * math.exp(-alc / denom) + (1.0 - gamma_lc) * math.exp(-rlc / denom)


def area_consistency(
    match: MatchResult, gridspec: GridSpec = GridSpec(), params: MetricParams = MetricParams()
) -> Tuple[Optional[float], Optional[float], float]:
    """(AAC, RAC, AC); absolute area error is normalised by the frame area."""
    n = len(match)
    if n == 0:
        return None, None, 0.0
    u = np.array([bbox_area(match.gt.objects[i].bbox) for i, _ in match.pairs], dtype=float)
    uh = np.array([bbox_area(match.pred.objects[j].bbox) for _, j in match.pairs], dtype=float)
    aac = 1.0 - math.fsum((np.abs(uh - u) / gridspec.u_s).tolist()) / n
    if n == 1:
        rac = 1.0
    else:
        bigger = (u[:, None] > u[None, :]).astype(int)
        bigger_h = (uh[:, None] > uh[None, :]).astype(int)
        agree = 1 - np.abs(bigger - bigger_h)
        off = ~np.eye(n, dtype=bool)
        rac = int(agree[off].sum()) / (n * (n - 1))
    return aac, rac, combine_area(aac, rac, params.gamma_ac)


def layout_quality_score(
    gt: Layout,
    pred: Layout,
    params: MetricParams = MetricParams(),
    gridspec: GridSpec | None = None,
) -> LqsReport:
    if gridspec is None:
        gridspec = GridSpec(frame=gt.frame)
    lr, lp = multiset_label_scores(gt, pred)
    match = match_objects(gt, pred, params)
    alc, rlc, lc = location_consistency(match, params)
    aac, rac, ac = area_consistency(match, gridspec, params)
    return LqsReport(lr, lp, alc, rlc, lc, aac, rac, ac, lr + lp + lc + ac, n_pairs=len(match))


def _mean_defined(values: Sequence[Optional[float]]) -> Optional[float]:
    vals = [v for v in values if v is not None]
    return math.fsum(vals) / len(vals) if vals else None


def aggregate_reports(reports: Sequence[LqsReport]) -> LqsReport:
    """Per-sample-then-average corpus report.

    Sums are correctly rounded, so the result does not depend on report order.
    ALC/RLC/AAC/RAC average over samples where they are defined; LC, AC and
    LQS average over all samples (samples without pairs contribute 0).
    """
    reports = list(reports)
    if not reports:
        raise ValueError("cannot aggregate an empty sequence of reports")
    agg = {name: _mean_defined([getattr(r, name) for r in reports]) for name in COLUMNS}
    return LqsReport(**agg, n_pairs=sum(r.n_pairs for r in reports))
