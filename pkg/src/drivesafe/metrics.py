"""Driving-safety rates and distance-banded 3D average precision."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

from .collision import OrientedRect
from .scenario import DetectedBox3D, Intention


class EmptyDataset(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioOutcome:
    scenario_id: str
    intention: Intention
    planned: bool
    collided: bool
    error: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "intention", Intention(self.intention))
        if self.collided and not self.planned:
            raise ValueError("collided outcome must be planned")


class SafetyMetrics(NamedTuple):
    m_suc: float
    m_cls: float | None  # None when nothing was planned
    m_saf: float
    k_dts: int
    k_trj: int
    k_cls: int


def safety_metrics(outcomes: Sequence[ScenarioOutcome]) -> SafetyMetrics:
    k_dts = len(outcomes)
    if k_dts == 0:
        raise EmptyDataset("no outcomes")
    k_trj = sum(1 for o in outcomes if o.planned)
    k_cls = sum(1 for o in outcomes if o.collided)
    m_cls = k_cls / k_trj if k_trj else None
    return SafetyMetrics(k_trj / k_dts, m_cls, (k_trj - k_cls) / k_dts, k_dts, k_trj, k_cls)


# --- geometry -------------------------------------------------------------


def _clip(subject: list, a, b) -> list:
    """Keep the part of a convex polygon left of the directed edge a->b."""
    out = []
    ex, ey = b[0] - a[0], b[1] - a[1]

    def side(p):
        return ex * (p[1] - a[1]) - ey * (p[0] - a[0])

    n = len(subject)
    for i in range(n):
        p, q = subject[i], subject[(i + 1) % n]
        sp, sq = side(p), side(q)
        if sp >= 0:
            out.append(p)
        if (sp >= 0) != (sq >= 0):
            t = sp / (sp - sq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def _area(poly) -> float:
    if len(poly) < 3:
        return 0.0
    s = 0.0
    for (x0, y0), (x1, y1) in zip(poly, poly[1:] + poly[:1]):
        s += x0 * y1 - x1 * y0
    return abs(s) / 2.0


def bev_intersection(a: DetectedBox3D, b: DetectedBox3D) -> float:
    pa = [tuple(p) for p in OrientedRect.from_box(a).corners()]
    pb = [tuple(p) for p in OrientedRect.from_box(b).corners()]
    poly = pa
    for i in range(4):
        poly = _clip(poly, pb[i], pb[(i + 1) % 4])
        if not poly:
            return 0.0
    return _area(poly)


def iou_3d(a: DetectedBox3D, b: DetectedBox3D) -> float:
    za0, za1 = a.center[2] - a.dims[2] / 2.0, a.center[2] + a.dims[2] / 2.0
    zb0, zb1 = b.center[2] - b.dims[2] / 2.0, b.center[2] + b.dims[2] / 2.0
    dz = min(za1, zb1) - max(za0, zb0)
    if dz <= 0:
        return 0.0
    inter = bev_intersection(a, b) * dz
    if inter <= 0:
        return 0.0
    va = a.dims[0] * a.dims[1] * a.dims[2]
    vb = b.dims[0] * b.dims[1] * b.dims[2]
    return min(1.0, inter / (va + vb - inter))


# --- average precision ----------------------------------------------------


class Difficulty(str, Enum):
    EASY = "easy"
    MODERATE = "moderate"
    HARD = "hard"

    @property
    def max_range(self) -> float:
        return {"easy": 15.0, "moderate": 30.0, "hard": 50.0}[self.value]


def _range(b: DetectedBox3D) -> float:
    return math.hypot(b.center[0], b.center[1])


def iou_matrix(dets: Sequence[DetectedBox3D], gts: Sequence[DetectedBox3D]) -> np.ndarray:
    m = np.zeros((len(dets), len(gts)))
    for i, d in enumerate(dets):
        rd = math.hypot(d.dims[0], d.dims[1]) / 2.0
        for j, g in enumerate(gts):
            rg = math.hypot(g.dims[0], g.dims[1]) / 2.0
            if math.hypot(d.center[0] - g.center[0], d.center[1] - g.center[1]) < rd + rg:
                m[i, j] = iou_3d(d, g)
    return m


def match_detections(dets, gts, iou_thr: float, difficulty: Difficulty, iou: np.ndarray | None = None):
    """Greedy matching in descending score.

    Returns (scores, is_tp) for the detections that count, plus the number of
    in-band ground truths. A detection first tries the in-band ground truths;
    failing that, a detection matching an out-of-band ground truth, or one
    whose own center lies outside the band, is ignored.
    """
    difficulty = Difficulty(difficulty)
    rmax = difficulty.max_range
    if iou is None:
        iou = iou_matrix(dets, gts)
    valid = [_range(g) <= rmax for g in gts]
    used = [False] * len(gts)
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    scores, tp = [], []
    for i in order:
        d = dets[i]
        best, best_j = -1.0, None
        for want_valid in (True, False):
            for j in range(len(gts)):
                if used[j] or valid[j] != want_valid:
                    continue
                v = iou[i, j]
                if v >= iou_thr and v > best:
                    best, best_j = v, j
            if best_j is not None:
                break
        if best_j is not None:
            used[best_j] = True
            if valid[best_j]:
                scores.append(d.score)
                tp.append(True)
            continue
        if _range(d) > rmax:
            continue
        scores.append(d.score)
        tp.append(False)
    return scores, tp, sum(valid)


def eleven_point_ap(scores: Sequence[float], tp: Sequence[bool], n_gt: int) -> float:
    if n_gt == 0:
        raise ValueError("no ground truth")
    if not scores:
        return 0.0
    order = np.argsort(-np.asarray(scores, float), kind="stable")
    hits = np.asarray(tp, bool)[order]
    ctp = np.cumsum(hits)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(hits) + 1)
    total = 0.0
    for r in np.linspace(0.0, 1.0, 11):
        m = precision[recall >= r - 1e-12]
        total += m.max() if m.size else 0.0
    return total / 11.0


def average_precision(
    dets: Sequence[DetectedBox3D],
    gts: Sequence[DetectedBox3D],
    iou_thr: float = 0.7,
    difficulty: Difficulty | str = Difficulty.MODERATE,
) -> float | None:
    """11-point AP; None when no ground truth falls in the difficulty band."""
    scores, tp, n = match_detections(dets, gts, iou_thr, Difficulty(difficulty))
    if n == 0:
        return None
    return eleven_point_ap(scores, tp, n)


def pooled_average_precision(
    frames: Sequence[tuple[Sequence[DetectedBox3D], Sequence[DetectedBox3D]]],
    iou_thr: float = 0.7,
    difficulty: Difficulty | str = Difficulty.MODERATE,
) -> float | None:
    """Match per frame, then rank every counted detection of the dataset together."""
    scores, tp, n = [], [], 0
    for dets, gts in frames:
        s, t, k = match_detections(dets, gts, iou_thr, Difficulty(difficulty))
        scores += s
        tp += t
        n += k
    if n == 0:
        return None
    return eleven_point_ap(scores, tp, n)


# --- report ---------------------------------------------------------------


@dataclass(frozen=True)
class ReportRow:
    intention: Intention
    setting: str
    m_suc: float
    m_cls: float | None
    m_saf: float
    k_dts: int
    k_trj: int
    k_cls: int
    ap_easy: float | None = None
    ap_moderate: float | None = None
    ap_hard: float | None = None
    errors: int = 0

    def __post_init__(self):
        object.__setattr__(self, "intention", Intention(self.intention))
        if not self.k_cls <= self.k_trj <= self.k_dts:
            raise ValueError("counts must satisfy k_cls <= k_trj <= k_dts")
        m_cls = self.m_cls if self.m_cls is not None else 0.0
        assert abs(self.m_saf - (1.0 - m_cls) * self.m_suc) < 1e-12, "m_saf identity violated"

    @classmethod
    def from_outcomes(cls, intention, setting, outcomes, ap=(None, None, None)) -> "ReportRow":
        m = safety_metrics(outcomes)
        errors = sum(1 for o in outcomes if o.error)
        return cls(intention, setting, m.m_suc, m.m_cls, m.m_saf, m.k_dts, m.k_trj, m.k_cls, *ap, errors)


@dataclass
class MetricsReport:
    rows: list[ReportRow] = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def settings(self) -> list[str]:
        seen: dict[str, None] = {}
        for r in self.rows:
            seen.setdefault(r.setting, None)
        return list(seen)

    def get(self, intention, setting) -> ReportRow:
        intention = Intention(intention)
        for r in self.rows:
            if r.intention is intention and r.setting == setting:
                return r
        raise KeyError((intention, setting))

    def sorted_rows(self) -> list[ReportRow]:
        """Rows ordered by intention (left, straight, right), then setting insertion order."""
        rank = {s: i for i, s in enumerate(self.settings())}
        order = {i: k for k, i in enumerate(Intention)}
        return sorted(self.rows, key=lambda r: (order[r.intention], rank[r.setting]))
