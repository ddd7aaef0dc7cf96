"""Rule-based moving-object classification and driving-constraint selection."""
from __future__ import annotations

import logging
import math
from dataclasses import replace
from typing import Sequence

from ..scenario import (
    DYNAMICS,
    ClassifiedObject,
    DetectedBox3D,
    Frame,
    PlanningContext,
    RoadType,
    Scenario,
    speed_range,
)
from ..seeding import rng_for

log = logging.getLogger(__name__)

MOVING_SPEED = 0.5  # m/s
ASSOCIATION_RADIUS = 2.0  # m


def associate(points_a, points_b, radius: float = ASSOCIATION_RADIUS) -> dict[int, int]:
    """Greedy smallest-distance-first one-to-one matching within `radius`.

    Ties in distance resolve by (index in a, index in b), so the result does
    not depend on anything but the coordinates and their order.
    """
    pairs = []
    for i, (ax, ay) in enumerate(points_a):
        for j, (bx, by) in enumerate(points_b):
            d = math.hypot(ax - bx, ay - by)
            if d <= radius:
                pairs.append((d, i, j))
    pairs.sort()
    used_a, used_b, out = set(), set(), {}
    for _, i, j in pairs:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        out[i] = j
    return out


def classify_motion(
    boxes: Sequence[DetectedBox3D], frames: Sequence[Frame]
) -> list[ClassifiedObject]:
    """Label each box moving or static from its displacement across frames.

    Each box is associated to at most one center per frame. Velocity is the
    displacement between the earliest and latest associated frame positions
    over their time gap; boxes seen in fewer than two frames stay static.
    """
    if len(frames) < 2:
        if boxes:
            log.debug("fewer than two frames: %d boxes default to static", len(boxes))
        return [ClassifiedObject(b, False, (0.0, 0.0)) for b in boxes]
    frames = sorted(frames, key=lambda f: f.t)
    centers = [b.xy for b in boxes]
    tracks: list[list[tuple[float, tuple[float, float]]]] = [[] for _ in boxes]
    for fr in frames:
        for i, j in associate(centers, fr.centers).items():
            tracks[i].append((fr.t, fr.centers[j]))
    out = []
    for b, tr in zip(boxes, tracks):
        if len(tr) >= 2 and tr[-1][0] > tr[0][0]:
            (t0, p0), (t1, p1) = tr[0], tr[-1]
            vel = ((p1[0] - p0[0]) / (t1 - t0), (p1[1] - p0[1]) / (t1 - t0))
            if math.hypot(*vel) > MOVING_SPEED:
                out.append(ClassifiedObject(b, True, vel))
                continue
        out.append(ClassifiedObject(b, False, (0.0, 0.0)))
    return out


def select_constraints(s: Scenario, seed: int | None = None) -> PlanningContext:
    """Road-type speed range and dynamics; ego speed redrawn when a seed is given."""
    road = RoadType(s.road_type)
    lo, hi = speed_range(road)
    init = s.ego_context.initial_state
    if seed is not None:
        v = float(rng_for(seed, "ego-speed", s.id).uniform(lo, hi))
        init = replace(init, v=v)
    return PlanningContext(init, (lo, hi), DYNAMICS[road], road)

