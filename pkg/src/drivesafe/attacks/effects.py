"""Detection-level corruption models standing in for attack consequences.

Ghosts are static car-sized boxes flagged ``ghost=True`` so that AP counts
them as unmatched detections. Real objects pass through (possibly drifted)
and are never removed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np

from ..scenario import (
    CAR_DIMS,
    GOAL_DISTANCE,
    GOAL_HALF_LENGTH,
    ClassifiedObject,
    DetectedBox3D,
    Intention,
    Scenario,
    adjacent_lane,
    on_road,
)
from ..seeding import rng_for

GHOST_Z = CAR_DIMS[2] / 2.0
ROADSIDE_BAND = (1.0, 8.0)  # ghost center distance beyond the road edge, m
MAX_RANGE = 40.0
# longitudinal ghost range ahead of the ego: the whole visible road for random
# placement, the goal region's extent for specific placement
RANDOM_PATCH_RANGE = (6.0, 45.0)
SPECIFIC_PATCH_RANGE = (GOAL_DISTANCE - GOAL_HALF_LENGTH, GOAL_DISTANCE + GOAL_HALF_LENGTH)
DRIFT_YAW = math.radians(5.0)
DRIFT_SIGMA_REF = 0.2
SCORE_RANGE = (0.5, 1.0)

GHOST_LEVELS = (0, 2, 4, 6, 8)
DRIFT_LEVELS = (0.0, 0.05, 0.1, 0.15, 0.2)


class EffectKind(str, Enum):
    ROADSIDE_GHOSTS = "roadside-ghosts"
    ON_ROAD_PATCH_GHOST = "on-road-patch-ghost"
    BOX_DRIFT = "box-drift"


@dataclass(frozen=True)
class EffectModel:
    kind: EffectKind
    intensity: float
    placement: str = "random"  # on-road ghost region: "random" or "specific"
    intention: Intention | None = None
    seed: int = 0
    x_range: tuple[float, float] | None = None  # on-road ghost range override

    def __post_init__(self):
        object.__setattr__(self, "kind", EffectKind(self.kind))
        if not self.intensity >= 0:
            raise ValueError("intensity must be >= 0")
        if self.placement not in ("random", "specific"):
            raise ValueError("placement must be 'random' or 'specific'")
        if self.intention is not None:
            object.__setattr__(self, "intention", Intention(self.intention))
        if self.placement == "specific" and self.intention is None:
            raise ValueError("specific placement needs an intention")


def perturbation_effect(level: int, seed: int = 0) -> tuple[EffectModel, EffectModel]:
    """Roadside ghosts plus box drift at sweep level 0..4."""
    return (
        EffectModel(EffectKind.ROADSIDE_GHOSTS, GHOST_LEVELS[level], seed=seed),
        EffectModel(EffectKind.BOX_DRIFT, DRIFT_LEVELS[level], seed=seed),
    )


def _road_frame(s: Scenario):
    """Origin, heading and lateral extent of the (parallel, straight) lanes."""
    idx = s.ego_lane()
    ref = s.lanes[idx if idx is not None else 0]
    (x0, y0), (x1, y1) = ref.centerline[0], ref.centerline[-1]
    h = math.atan2(y1 - y0, x1 - x0)
    nx, ny = -math.sin(h), math.cos(h)
    lats = []
    for lane in s.lanes:
        lx, ly = lane.centerline[0]
        lat = (lx - x0) * nx + (ly - y0) * ny
        lats.append((lat - lane.width / 2.0, lat + lane.width / 2.0))
    lo = min(a for a, _ in lats)
    hi = max(b for _, b in lats)
    # longitudinal coordinate of the ego along the reference lane
    s0 = (s.ego.x - x0) * math.cos(h) + (s.ego.y - y0) * math.sin(h)
    return (x0, y0), h, (lo, hi), s0


def _point(origin, h, lon, lat):
    return (
        origin[0] + lon * math.cos(h) - lat * math.sin(h),
        origin[1] + lon * math.sin(h) + lat * math.cos(h),
    )


def _ghost(rng, xy, yaw) -> ClassifiedObject:
    score = float(rng.uniform(*SCORE_RANGE))
    box = DetectedBox3D((xy[0], xy[1], GHOST_Z), CAR_DIMS, yaw, "Car", score, ghost=True)
    return ClassifiedObject(box, False, (0.0, 0.0))


def _roadside(objects, s: Scenario, m: EffectModel, rng) -> list[ClassifiedObject]:
    n = int(rng.poisson(m.intensity))
    origin, h, (lo, hi), s0 = _road_frame(s)
    out = list(objects)
    for _ in range(n):
        for _attempt in range(100):
            lon = s0 + float(rng.uniform(0.0, MAX_RANGE))
            off = float(rng.uniform(*ROADSIDE_BAND))
            lat = hi + off if rng.random() < 0.5 else lo - off
            xy = _point(origin, h, lon, lat)
            if not on_road(s.lanes, *xy):
                out.append(_ghost(rng, xy, h))
                break
    return out


def _on_road(objects, s: Scenario, m: EffectModel, rng) -> list[ClassifiedObject]:
    out = list(objects)
    if rng.random() >= min(m.intensity, 1.0):
        return out
    origin, h, _, s0 = _road_frame(s)
    ego_idx = s.ego_lane()
    if m.placement == "specific":
        if ego_idx is None:
            return out
        lane_idx = adjacent_lane(s.lanes, ego_idx, m.intention.lane_offset)
        if lane_idx is None:
            return out
    else:
        lane_idx = int(rng.integers(len(s.lanes)))
    lane = s.lanes[lane_idx]
    ref = s.lanes[ego_idx if ego_idx is not None else 0]
    nx, ny = -math.sin(h), math.cos(h)
    lane_lat = (lane.centerline[0][0] - ref.centerline[0][0]) * nx + (
        lane.centerline[0][1] - ref.centerline[0][1]
    ) * ny
    slack = max(lane.width / 2.0 - CAR_DIMS[1] / 2.0, 0.0)
    span = m.x_range or (SPECIFIC_PATCH_RANGE if m.placement == "specific" else RANDOM_PATCH_RANGE)
    lon = s0 + float(rng.uniform(*span))
    lat = lane_lat + float(rng.uniform(-slack, slack))
    out.append(_ghost(rng, _point(origin, h, lon, lat), h))
    return out


def ghost_intention(scenario: Scenario, obj: ClassifiedObject) -> Intention | None:
    """Intention whose lane holds the object's center, relative to the ego lane."""
    ego_idx = scenario.ego_lane()
    if ego_idx is None:
        return None
    for it in Intention:
        idx = adjacent_lane(scenario.lanes, ego_idx, it.lane_offset)
        if idx is not None and scenario.lanes[idx].contains(*obj.box.xy):
            return it
    return None


def _drift(objects, m: EffectModel, rng) -> list[ClassifiedObject]:
    sigma = m.intensity
    yaw_amp = DRIFT_YAW * min(1.0, sigma / DRIFT_SIGMA_REF)
    out = []
    for o in objects:
        dx, dy = rng.normal(0.0, sigma, 2)
        dyaw = float(rng.uniform(-yaw_amp, yaw_amp))
        if o.box.ghost:
            out.append(o)
            continue
        b = o.box
        box = replace(b, center=(b.center[0] + dx, b.center[1] + dy, b.center[2]), yaw=b.yaw + dyaw)
        out.append(replace(o, box=box))
    return out


def inject_effect(
    objects: Sequence[ClassifiedObject],
    scenario: Scenario,
    model: EffectModel,
    rng: np.random.Generator | None = None,
) -> list[ClassifiedObject]:
    """Apply one corruption model; intensity 0 returns the input unchanged."""
    if model.intensity == 0:
        return list(objects)
    if rng is None:
        rng = rng_for(model.seed, "effect", model.kind.value, scenario.id)
    if model.kind is EffectKind.ROADSIDE_GHOSTS:
        return _roadside(objects, scenario, model, rng)
    if model.kind is EffectKind.ON_ROAD_PATCH_GHOST:
        return _on_road(objects, scenario, model, rng)
    return _drift(objects, model, rng)


def inject_effects(objects, scenario, models: Sequence[EffectModel]) -> list[ClassifiedObject]:
    out = list(objects)
    for m in models:
        out = inject_effect(out, scenario, m)
    return out
