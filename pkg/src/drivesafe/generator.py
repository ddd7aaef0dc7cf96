"""Synthetic multi-lane scenario suite."""
from __future__ import annotations

import math

import numpy as np

from .scenario import (
    CAR_DIMS,
    DYNAMICS,
    ClassifiedObject,
    DetectedBox3D,
    Frame,
    Lane,
    PlanningContext,
    RoadType,
    Scenario,
    VehicleState,
    speed_range,
)
from .seeding import rng_for

LANE_WIDTH = 3.5
LANE_START, LANE_END = -30.0, 90.0
OBJECT_X = (6.0, 45.0)
LATERAL_JITTER = 0.25
MIN_GAP = 2.5  # bumper-to-bumper, same lateral slot
MOVING_FRACTION = 0.4
MAX_OBJECTS = 6
FRAME_DT = 0.1
MOVING_SPEED_FACTOR = (0.6, 1.0)  # of the road-type speed range bounds


def _slot_ok(placed, slot, x) -> bool:
    return all(s != slot or abs(x - px) >= CAR_DIMS[0] + MIN_GAP for s, px in placed)


def make_scenario(seed: int, index: int, road_mix: float = 0.5) -> Scenario:
    """Scenario number `index` of the suite drawn with `seed`.

    The ego sits at the origin on its lane's centerline, heading +x. Lateral
    slots are lane centers plus one shoulder slot per side; static cars go
    either into a lane (stalled) or onto a shoulder (parked), moving cars
    into lanes with lane-aligned velocity.
    """
    rng = rng_for(seed, "scenario", index)
    road = RoadType.STREET if rng.random() < road_mix else RoadType.HIGHWAY
    n_lanes = int(rng.integers(2, 4))
    ego_lane = int(rng.integers(n_lanes))
    ys = [(k - ego_lane) * LANE_WIDTH for k in range(n_lanes)]
    lanes = tuple(Lane(((LANE_START, y), (LANE_END, y)), LANE_WIDTH) for y in ys)
    lo, hi = speed_range(road)
    ego = VehicleState(0.0, 0.0, float(rng.uniform(lo, hi)), 0.0, 0.0)
    ctx = PlanningContext(ego, (lo, hi), DYNAMICS[road], road)

    shoulders = (ys[0] - LANE_WIDTH, ys[-1] + LANE_WIDTH)
    objects, placed = [], []
    for _ in range(int(rng.integers(0, MAX_OBJECTS + 1))):
        moving = rng.random() < MOVING_FRACTION
        for _attempt in range(20):
            if moving or rng.random() < 0.5:
                slot = int(rng.integers(n_lanes))
                y = ys[slot]
            else:
                slot = -1 if rng.random() < 0.5 else n_lanes
                y = shoulders[0] if slot < 0 else shoulders[1]
            x = float(rng.uniform(*OBJECT_X))
            if _slot_ok(placed, slot, x):
                break
        else:
            continue
        y += float(rng.uniform(-LATERAL_JITTER, LATERAL_JITTER))
        placed.append((slot, x))
        vx = float(rng.uniform(MOVING_SPEED_FACTOR[0] * lo, MOVING_SPEED_FACTOR[1] * hi)) if moving else 0.0
        box = DetectedBox3D((x, y, CAR_DIMS[2] / 2.0), CAR_DIMS, 0.0, "Car", 1.0)
        objects.append(ClassifiedObject(box, moving, (vx, 0.0)))
    frames = tuple(
        Frame(t, tuple((o.box.center[0] + o.velocity[0] * t, o.box.center[1]) for o in objects))
        for t in (-FRAME_DT, FRAME_DT)
    )
    return Scenario(f"s{seed}-{index:05d}", road, lanes, ctx, tuple(objects), frames)


def generate_suite(seed: int, n: int, road_mix: float = 0.5) -> list[Scenario]:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= road_mix <= 1.0:
        raise ValueError("road_mix must be in [0, 1]")
    return [make_scenario(seed, i, road_mix) for i in range(n)]
