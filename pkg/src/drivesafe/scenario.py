"""Domain types shared across the pipeline and scenario validation.

Frame convention: right-handed bird's-eye ego frame fixed at scenario start,
x forward, y left, z up, meters and radians throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

DT = 0.1
KMH = 1.0 / 3.6

CAR_DIMS = (4.0, 1.7, 1.5)
EGO_DIMS = (4.5, 1.8)
CLASS_LABELS = ("Car",)


class RoadType(str, Enum):
    STREET = "street"
    HIGHWAY = "highway"


class Intention(str, Enum):
    LEFT = "left"
    STRAIGHT = "straight"
    RIGHT = "right"

    @property
    def lane_offset(self) -> int:
        return {"left": 1, "straight": 0, "right": -1}[self.value]


INTENTIONS = (Intention.LEFT, Intention.STRAIGHT, Intention.RIGHT)

SPEED_RANGES_KMH = {
    RoadType.STREET: (22.0, 29.0),
    RoadType.HIGHWAY: (40.0, 47.0),
}


def speed_range(road_type: RoadType) -> tuple[float, float]:
    lo, hi = SPEED_RANGES_KMH[RoadType(road_type)]
    return lo * KMH, hi * KMH


def normalize_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


@dataclass(frozen=True)
class DetectedBox3D:
    center: tuple[float, float, float]
    dims: tuple[float, float, float]  # length, width, height
    yaw: float = 0.0
    class_label: str = "Car"
    score: float = 1.0
    ghost: bool = False  # provenance: injected by an attack, no real object behind it

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "dims", tuple(float(d) for d in self.dims))
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))
        object.__setattr__(self, "score", float(self.score))

    @property
    def xy(self) -> tuple[float, float]:
        return self.center[0], self.center[1]

    def violations(self, path: str = "box") -> list[str]:
        out = []
        if not all(math.isfinite(c) for c in self.center + self.dims + (self.yaw, self.score)):
            out.append(f"{path}: numeric fields finite")
        if not all(d > 0 for d in self.dims):
            out.append(f"{path}: dims strictly positive")
        if not 0.0 <= self.score <= 1.0:
            out.append(f"{path}: score in [0, 1]")
        if self.class_label not in CLASS_LABELS:
            out.append(f"{path}: class_label in {CLASS_LABELS}")
        return out


@dataclass(frozen=True)
class ClassifiedObject:
    box: DetectedBox3D
    is_moving: bool = False
    velocity: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "velocity", (float(self.velocity[0]), float(self.velocity[1])))

    @property
    def speed(self) -> float:
        return math.hypot(*self.velocity)


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    v: float
    phi: float = 0.0
    omega: float = 0.0  # steering angle

    @property
    def p(self) -> tuple[float, float]:
        return self.x, self.y


@dataclass(frozen=True)
class DynamicsLimits:
    a_max: float
    jerk_max: float
    omega_max: float
    omega_rate_max: float

    def violations(self, path: str = "dynamics") -> list[str]:
        if all(v > 0 for v in (self.a_max, self.jerk_max, self.omega_max, self.omega_rate_max)):
            return []
        return [f"{path}: limits strictly positive"]


DYNAMICS = {
    RoadType.STREET: DynamicsLimits(a_max=1.5, jerk_max=3.0, omega_max=0.4, omega_rate_max=0.2),
    RoadType.HIGHWAY: DynamicsLimits(a_max=1.5, jerk_max=3.0, omega_max=0.2, omega_rate_max=0.15),
}


@dataclass(frozen=True)
class PlanningContext:
    initial_state: VehicleState
    speed_range: tuple[float, float]
    dynamics: DynamicsLimits
    road_type: RoadType

    @property
    def primitive_set(self) -> str:
        return RoadType(self.road_type).value


@dataclass(frozen=True)
class Lane:
    centerline: tuple[tuple[float, float], ...]
    width: float

    def __post_init__(self):
        object.__setattr__(
            self, "centerline", tuple((float(x), float(y)) for x, y in self.centerline)
        )

    def frenet(self, x: float, y: float) -> tuple[float, float] | None:
        """(arc length, signed lateral offset) of the nearest perpendicular foot.

        Returns None when no segment has a perpendicular foot for the point,
        i.e. the point lies beyond the lane's end caps.
        """
        best = None
        s0 = 0.0
        pts = self.centerline
        for (ax, ay), (bx, by) in zip(pts[:-1], pts[1:]):
            dx, dy = bx - ax, by - ay
            seg = math.hypot(dx, dy)
            if seg == 0.0:
                continue
            t = ((x - ax) * dx + (y - ay) * dy) / (seg * seg)
            if -1e-12 <= t <= 1.0 + 1e-12:
                lat = (dx * (y - ay) - dy * (x - ax)) / seg
                if best is None or abs(lat) < abs(best[1]):
                    best = (s0 + t * seg, lat)
            s0 += seg
        return best

    def contains(self, x: float, y: float) -> bool:
        f = self.frenet(x, y)
        return f is not None and abs(f[1]) <= self.width / 2.0

    def polygon(self) -> list[tuple[float, float]]:
        """Boundary polygon (left edge forward, right edge backward)."""
        pts = self.centerline
        h = self.width / 2.0
        left, right = [], []
        for i, (x, y) in enumerate(pts):
            a = pts[max(i - 1, 0)]
            b = pts[min(i + 1, len(pts) - 1)]
            dx, dy = b[0] - a[0], b[1] - a[1]
            n = math.hypot(dx, dy)
            nx, ny = -dy / n, dx / n
            left.append((x + h * nx, y + h * ny))
            right.append((x - h * nx, y - h * ny))
        return left + right[::-1]

    def direction_at(self, x: float, y: float) -> float:
        pts = self.centerline
        best, heading = None, 0.0
        for (ax, ay), (bx, by) in zip(pts[:-1], pts[1:]):
            d = _point_segment_distance(x, y, ax, ay, bx, by)
            if best is None or d < best:
                best, heading = d, math.atan2(by - ay, bx - ax)
        return heading


def _point_segment_distance(px, py, ax, ay, bx, by) -> float:
    dx, dy = bx - ax, by - ay
    denom = dx * dx + dy * dy
    t = 0.0 if denom == 0 else max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / denom))
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


def on_road(lanes: Sequence[Lane], x: float, y: float) -> bool:
    return any(lane.contains(x, y) for lane in lanes)


def lane_index_at(lanes: Sequence[Lane], x: float, y: float) -> int | None:
    for i, lane in enumerate(lanes):
        if lane.contains(x, y):
            return i
    return None


def adjacent_lane(lanes: Sequence[Lane], index: int, offset: int) -> int | None:
    """Lane whose centerline sits `offset` lane-widths to the left of lane `index`.

    Lanes are parallel; adjacency is resolved geometrically from the lateral
    offset of each centerline start point rather than from list order.
    """
    if offset == 0:
        return index
    ref = lanes[index]
    x0, y0 = ref.centerline[0]
    heading = ref.direction_at(x0, y0)
    nx, ny = -math.sin(heading), math.cos(heading)
    candidates = []
    for j, lane in enumerate(lanes):
        if j == index:
            continue
        lx, ly = lane.centerline[0]
        lat = (lx - x0) * nx + (ly - y0) * ny
        expected = offset * (ref.width + lane.width) / 2.0
        if abs(lat - expected) < 0.25 * min(ref.width, lane.width):
            candidates.append((abs(lat - expected), j))
    return min(candidates)[1] if candidates else None


@dataclass(frozen=True)
class GoalRegion:
    center: tuple[float, float]
    half_extent: tuple[float, float]  # longitudinal, lateral
    intention: Intention
    heading: float = 0.0
    lane_missing: bool = False  # the intention lane does not exist

    def local(self, x: float, y: float) -> tuple[float, float]:
        c, s = math.cos(self.heading), math.sin(self.heading)
        dx, dy = x - self.center[0], y - self.center[1]
        return c * dx + s * dy, -s * dx + c * dy

    def contains(self, x: float, y: float) -> bool:
        lon, lat = self.local(x, y)
        return abs(lon) <= self.half_extent[0] and abs(lat) <= self.half_extent[1]

    def distance(self, x: float, y: float) -> float:
        lon, lat = self.local(x, y)
        return math.hypot(
            max(abs(lon) - self.half_extent[0], 0.0), max(abs(lat) - self.half_extent[1], 0.0)
        )


GOAL_DISTANCE = 15.0
GOAL_HALF_LENGTH = 5.0


@dataclass(frozen=True)
class Frame:
    """Object centers observed at time t (seconds, relative to the detection frame)."""

    t: float
    centers: tuple[tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "centers", tuple((float(x), float(y)) for x, y in self.centers))


@dataclass(frozen=True)
class Scenario:
    id: str
    road_type: RoadType
    lanes: tuple[Lane, ...]
    ego_context: PlanningContext
    objects: tuple[ClassifiedObject, ...] = ()
    frames: tuple[Frame, ...] = ()
    camera_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "road_type", RoadType(self.road_type))
        object.__setattr__(self, "lanes", tuple(self.lanes))
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "frames", tuple(self.frames))

    @property
    def ego(self) -> VehicleState:
        return self.ego_context.initial_state

    @property
    def ground_truth_boxes(self) -> list[DetectedBox3D]:
        return [o.box for o in self.objects]

    def ego_lane(self) -> int | None:
        return lane_index_at(self.lanes, self.ego.x, self.ego.y)


@dataclass(frozen=True)
class Trajectory:
    states: tuple[VehicleState, ...]
    dt: float = DT

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))

    def __len__(self):
        return len(self.states)

    @property
    def duration(self) -> float:
        return (len(self.states) - 1) * self.dt

    def violations(self, ctx: PlanningContext, tol: float = 1e-6) -> list[str]:
        out = []
        lo, hi = ctx.speed_range
        d = ctx.dynamics
        for i, s in enumerate(self.states):
            if not lo - tol <= s.v <= hi + tol:
                out.append(f"states[{i}]: speed within speed_range")
            if abs(s.omega) > d.omega_max + tol:
                out.append(f"states[{i}]: |omega| <= omega_max")
        for i, (a, b) in enumerate(zip(self.states[:-1], self.states[1:])):
            if abs(b.v - a.v) / self.dt > d.a_max + tol:
                out.append(f"states[{i + 1}]: |acceleration| <= a_max")
            if abs(b.omega - a.omega) / self.dt > d.omega_rate_max + tol:
                out.append(f"states[{i + 1}]: |steering rate| <= omega_rate_max")
        return out


def goal_region(scenario: Scenario, intention: Intention | str) -> GoalRegion:
    """Goal 15 m ahead of the ego position in the lane selected by intention.

    When the selected lane does not exist the region is still placed one lane
    width over; it then lies off the drivable area and planning fails, which
    is how a missing target lane shows up in the success rate.
    """
    intention = Intention(intention)
    ego = scenario.ego
    idx = scenario.ego_lane()
    lane = scenario.lanes[idx] if idx is not None else scenario.lanes[0]
    heading = lane.direction_at(ego.x, ego.y)
    f = lane.frenet(ego.x, ego.y) or (0.0, 0.0)
    # start from the ego lane centerline abreast of the ego vehicle
    nx, ny = -math.sin(heading), math.cos(heading)
    base_x, base_y = ego.x - f[1] * nx, ego.y - f[1] * ny
    target = adjacent_lane(scenario.lanes, idx, intention.lane_offset) if idx is not None else None
    if target is not None:
        tl = scenario.lanes[target]
        lx, ly = tl.centerline[0]
        lat = (lx - base_x) * nx + (ly - base_y) * ny
        width = tl.width
    else:
        lat = intention.lane_offset * lane.width
        width = lane.width
    cx = base_x + GOAL_DISTANCE * math.cos(heading) + lat * nx
    cy = base_y + GOAL_DISTANCE * math.sin(heading) + lat * ny
    return GoalRegion(
        center=(cx, cy),
        half_extent=(GOAL_HALF_LENGTH, width / 2.0),
        intention=intention,
        heading=heading,
        lane_missing=target is None,
    )


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[str, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_scenario(s: Scenario) -> ValidationResult:
    """Collect every violated invariant; never raises for malformed content."""
    v: list[str] = []
    if not s.lanes:
        v.append("lanes: at least one lane")
    for i, lane in enumerate(s.lanes):
        if not lane.width > 0:
            v.append(f"lanes[{i}].width: lane widths positive")
        if len(lane.centerline) < 2:
            v.append(f"lanes[{i}].centerline: at least two points")
    ctx = s.ego_context
    ego = ctx.initial_state
    lo, hi = ctx.speed_range
    if not lo <= hi:
        v.append("ego_context.speed_range: min <= max")
    if not ego.v >= 0:
        v.append("ego.v: speed non-negative")
    v.extend(ctx.dynamics.violations("ego_context.dynamics"))
    if abs(ego.omega) > ctx.dynamics.omega_max:
        v.append("ego.omega: |omega| <= omega_max")
    lanes_ok = all(l.width > 0 and len(l.centerline) >= 2 for l in s.lanes)
    if s.lanes and lanes_ok and not on_road(s.lanes, ego.x, ego.y):
        v.append("ego: ego within lane")
    vmax = speed_range(s.road_type)[1]
    for i, obj in enumerate(s.objects):
        v.extend(obj.box.violations(f"objects[{i}].box"))
        if not obj.is_moving and obj.velocity != (0.0, 0.0):
            v.append(f"objects[{i}]: static object has zero velocity")
        if obj.speed > vmax + 1e-9:
            v.append(f"objects[{i}]: velocity respects road-type limit")
    for i, fr in enumerate(s.frames):
        if not math.isfinite(fr.t):
            v.append(f"frames[{i}].t: finite timestamp")
    return ValidationResult(tuple(v))
