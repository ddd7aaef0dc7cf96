"""Search over sampled motion primitives (A*, greedy best-first).

A node is a vehicle state at a time index. Successors apply each primitive
for its full duration under a kinematic bicycle model; every intermediate
dt step is checked for speed limits, drivable area and contact with the
predicted obstacles. A primitive that enters the goal region (with heading
inside the tolerance) yields a goal node whose trajectory stops at the
first entering step.
"""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .collision import ObstacleSet
from .scenario import (
    DT,
    EGO_DIMS,
    ClassifiedObject,
    GoalRegion,
    Lane,
    PlanningContext,
    Trajectory,
    VehicleState,
)

WHEELBASE = 2.7
PRIMITIVE_DURATION = 1.0
HORIZON = 8.0
HEADING_TOL = math.radians(15.0)
SPEED_TOL = 1e-9


class Algo(str, Enum):
    ASTAR = "astar"
    GBFS = "gbfs"


@dataclass(frozen=True)
class MotionPrimitive:
    id: int
    duration: float
    accel: float
    steer_rate: float

    @property
    def steps(self) -> int:
        return int(round(self.duration / DT))


@dataclass(frozen=True)
class CostFunction:
    w_time: float = 1.0
    w_lateral: float = 0.2
    w_steer: float = 0.1

    def __post_init__(self):
        ws = (self.w_time, self.w_lateral, self.w_steer)
        if min(ws) < 0 or max(ws) <= 0:
            raise ValueError("cost weights must be >= 0 with at least one positive")


@dataclass(frozen=True)
class PlanResult:
    success: bool
    trajectory: Trajectory | None
    expanded_nodes: int
    cost: float | None = None
    primitive_ids: tuple[int, ...] = ()

    @property
    def status(self) -> str:
        return "success" if self.success else "no_trajectory"


def generate_primitives(ctx: PlanningContext) -> list[MotionPrimitive]:
    """Acceleration x steering-rate cross product for the context's road type.

    Primitives whose end speed from the context's initial speed leaves
    [0, speed_max] are dropped; per-step speed limits are enforced again
    during search for every state actually reached.
    """
    a = ctx.dynamics.a_max
    w = ctx.dynamics.omega_rate_max
    v0 = ctx.initial_state.v
    vmax = ctx.speed_range[1]
    out = []
    pid = 0
    for acc in (-a, 0.0, a / 2.0):
        for rate in (-w, -w / 2.0, 0.0, w / 2.0, w):
            end_v = v0 + acc * PRIMITIVE_DURATION
            if -SPEED_TOL <= end_v <= vmax + SPEED_TOL:
                out.append(MotionPrimitive(pid, PRIMITIVE_DURATION, acc, rate))
            pid += 1
    return out


def rollout(state, accel, steer_rate, steps: int, omega_max: float):
    """Forward-Euler bicycle integration for a batch of controls.

    state: (x, y, phi, v, omega); accel, steer_rate: (P,) arrays.
    Returns arrays x, y, phi, v, omega of shape (P, steps) holding the
    states after each dt step (the initial state is not included).
    """
    accel = np.asarray(accel, float)
    steer_rate = np.asarray(steer_rate, float)
    p = accel.shape[0]

    def seq(first, incr):
        # cumulative sum with the start value leading, so rounding matches x += dx
        a = np.empty((p, steps + 1))
        a[:, 0] = first
        a[:, 1:] = incr
        return np.cumsum(a, axis=1)

    v = seq(state[3], np.repeat((accel * DT)[:, None], steps, 1))
    om = np.clip(seq(state[4], np.repeat((steer_rate * DT)[:, None], steps, 1)), -omega_max, omega_max)
    om[:, 0] = state[4]
    phi = seq(state[2], v[:, :-1] * np.tan(om[:, :-1]) / WHEELBASE * DT)
    x = seq(state[0], v[:, :-1] * np.cos(phi[:, :-1]) * DT)
    y = seq(state[1], v[:, :-1] * np.sin(phi[:, :-1]) * DT)
    return np.stack([x[:, 1:], y[:, 1:], phi[:, 1:], v[:, 1:], om[:, 1:]])


def _on_road_mask(lanes: Sequence[Lane], x: np.ndarray, y: np.ndarray) -> np.ndarray:
    inside = np.zeros(x.shape, bool)
    for lane in lanes:
        h = lane.width / 2.0
        for (ax, ay), (bx, by) in zip(lane.centerline[:-1], lane.centerline[1:]):
            dx, dy = bx - ax, by - ay
            seg2 = dx * dx + dy * dy
            if seg2 == 0:
                continue
            t = ((x - ax) * dx + (y - ay) * dy) / seg2
            lat = (dx * (y - ay) - dy * (x - ax)) / math.sqrt(seg2)
            inside |= (t >= -1e-12) & (t <= 1 + 1e-12) & (np.abs(lat) <= h)
    return inside


def _road_distance(lanes: Sequence[Lane], x: float, y: float) -> float:
    """Lower bound on distance from a point to the drivable area."""
    best = math.inf
    for lane in lanes:
        pts = lane.centerline
        for (ax, ay), (bx, by) in zip(pts[:-1], pts[1:]):
            dx, dy = bx - ax, by - ay
            denom = dx * dx + dy * dy
            t = 0.0 if denom == 0 else min(1.0, max(0.0, ((x - ax) * dx + (y - ay) * dy) / denom))
            d = math.hypot(x - ax - t * dx, y - ay - t * dy) - lane.width / 2.0
            best = min(best, d)
    return max(best, 0.0)


@dataclass
class Node:
    state: tuple[float, float, float, float, float]
    k: int  # time index
    g: float
    parent: "Node | None" = None
    prim: int = -1
    segment: np.ndarray | None = None  # (5, steps) states along the primitive
    goal: bool = False
    depth: int = 0


class Search:
    """Successor generation shared by A*, greedy best-first and exhaustive checks."""

    def __init__(
        self,
        objects: Sequence[ClassifiedObject],
        ctx: PlanningContext,
        goal: GoalRegion,
        cost: CostFunction = CostFunction(),
        lanes: Sequence[Lane] = (),
        ego_dims=EGO_DIMS,
        primitives: Sequence[MotionPrimitive] | None = None,
    ):
        self.ctx = ctx
        self.goal = goal
        self.cost = cost
        self.lanes = tuple(lanes)
        self.ego_half = (ego_dims[0] / 2.0, ego_dims[1] / 2.0)
        self.prims = list(primitives if primitives is not None else generate_primitives(ctx))
        self.steps = self.prims[0].steps if self.prims else 0
        self.acc = np.array([p.accel for p in self.prims])
        self.rate = np.array([p.steer_rate for p in self.prims])
        obs = ObstacleSet(objects)
        if self.lanes and len(obs):
            # static obstacles that cannot reach the drivable area never touch the ego
            reach = math.hypot(*self.ego_half)
            keep = [
                bool(np.any(obs.vel[i]))
                or _road_distance(self.lanes, *obs.center[i]) <= reach + obs.radius[i] + 1e-6
                for i in range(len(obs))
            ]
            obs = obs.subset(keep)
        self.obstacles = obs
        self.max_k = int(round(HORIZON / DT))
        self.cg = math.cos(goal.heading), math.sin(goal.heading)

    def root(self) -> Node:
        s = self.ctx.initial_state
        return Node((s.x, s.y, s.phi, s.v, s.omega), 0, 0.0)

    def heuristic(self, x: float, y: float) -> float:
        return self.cost.w_time * self.goal.distance(x, y) / self.ctx.speed_range[1]

    def expand(self, node: Node) -> list[Node]:
        if not self.prims or node.k + self.steps > self.max_k:
            return []
        seg = rollout(node.state, self.acc, self.rate, self.steps, self.ctx.dynamics.omega_max)
        x, y, phi, v, om = seg
        lo, hi = self.ctx.speed_range
        gx, gy = self.goal.center
        c, s = self.cg
        lon = c * (x - gx) + s * (y - gy)
        lat = -s * (x - gx) + c * (y - gy)
        hl, hw = self.goal.half_extent
        dphi = np.abs(np.angle(np.exp(1j * (phi - self.goal.heading))))
        at_goal = (np.abs(lon) <= hl) & (np.abs(lat) <= hw) & (dphi <= HEADING_TOL)
        valid = (v >= lo - SPEED_TOL) & (v <= hi + SPEED_TOL)
        if self.lanes:
            valid &= _on_road_mask(self.lanes, x, y)
        times = (node.k + 1 + np.arange(self.steps)) * DT
        if len(self.obstacles):
            hit, _ = self.obstacles.first_contact(np.stack([x, y], -1), phi, times, self.ego_half)
            valid &= ~hit
        alive = valid & ~((lon > hl) & ~at_goal)
        step_cost = DT * (
            self.cost.w_time
            + self.cost.w_lateral * np.abs(lat)
            + self.cost.w_steer * np.abs(self.rate)[:, None]
        )
        cum = np.cumsum(step_cost, axis=1)
        n = self.steps
        first_bad = np.where((~alive).any(1), np.argmax(~alive, 1), n)
        goal_ok = at_goal & alive
        first_goal = np.where(goal_ok.any(1), np.argmax(goal_ok, 1), n)
        children = []
        for i, prim in enumerate(self.prims):
            j = int(first_goal[i])
            if j < first_bad[i]:
                children.append(
                    Node(
                        tuple(seg[:, i, j]), node.k + j + 1, node.g + float(cum[i, j]), node,
                        prim.id, seg[:, i, : j + 1], True, node.depth + 1,
                    )
                )
            elif first_bad[i] == n:
                children.append(
                    Node(
                        tuple(seg[:, i, -1]), node.k + n, node.g + float(cum[i, -1]),
                        node, prim.id, seg[:, i, :], False, node.depth + 1,
                    )
                )
        return children

    def trajectory(self, node: Node) -> tuple[Trajectory, tuple[int, ...]]:
        chain = []
        n = node
        while n.parent is not None:
            chain.append(n)
            n = n.parent
        chain.reverse()
        s0 = self.ctx.initial_state
        states = [s0]
        for n in chain:
            x, y, phi, v, om = n.segment
            states.extend(VehicleState(x[j], y[j], v[j], phi[j], om[j]) for j in range(len(x)))
        return Trajectory(tuple(states), DT), tuple(n.prim for n in chain)


def plan(
    objects: Sequence[ClassifiedObject],
    ctx: PlanningContext,
    goal: GoalRegion,
    cost: CostFunction = CostFunction(),
    algo: Algo | str = Algo.ASTAR,
    lanes: Sequence[Lane] = (),
    ego_dims=EGO_DIMS,
) -> PlanResult:
    """Plan from ctx.initial_state into the goal region.

    A* orders the open set by (g + h, h, primitive id, insertion); greedy
    best-first by (h, primitive id, insertion). Goal nodes are queued with
    h = 0 and the search stops when one is popped. `lanes`, when given,
    restricts the ego reference point to the drivable area. A goal whose
    intention lane does not exist fails without search.
    """
    algo = Algo(algo)
    if goal.lane_missing:
        return PlanResult(False, None, 0)
    search = Search(objects, ctx, goal, cost, lanes, ego_dims)
    root = search.root()
    s0 = ctx.initial_state
    if len(search.obstacles):
        hit, _ = search.obstacles.first_contact(
            np.array([[s0.x, s0.y]]), np.array([s0.phi]), np.array([0.0]), search.ego_half
        )
        if hit.any():
            return PlanResult(False, None, 0)
    if goal.contains(s0.x, s0.y) and abs(math.remainder(s0.phi - goal.heading, 2 * math.pi)) <= HEADING_TOL:
        return PlanResult(True, Trajectory((s0,), DT), 0, 0.0)
    counter = itertools.count()
    h0 = search.heuristic(s0.x, s0.y)
    open_: list = []

    def push(node: Node, h: float):
        if algo is Algo.ASTAR:
            key = (node.g + h, h, node.prim, next(counter))
        else:
            key = (h, node.prim, next(counter))
        heapq.heappush(open_, (key, node))

    push(root, h0)
    expanded = 0
    while open_:
        _, node = heapq.heappop(open_)
        if node.goal:
            traj, prims = search.trajectory(node)
            return PlanResult(True, traj, expanded, node.g, prims)
        expanded += 1
        for child in search.expand(node):
            h = 0.0 if child.goal else search.heuristic(child.state[0], child.state[1])
            push(child, h)
    return PlanResult(False, None, expanded)
