"""Oriented-rectangle contact, constant-velocity prediction, trajectory verdicts."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .scenario import EGO_DIMS, ClassifiedObject, Trajectory

CONTACT_TOL = 1e-9


@dataclass(frozen=True)
class OrientedRect:
    center: tuple[float, float]
    half_dims: tuple[float, float]  # half length, half width
    yaw: float = 0.0

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = self.half_dims
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.asarray(self.center)

    @classmethod
    def from_box(cls, box) -> "OrientedRect":
        return cls((box.center[0], box.center[1]), (box.dims[0] / 2.0, box.dims[1] / 2.0), box.yaw)


def obb_overlap(ca, ha, yaw_a, cb, hb, yaw_b) -> np.ndarray:
    """Broadcasting separating-axis test over arrays of rectangles.

    ca, cb: (..., 2) centers; ha, hb: (..., 2) half dims; yaw_*: (...).
    Returns a boolean array, True where the rectangles touch or overlap.
    """
    ca, cb = np.asarray(ca, float), np.asarray(cb, float)
    ha, hb = np.asarray(ha, float), np.asarray(hb, float)
    ya, yb = np.asarray(yaw_a, float), np.asarray(yaw_b, float)
    a1 = np.stack([np.cos(ya), np.sin(ya)], -1)
    a2 = np.stack([-np.sin(ya), np.cos(ya)], -1)
    b1 = np.stack([np.cos(yb), np.sin(yb)], -1)
    b2 = np.stack([-np.sin(yb), np.cos(yb)], -1)
    d = cb - ca
    sep = np.zeros(np.broadcast(d[..., 0], ha[..., 0], hb[..., 0]).shape, bool)
    for u in (a1, a2, b1, b2):
        dist = np.abs(np.sum(d * u, -1))
        ra = ha[..., 0] * np.abs(np.sum(a1 * u, -1)) + ha[..., 1] * np.abs(np.sum(a2 * u, -1))
        rb = hb[..., 0] * np.abs(np.sum(b1 * u, -1)) + hb[..., 1] * np.abs(np.sum(b2 * u, -1))
        sep |= dist > ra + rb + CONTACT_TOL
    return ~sep


def obb_intersect(a: OrientedRect, b: OrientedRect) -> bool:
    return bool(obb_overlap(a.center, a.half_dims, a.yaw, b.center, b.half_dims, b.yaw))


def predict_occupancy(obj: ClassifiedObject, t: float) -> OrientedRect:
    rect = OrientedRect.from_box(obj.box)
    if not obj.is_moving:
        return rect
    vx, vy = obj.velocity
    return OrientedRect((rect.center[0] + vx * t, rect.center[1] + vy * t), rect.half_dims, rect.yaw)


class ObstacleSet:
    """Array form of a list of classified objects for batched queries."""

    def __init__(self, objects: Sequence[ClassifiedObject]):
        self.objects = list(objects)
        n = len(self.objects)
        self.center = np.zeros((n, 2))
        self.half = np.zeros((n, 2))
        self.yaw = np.zeros(n)
        self.vel = np.zeros((n, 2))
        for i, o in enumerate(self.objects):
            self.center[i] = o.box.center[:2]
            self.half[i] = (o.box.dims[0] / 2.0, o.box.dims[1] / 2.0)
            self.yaw[i] = o.box.yaw
            if o.is_moving:
                self.vel[i] = o.velocity
        self.radius = np.hypot(self.half[:, 0], self.half[:, 1])

    def __len__(self):
        return len(self.objects)

    def subset(self, mask) -> "ObstacleSet":
        return ObstacleSet([o for o, m in zip(self.objects, mask) if m])

    def first_contact(self, xy, yaw, times, ego_half) -> tuple[np.ndarray, np.ndarray]:
        """Contact test for ego poses (..., T) at times (T,) against every obstacle.

        Returns (hit, obstacle index) arrays shaped like yaw; index is -1
        where there is no contact and the lowest colliding index otherwise.
        """
        xy = np.asarray(xy, float)
        yaw = np.asarray(yaw, float)
        if len(self) == 0:
            return np.zeros(yaw.shape, bool), np.full(yaw.shape, -1)
        times = np.asarray(times, float)
        ego_r = math.hypot(*ego_half)
        # obstacle centers over time: (N, T, 2), ego poses broadcast as (..., 1, T, 2)
        oc = self.center[:, None, :] + times[..., None, :, None] * self.vel[:, None, :]
        rel = xy[..., None, :, :] - oc
        near = np.hypot(rel[..., 0], rel[..., 1]) <= (ego_r + self.radius + CONTACT_TOL)[:, None]
        ov = np.zeros(near.shape, bool)
        if near.any():
            sel = np.nonzero(near)
            obj = sel[-2]
            ego_xy = np.broadcast_to(xy[..., None, :, :], near.shape + (2,))[sel]
            ego_yaw = np.broadcast_to(yaw[..., None, :], near.shape)[sel]
            ov[sel] = obb_overlap(
                ego_xy, ego_half, ego_yaw,
                np.broadcast_to(oc, near.shape + (2,))[sel], self.half[obj], self.yaw[obj],
            )
        hit = ov.any(axis=-2)
        idx = np.where(hit, np.argmax(ov, axis=-2), -1)
        return hit, idx


@dataclass(frozen=True)
class CollisionResult:
    collided: bool
    first_time_index: int | None = None
    object_id: int | None = None


def check_trajectory(
    traj: Trajectory, objects: Sequence[ClassifiedObject], ego_dims=EGO_DIMS
) -> CollisionResult:
    """Earliest discrete-time contact between the ego footprint and predicted objects."""
    if not objects or len(traj) == 0:
        return CollisionResult(False)
    obs = ObstacleSet(objects)
    xy = np.array([(s.x, s.y) for s in traj.states])
    yaw = np.array([s.phi for s in traj.states])
    times = np.arange(len(traj)) * traj.dt
    hit, idx = obs.first_contact(xy, yaw, times, (ego_dims[0] / 2.0, ego_dims[1] / 2.0))
    if not hit.any():
        return CollisionResult(False)
    t = int(np.argmax(hit))
    return CollisionResult(True, t, int(idx[t]))
