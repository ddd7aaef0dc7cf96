"""Disc-shaped adversarial patch: placement, pasting, training and file I/O."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from ..perception.surrogate import (
    CAR_INTENSITY,
    HEIGHT,
    WIDTH,
    DetectorSurrogate,
    StereoImagePair,
    loss_and_gradient,
    pixel_to_world,
    world_to_pixel,
)
from ..scenario import CAR_DIMS, DetectedBox3D, Intention
from ..seeding import rng_for

MAX_RADIUS = 38
DISPARITIES = tuple(range(5, 41))
MAX_ROTATION = math.radians(10.0)
GHOST_Z = CAR_DIMS[2] / 2.0
LANE_WIDTH = 3.5
PATCH_X_RANGE = (6.0, 30.0)


class PatchOutOfBounds(ValueError):
    pass


class Placement(str, Enum):
    RANDOM = "random"
    SPECIFIC = "specific"


def disc_mask(r: int) -> np.ndarray:
    k = np.arange(-r, r + 1)
    return k[:, None] ** 2 + k[None, :] ** 2 <= r * r


@dataclass(frozen=True, eq=False)
class PatchSpec:
    """A patch and where it lands.

    loc_l and loc_r are the (row, col) of the top-left corner of the patch's
    bounding square in the left and right images.
    """

    patch: np.ndarray
    loc_l: tuple[int, int]
    loc_r: tuple[int, int]
    rotation: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.patch, dtype=float)
        if p.ndim != 3 or p.shape[0] != p.shape[1] or p.shape[0] % 2 != 1 or p.shape[2] != 3:
            raise ValueError("patch must be (2r+1, 2r+1, 3)")
        object.__setattr__(self, "patch", p)
        object.__setattr__(self, "loc_l", (int(self.loc_l[0]), int(self.loc_l[1])))
        object.__setattr__(self, "loc_r", (int(self.loc_r[0]), int(self.loc_r[1])))
        if self.radius > MAX_RADIUS:
            raise ValueError(f"radius {self.radius} exceeds {MAX_RADIUS} px")
        if abs(self.rotation) > MAX_ROTATION + 1e-12:
            raise ValueError("rotation outside +-10 degrees")

    @property
    def radius(self) -> int:
        return self.patch.shape[0] // 2

    @property
    def disparity(self) -> int:
        return self.loc_l[1] - self.loc_r[1]

    def center_world(self) -> tuple[float, float]:
        """BEV point under the patch center in the left image."""
        r = self.radius
        return pixel_to_world(self.loc_l[0] + r + 0.5, self.loc_l[1] + r + 0.5)


def paste_map(r: int, rotation: float) -> tuple[np.ndarray, ...]:
    """Destination offsets inside the disc and their nearest source pixels.

    Returns (di, dj, si, sj), all indices into the (2r+1)^2 square.
    """
    di, dj = np.nonzero(disc_mask(r))
    oi, oj = di - r, dj - r
    c, s = math.cos(rotation), math.sin(rotation)
    si = np.clip(np.rint(c * oi + s * oj), -r, r).astype(int) + r
    sj = np.clip(np.rint(-s * oi + c * oj), -r, r).astype(int) + r
    return di, dj, si, sj


def _check_inside(loc, r, shape, which):
    top, left = loc
    if top < 0 or left < 0 or top + 2 * r + 1 > shape[0] or left + 2 * r + 1 > shape[1]:
        raise PatchOutOfBounds(f"patch at {loc} leaves the {which} image")


def apply_patch(img: StereoImagePair, spec: PatchSpec) -> StereoImagePair:
    r = spec.radius
    _check_inside(spec.loc_l, r, img.left.shape, "left")
    _check_inside(spec.loc_r, r, img.right.shape, "right")
    di, dj, si, sj = paste_map(r, spec.rotation)
    src = spec.patch[si, sj]
    left = img.left.copy()
    right = img.right.copy()
    left[spec.loc_l[0] + di, spec.loc_l[1] + dj] = src
    right[spec.loc_r[0] + di, spec.loc_r[1] + dj] = src
    return StereoImagePair(left, right)


def patch_gradient(spec: PatchSpec, grad_left: np.ndarray, grad_right: np.ndarray) -> np.ndarray:
    """Pull an image-space gradient back onto the patch pixels."""
    r = spec.radius
    di, dj, si, sj = paste_map(r, spec.rotation)
    g = np.zeros_like(spec.patch)
    np.add.at(g, (si, sj), grad_left[spec.loc_l[0] + di, spec.loc_l[1] + dj])
    np.add.at(g, (si, sj), grad_right[spec.loc_r[0] + di, spec.loc_r[1] + dj])
    return g


def ghost_box(spec: PatchSpec) -> DetectedBox3D:
    x, y = spec.center_world()
    return DetectedBox3D((x, y, GHOST_Z), CAR_DIMS, 0.0, "Car", 1.0, ghost=True)


@dataclass(frozen=True)
class PlacementPolicy:
    kind: Placement = Placement.RANDOM
    intention: Intention | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Placement(self.kind))
        if self.kind is Placement.SPECIFIC:
            if self.intention is None:
                raise ValueError("specific placement needs an intention")
            object.__setattr__(self, "intention", Intention(self.intention))

    def lateral_band(self, r: int) -> tuple[int, int]:
        """Admissible left-image columns for the patch's top-left corner."""
        lo, hi = 0, WIDTH - 2 * r - 1
        if self.kind is Placement.SPECIFIC:
            y0 = self.intention.lane_offset * LANE_WIDTH
            c_lo = world_to_pixel(0.0, y0 + LANE_WIDTH / 2.0)[1]
            c_hi = world_to_pixel(0.0, y0 - LANE_WIDTH / 2.0)[1]
            lo = max(lo, int(math.ceil(c_lo)) - r)
            hi = min(hi, int(math.floor(c_hi)) - r - 1)
        return lo, hi


def sample_placement(
    rng: np.random.Generator, patch: np.ndarray, policy: PlacementPolicy
) -> PatchSpec:
    """Draw rotation, disparity and location; the patch stays inside both images."""
    r = patch.shape[0] // 2
    tau = float(rng.uniform(-MAX_ROTATION, MAX_ROTATION))
    lam = int(rng.choice(DISPARITIES))
    row_lo = int(math.ceil(world_to_pixel(PATCH_X_RANGE[1], 0.0)[0])) - r
    row_hi = int(math.floor(world_to_pixel(PATCH_X_RANGE[0], 0.0)[0])) - r - 1
    row_lo, row_hi = max(row_lo, 0), min(row_hi, HEIGHT - 2 * r - 1)
    col_lo, col_hi = policy.lateral_band(r)
    col_lo = max(col_lo, lam)  # right copy must stay inside too
    if row_lo > row_hi or col_lo > col_hi:
        raise PatchOutOfBounds("no admissible placement for this radius and policy")
    row = int(rng.integers(row_lo, row_hi + 1))
    col = int(rng.integers(col_lo, col_hi + 1))
    return PatchSpec(patch, (row, col), (row, col - lam), tau)


@dataclass(frozen=True)
class PatchTrainingConfig:
    target_boxes: tuple[DetectedBox3D, ...] = ()
    epochs: int = 100
    step_size: float = 4.0
    placement_policy: PlacementPolicy = field(default_factory=PlacementPolicy)
    radius: int = 16
    seed: int = 0
    samples_per_image: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.step_size < 0:
            raise ValueError("step_size must be >= 0")
        if not 1 <= self.radius <= MAX_RADIUS:
            raise ValueError(f"radius must be in [1, {MAX_RADIUS}]")
        object.__setattr__(self, "target_boxes", tuple(self.target_boxes))


@dataclass
class PatchTrainingResult:
    patch: np.ndarray
    curve: list[float]
    best_epoch: int


def train_patch(
    d: DetectorSurrogate,
    dataset: Sequence[tuple[StereoImagePair, Sequence[DetectedBox3D]]],
    cfg: PatchTrainingConfig,
) -> PatchTrainingResult:
    """Sign-gradient descent on patch pixels over random placements.

    Each epoch draws fresh placements for every image (expectation over
    transformation) and evaluates the objective and its gradient on those
    draws; the curve therefore has epochs + 1 entries, the last one measured
    after the final update. Without explicit target boxes the target for a
    draw is the image's labels plus a car box under the patch center.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    rng = rng_for(cfg.seed, "patch-init")
    size = 2 * cfg.radius + 1
    patch = rng.uniform(0.0, CAR_INTENSITY, (size, size, 3))
    curve: list[float] = []
    best, best_patch, best_epoch = math.inf, patch.copy(), 0
    for epoch in range(cfg.epochs + 1):
        draw = rng_for(cfg.seed, "patch-draw", epoch)
        total, grad, n = 0.0, np.zeros_like(patch), 0
        for img, labels in dataset:
            for _ in range(cfg.samples_per_image):
                spec = sample_placement(draw, patch, cfg.placement_policy)
                target = cfg.target_boxes or (*labels, ghost_box(spec))
                lg = loss_and_gradient(d, apply_patch(img, spec), target)
                total += lg.value
                grad += patch_gradient(spec, lg.grad_left, lg.grad_right)
                n += 1
        obj = total / n
        curve.append(obj)
        if obj < best:
            best, best_patch, best_epoch = obj, patch.copy(), epoch
        if epoch < cfg.epochs:
            patch = np.clip(patch - cfg.step_size * np.sign(grad), 0.0, 255.0)
    return PatchTrainingResult(best_patch, curve, best_epoch)


def save_patch(path: str | Path, patch: np.ndarray, meta: dict) -> None:
    """Binary PPM (P6) plus a JSON sidecar next to it."""
    path = Path(path)
    h, w, _ = patch.shape
    data = np.clip(np.rint(patch), 0, 255).astype(np.uint8)
    path.write_bytes(f"P6\n{w} {h}\n255\n".encode() + data.tobytes())
    side = dict(meta, radius=h // 2)
    path.with_suffix(".json").write_text(json.dumps(side, sort_keys=True, indent=2) + "\n")


def load_patch(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    raw = path.read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic not in (b"P6", b"P5") or maxval != 255:
        raise ValueError("expected an 8-bit P5 or P6 image")
    ch = 3 if magic == b"P6" else 1
    arr = np.frombuffer(raw[pos + 1 : pos + 1 + w * h * ch], np.uint8).reshape(h, w, ch)
    if ch == 1:
        arr = np.repeat(arr, 3, axis=2)
    side = path.with_suffix(".json")
    meta = json.loads(side.read_text()) if side.exists() else {}
    return arr.astype(float), meta
