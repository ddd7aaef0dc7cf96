"""A small differentiable stereo detector and its synthetic renderer.

Images are rectified bird's-eye rasters: row r covers forward distance
x in [X_MAX - (r+1)*PX_X, X_MAX - r*PX_X), column c covers lateral
y in (Y_MAX - (c+1)*PX_Y, Y_MAX - c*PX_Y]. The right image is the left image
shifted left by a per-row disparity K / x, so a point at depth x appears
DISPARITY_K / x pixels further left in the right view.

The detector reads a 3x3 neighbourhood of 8x8 patches around each BEV grid
cell from both images (the right one re-aligned by its row disparity) and
applies three shared linear maps: a score logit and two center-offset
regressors. Everything between pixels and the loss is linear, so pixel
gradients are exact.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..scenario import CAR_DIMS, DetectedBox3D

X_MAX = 48.0
Y_MAX = 16.0
PX_X = 0.25
PX_Y = 0.125
HEIGHT = int(round(X_MAX / PX_X))  # 192
WIDTH = int(round(2 * Y_MAX / PX_Y))  # 256
CELL_PX = 8
WINDOW = 3  # patches per side of the receptive field
GRID_ROWS = HEIGHT // CELL_PX
GRID_COLS = WIDTH // CELL_PX
CELL_X = CELL_PX * PX_X  # 2 m
CELL_Y = CELL_PX * PX_Y  # 1 m
DISPARITY_K = 80.0
MIN_DISPARITY_DEPTH = 2.0
CAR_INTENSITY = 200.0
SCORE_GAIN = 20.0
OVERLAP_THRESHOLD = 0.5
SCORE_THRESHOLD = 0.5
NMS_DX = 3.0
NMS_DY = 1.2
N_OUT = 3  # score logit, dx, dy
KERNEL_SHAPE = (N_OUT, 2, WINDOW, CELL_PX, WINDOW, CELL_PX, 3)
N_PARAMS = int(np.prod(KERNEL_SHAPE)) + N_OUT

MAGIC = b"DSUR"
VERSION = 1


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class StereoImagePair:
    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        left = np.asarray(self.left, dtype=float)
        right = np.asarray(self.right, dtype=float)
        if left.shape != right.shape or left.ndim != 3 or left.shape[2] != 3:
            raise DimensionMismatch(f"left {left.shape} and right {right.shape} must be equal h x w x 3")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @property
    def h(self) -> int:
        return self.left.shape[0]

    @property
    def w(self) -> int:
        return self.left.shape[1]


@dataclass(frozen=True)
class DetectionLoss:
    value: float
    grad_left: np.ndarray
    grad_right: np.ndarray


def row_depth(r) -> np.ndarray:
    return X_MAX - (np.asarray(r) + 0.5) * PX_X


def col_lateral(c) -> np.ndarray:
    return Y_MAX - (np.asarray(c) + 0.5) * PX_Y


def row_disparity() -> np.ndarray:
    x = np.maximum(row_depth(np.arange(HEIGHT)), MIN_DISPARITY_DEPTH)
    return np.rint(DISPARITY_K / x).astype(int)


_DISP = row_disparity()


def cell_center(i, j) -> tuple[np.ndarray, np.ndarray]:
    x = X_MAX - (np.asarray(i) + 0.5) * CELL_X
    y = Y_MAX - (np.asarray(j) + 0.5) * CELL_Y
    return x, y


def world_to_pixel(x: float, y: float) -> tuple[float, float]:
    """Continuous (row, col) of a BEV point; pixel (r, c) spans [r, r+1) x [c, c+1)."""
    return (X_MAX - x) / PX_X, (Y_MAX - y) / PX_Y


def pixel_to_world(r: float, c: float) -> tuple[float, float]:
    return X_MAX - r * PX_X, Y_MAX - c * PX_Y


def align_right(right: np.ndarray) -> np.ndarray:
    """aligned[r, c] = right[r, c - d(r)], zero where that column is off-image."""
    out = np.zeros_like(right)
    for r in range(right.shape[0]):
        d = _DISP[r]
        if d < right.shape[1]:
            out[r, d:] = right[r, : right.shape[1] - d]
    return out


def align_right_adjoint(g: np.ndarray) -> np.ndarray:
    out = np.zeros_like(g)
    for r in range(g.shape[0]):
        d = _DISP[r]
        if d < g.shape[1]:
            out[r, : g.shape[1] - d] = g[r, d:]
    return out


def _coverage_1d(lo: float, hi: float, n: int) -> np.ndarray:
    """Fraction of each unit pixel [k, k+1) covered by the interval [lo, hi]."""
    k = np.arange(n)
    return np.clip(np.minimum(hi, k + 1) - np.maximum(lo, k), 0.0, 1.0)


def _box_coverage(box: DetectedBox3D) -> np.ndarray:
    x, y = box.center[0], box.center[1]
    l, w = box.dims[0], box.dims[1]
    if abs(box.yaw) < 1e-12:
        r0, c0 = world_to_pixel(x + l / 2, y + w / 2)
        r1, c1 = world_to_pixel(x - l / 2, y - w / 2)
        return np.outer(_coverage_1d(r0, r1, HEIGHT), _coverage_1d(c0, c1, WIDTH))
    # rotated footprints: 4x4 supersampling inside the bounding window
    ss = 4
    half = math.hypot(l, w) / 2
    r_lo, c_lo = world_to_pixel(x + half, y + half)
    r_hi, c_hi = world_to_pixel(x - half, y - half)
    rs = range(max(int(math.floor(r_lo)), 0), min(int(math.ceil(r_hi)), HEIGHT))
    cs = range(max(int(math.floor(c_lo)), 0), min(int(math.ceil(c_hi)), WIDTH))
    cov = np.zeros((HEIGHT, WIDTH))
    if not rs or not cs:
        return cov
    off = (np.arange(ss) + 0.5) / ss
    rr = (np.array(rs)[:, None] + off[None, :]).ravel()
    cc = (np.array(cs)[:, None] + off[None, :]).ravel()
    px, py = pixel_to_world(rr[:, None], cc[None, :])
    cyaw, syaw = math.cos(box.yaw), math.sin(box.yaw)
    lon = cyaw * (px - x) + syaw * (py - y)
    lat = -syaw * (px - x) + cyaw * (py - y)
    inside = (np.abs(lon) <= l / 2) & (np.abs(lat) <= w / 2)
    block = inside.reshape(len(rs), ss, len(cs), ss).mean(axis=(1, 3))
    cov[rs.start : rs.stop, cs.start : cs.stop] = block
    return cov


def render(boxes: Sequence[DetectedBox3D]) -> StereoImagePair:
    """Rasterize boxes as constant-intensity footprints; right view is disparity-shifted."""
    cov = np.zeros((HEIGHT, WIDTH))
    for b in boxes:
        cov += _box_coverage(b)
    left = np.repeat(np.clip(cov, 0.0, 1.0)[:, :, None] * CAR_INTENSITY, 3, axis=2)
    right = np.zeros_like(left)
    for r in range(HEIGHT):
        d = _DISP[r]
        if d < WIDTH:
            right[r, : WIDTH - d] = left[r, d:]
    return StereoImagePair(left, right)


def _patches(img: np.ndarray) -> np.ndarray:
    p = np.pad(img, ((CELL_PX, CELL_PX), (CELL_PX, CELL_PX), (0, 0)))
    gr, gc = p.shape[0] // CELL_PX, p.shape[1] // CELL_PX
    return p.reshape(gr, CELL_PX, gc, CELL_PX, 3)


def _unpatch(p: np.ndarray) -> np.ndarray:
    gr, _, gc, _, _ = p.shape
    full = p.reshape(gr * CELL_PX, gc * CELL_PX, 3)
    return full[CELL_PX:-CELL_PX, CELL_PX:-CELL_PX]


def overlap_fraction(boxes: Sequence[DetectedBox3D]) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell max footprint overlap with a car template at the cell center.

    Returns (overlap, owner) of shape (GRID_ROWS, GRID_COLS); owner is the
    index of the box achieving the max, -1 where nothing overlaps.
    """
    xc, yc = cell_center(np.arange(GRID_ROWS)[:, None], np.arange(GRID_COLS)[None, :])
    tl, tw = CAR_DIMS[0] / 2, CAR_DIMS[1] / 2
    best = np.zeros((GRID_ROWS, GRID_COLS))
    owner = np.full((GRID_ROWS, GRID_COLS), -1)
    for k, b in enumerate(boxes):
        bl, bw = b.dims[0] / 2, b.dims[1] / 2
        ox = np.clip(np.minimum(xc + tl, b.center[0] + bl) - np.maximum(xc - tl, b.center[0] - bl), 0, None)
        oy = np.clip(np.minimum(yc + tw, b.center[1] + bw) - np.maximum(yc - tw, b.center[1] - bw), 0, None)
        frac = ox * oy / (4 * tl * tw)
        upd = frac > best
        best = np.where(upd, frac, best)
        owner = np.where(upd, k, owner)
    return best, owner


class DetectorSurrogate:
    """theta = kernels (3, 2, 3, 8, 3, 8, 3) flattened, then 3 biases."""

    def __init__(self, theta: np.ndarray):
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != N_PARAMS:
            raise DimensionMismatch(f"theta has {theta.size} parameters, expected {N_PARAMS}")
        self.theta = theta
        self.kernel = theta[:-N_OUT].reshape(KERNEL_SHAPE)
        self.bias = theta[-N_OUT:]

    @classmethod
    def zeros(cls, score_bias: float = -10.0) -> "DetectorSurrogate":
        theta = np.zeros(N_PARAMS)
        theta[-N_OUT] = score_bias
        return cls(theta)

    def _check(self, img: StereoImagePair):
        if img.left.shape != (HEIGHT, WIDTH, 3):
            raise DimensionMismatch(f"expected {(HEIGHT, WIDTH, 3)} images, got {img.left.shape}")

    def forward(self, img: StereoImagePair) -> np.ndarray:
        """Raw outputs (3, GRID_ROWS, GRID_COLS): logit, dx, dy."""
        self._check(img)
        pl = _patches(img.left)
        pr = _patches(align_right(img.right))
        out = np.zeros((N_OUT, GRID_ROWS, GRID_COLS))
        for u in range(WINDOW):
            for v in range(WINDOW):
                wl = pl[u : u + GRID_ROWS, :, v : v + GRID_COLS]
                wr = pr[u : u + GRID_ROWS, :, v : v + GRID_COLS]
                out += np.einsum("iajbc,oabc->oij", wl, self.kernel[:, 0, u, :, v], optimize=True)
                out += np.einsum("iajbc,oabc->oij", wr, self.kernel[:, 1, u, :, v], optimize=True)
        out += self.bias[:, None, None]
        return out

    def backward(self, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pixel gradients given d(loss)/d(outputs) of shape (3, GRID_ROWS, GRID_COLS)."""
        shape = (GRID_ROWS + 2, CELL_PX, GRID_COLS + 2, CELL_PX, 3)
        dl = np.zeros(shape)
        dr = np.zeros(shape)
        for u in range(WINDOW):
            for v in range(WINDOW):
                dl[u : u + GRID_ROWS, :, v : v + GRID_COLS] += np.einsum(
                    "oij,oabc->iajbc", g, self.kernel[:, 0, u, :, v], optimize=True
                )
                dr[u : u + GRID_ROWS, :, v : v + GRID_COLS] += np.einsum(
                    "oij,oabc->iajbc", g, self.kernel[:, 1, u, :, v], optimize=True
                )
        return _unpatch(dl), align_right_adjoint(_unpatch(dr))

    def detect(self, img: StereoImagePair) -> list[DetectedBox3D]:
        out = self.forward(img)
        return decode(out)

    def save(self, path) -> None:
        Path(path).write_bytes(serialize_theta(self.theta))

    @classmethod
    def load(cls, path) -> "DetectorSurrogate":
        return cls(deserialize_theta(Path(path).read_bytes()))


def decode(out: np.ndarray) -> list[DetectedBox3D]:
    logit, dx, dy = out
    score = 1.0 / (1.0 + np.exp(-logit))
    ii, jj = np.nonzero(score > SCORE_THRESHOLD)
    order = np.lexsort((jj, ii, -score[ii, jj]))
    kept: list[DetectedBox3D] = []
    for o in order:
        i, j = ii[o], jj[o]
        xc, yc = cell_center(i, j)
        x, y = float(xc + dx[i, j]), float(yc + dy[i, j])
        if any(abs(x - k.center[0]) < NMS_DX and abs(y - k.center[1]) < NMS_DY for k in kept):
            continue
        kept.append(DetectedBox3D((x, y, CAR_DIMS[2] / 2), CAR_DIMS, 0.0, "Car", float(score[i, j])))
    return kept


def detect(d: DetectorSurrogate, img: StereoImagePair) -> list[DetectedBox3D]:
    return d.detect(img)


def targets(labels: Sequence[DetectedBox3D]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(positive mask, dx target, dy target) on the BEV grid."""
    frac, owner = overlap_fraction(labels)
    pos = frac > OVERLAP_THRESHOLD
    tx = np.zeros_like(frac)
    ty = np.zeros_like(frac)
    xc, yc = cell_center(np.arange(GRID_ROWS)[:, None], np.arange(GRID_COLS)[None, :])
    for k, b in enumerate(labels):
        m = pos & (owner == k)
        tx = np.where(m, b.center[0] - xc, tx)
        ty = np.where(m, b.center[1] - yc, ty)
    return pos, tx, ty


def _smooth_l1(r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.abs(r)
    val = np.where(a < 1.0, 0.5 * r * r, a - 0.5)
    grad = np.where(a < 1.0, r, np.sign(r))
    return val, grad


def loss_from_outputs(out: np.ndarray, labels: Sequence[DetectedBox3D]) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy over cells + mean smooth-L1 over positive cells."""
    pos, tx, ty = targets(labels)
    z = out[0]
    y = pos.astype(float)
    bce = np.logaddexp(0.0, z) - y * z
    n_cells = z.size
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))
    g = np.zeros_like(out)
    g[0] = (sig - y) / n_cells
    value = float(bce.sum() / n_cells)
    n_pos = int(pos.sum())
    if n_pos:
        for k, t in ((1, tx), (2, ty)):
            val, gr = _smooth_l1(out[k] - t)
            value += float(val[pos].sum() / n_pos)
            g[k] = np.where(pos, gr, 0.0) / n_pos
    return value, g


def loss_and_gradient(
    d: DetectorSurrogate, img: StereoImagePair, labels: Sequence[DetectedBox3D]
) -> DetectionLoss:
    out = d.forward(img)
    value, g = loss_from_outputs(out, labels)
    gl, gr = d.backward(g)
    return DetectionLoss(value, gl, gr)


def loss_value(d: DetectorSurrogate, img: StereoImagePair, labels) -> float:
    return loss_from_outputs(d.forward(img), labels)[0]


# -- closed-form fit -------------------------------------------------------


def _features(img: StereoImagePair) -> np.ndarray:
    """Channel-summed window features per cell: (GRID_ROWS*GRID_COLS, 2*9*64)."""
    pl = _patches(img.left).sum(-1)
    pr = _patches(align_right(img.right)).sum(-1)
    cols = []
    for side in (pl, pr):
        for u in range(WINDOW):
            for v in range(WINDOW):
                w = side[u : u + GRID_ROWS, :, v : v + GRID_COLS]  # (i, a, j, b)
                cols.append(w.transpose(0, 2, 1, 3).reshape(GRID_ROWS * GRID_COLS, CELL_PX * CELL_PX))
    return np.concatenate(cols, axis=1)


def random_layout(rng: np.random.Generator, n_cars: int, lanes_y=None) -> list[DetectedBox3D]:
    """Cars on random lane-like rows with the spacing rules the renderer relies on."""
    if lanes_y is None:
        n_lanes = int(rng.integers(2, 4))
        first = rng.uniform(-6.0, 6.0 - 3.5 * (n_lanes - 1))
        lanes_y = [first + 3.5 * k for k in range(n_lanes)]
    boxes: list[DetectedBox3D] = []
    attempts = 0
    while len(boxes) < n_cars and attempts < 200:
        attempts += 1
        y = float(rng.choice(lanes_y) + rng.uniform(-0.25, 0.25))
        x = float(rng.uniform(6.0, 45.0))
        if any(abs(b.center[0] - x) < CAR_DIMS[0] + 2.5 and abs(b.center[1] - y) < 2.0 for b in boxes):
            continue
        boxes.append(DetectedBox3D((x, y, CAR_DIMS[2] / 2), CAR_DIMS))
    return boxes


def fit_surrogate(seed: int = 0, n_scenes: int = 600, ridge: float = 1e-3) -> DetectorSurrogate:
    """Least-squares fit of score and offset maps on rendered synthetic scenes.

    Score logits are regressed onto SCORE_GAIN * (overlap - OVERLAP_THRESHOLD);
    offsets onto the owning box's center offset, on positive cells only.
    """
    rng = np.random.default_rng(seed)
    nf = 2 * WINDOW * WINDOW * CELL_PX * CELL_PX + 1
    a_score = np.zeros((nf, nf))
    b_score = np.zeros(nf)
    a_reg = np.zeros((nf, nf))
    b_reg = np.zeros((nf, 2))
    for _ in range(n_scenes):
        boxes = random_layout(rng, int(rng.integers(1, 7)))
        img = render(boxes)
        f = np.hstack([_features(img), np.ones((GRID_ROWS * GRID_COLS, 1))])
        frac, _ = overlap_fraction(boxes)
        pos, tx, ty = targets(boxes)
        t = SCORE_GAIN * (frac.ravel() - OVERLAP_THRESHOLD)
        # empty windows only constrain the bias; fold them in without the matmul
        busy = f[:, :-1].any(axis=1)
        fb = f[busy]
        a_score += fb.T @ fb
        b_score += fb.T @ t[busy]
        a_score[-1, -1] += (~busy).sum()
        b_score[-1] += t[~busy].sum()
        fp = f[pos.ravel()]
        a_reg += fp.T @ fp
        b_reg += fp.T @ np.stack([tx.ravel()[pos.ravel()], ty.ravel()[pos.ravel()]], 1)
    eye = ridge * np.eye(nf)
    eye[-1, -1] = 0.0
    w_score = np.linalg.solve(a_score + eye, b_score)
    w_reg = np.linalg.solve(a_reg + eye, b_reg)
    return _assemble([w_score, w_reg[:, 0], w_reg[:, 1]])


def _assemble(ws: Sequence[np.ndarray]) -> DetectorSurrogate:
    kernel = np.zeros(KERNEL_SHAPE)
    bias = np.zeros(N_OUT)
    per = WINDOW * WINDOW * CELL_PX * CELL_PX
    for o, w in enumerate(ws):
        for s in range(2):
            blk = w[s * per : (s + 1) * per].reshape(WINDOW, WINDOW, CELL_PX, CELL_PX)
            # features are channel sums, so every channel carries the same weight
            kernel[o, s] = np.repeat(blk.transpose(0, 2, 1, 3)[..., None], 3, axis=-1)
        bias[o] = w[-1]
    return DetectorSurrogate(np.concatenate([kernel.ravel(), bias]))


def overfit_surrogate(img: StereoImagePair, labels: Sequence[DetectedBox3D], gain: float = 25.0) -> DetectorSurrogate:
    """Interpolating fit to a single image: logits +-gain, exact offsets."""
    f = np.hstack([_features(img), np.ones((GRID_ROWS * GRID_COLS, 1))])
    pos, tx, ty = targets(labels)
    t_score = np.where(pos.ravel(), gain, -gain)
    w_score = np.linalg.lstsq(f, t_score, rcond=None)[0]
    on = pos.ravel()  # offsets only enter the loss on positive cells
    w_dx = np.linalg.lstsq(f[on], tx.ravel()[on], rcond=None)[0]
    w_dy = np.linalg.lstsq(f[on], ty.ravel()[on], rcond=None)[0]
    return _assemble([w_score, w_dx, w_dy])


# -- serialization ---------------------------------------------------------

_HEADER = struct.Struct("<4sHBBHHHH")  # 16 bytes


def serialize_theta(theta: np.ndarray) -> bytes:
    header = _HEADER.pack(
        MAGIC, VERSION, CELL_PX, WINDOW, GRID_ROWS, GRID_COLS,
        int(round(PX_X * 1000)), int(round(PX_Y * 1000)),
    )
    return header + np.asarray(theta, dtype="<f8").tobytes()


def deserialize_theta(data: bytes) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise ValueError("theta file shorter than its header")
    magic, version, cell, window, rows, cols, pxx, pxy = _HEADER.unpack_from(data)
    if magic != MAGIC or version != VERSION:
        raise ValueError(f"not a surrogate theta file (magic={magic!r}, version={version})")
    expected = (CELL_PX, WINDOW, GRID_ROWS, GRID_COLS, int(round(PX_X * 1000)), int(round(PX_Y * 1000)))
    if (cell, window, rows, cols, pxx, pxy) != expected:
        raise DimensionMismatch("theta grid spec does not match this build")
    theta = np.frombuffer(data[_HEADER.size :], dtype="<f8").astype(float)
    if theta.size != N_PARAMS:
        raise DimensionMismatch(f"theta has {theta.size} parameters, expected {N_PARAMS}")
    return theta


DEFAULT_THETA = Path(__file__).resolve().parent.parent / "data" / "theta_star.bin"


def load_default() -> DetectorSurrogate:
    return DetectorSurrogate.load(DEFAULT_THETA)
