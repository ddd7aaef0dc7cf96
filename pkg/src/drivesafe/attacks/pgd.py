"""Iterated clipped sign-gradient perturbation of a stereo pair."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..perception.surrogate import (
    DetectorSurrogate,
    DimensionMismatch,
    StereoImagePair,
    loss_and_gradient,
    loss_value,
)
from ..scenario import DetectedBox3D


@dataclass(frozen=True)
class PerturbationConfig:
    epsilon: float
    alpha: float
    n_iters: int

    def __post_init__(self):
        if not self.epsilon > 0 or not self.alpha > 0:
            raise ValueError("epsilon and alpha must be positive")
        if self.n_iters < 0:
            raise ValueError("n_iters must be >= 0")

    @property
    def typical_range(self) -> bool:
        """Total intensity alpha * N inside the [0.4, 4] pixel band used for reported runs."""
        return 0.4 <= self.alpha * self.n_iters <= 4.0


@dataclass
class PGDTrace:
    image: StereoImagePair
    losses: list[float] = field(default_factory=list)  # before step 0, after each step
    step_linf: list[float] = field(default_factory=list)
    final_loss: float = 0.0


def sign_ascent(left, right, loss_and_grad: Callable, cfg: PerturbationConfig):
    """Generic loop on raw arrays.

    `loss_and_grad(left, right)` returns (value, grad_left, grad_right).
    Returns the final (unclamped) arrays, the loss after every step with the
    starting loss first, and the per-step L-inf norm of the applied delta.
    """
    left = np.array(left, dtype=float)
    right = np.array(right, dtype=float)
    if cfg.n_iters == 0:
        return left, right, [float(loss_and_grad(left, right)[0])], []
    value, gl, gr = loss_and_grad(left, right)
    losses, norms = [float(value)], []
    for _ in range(cfg.n_iters):
        dl = np.clip(cfg.alpha * np.sign(gl), -cfg.epsilon, cfg.epsilon)
        dr = np.clip(cfg.alpha * np.sign(gr), -cfg.epsilon, cfg.epsilon)
        norms.append(float(max(np.abs(dl).max(initial=0.0), np.abs(dr).max(initial=0.0))))
        left = left + dl
        right = right + dr
        value, gl, gr = loss_and_grad(left, right)
        losses.append(float(value))
    return left, right, losses, norms


def pgd_attack(
    d: DetectorSurrogate,
    img: StereoImagePair,
    labels: Sequence[DetectedBox3D],
    cfg: PerturbationConfig,
) -> PGDTrace:
    """Run the attack and keep the per-iteration record.

    Each step takes the loss gradient at the current perturbed pair, so the
    left and right images get their own sign pattern. Pixels are clamped to
    [0, 255] once, after the last step.
    """
    if img.left.shape != img.right.shape:
        raise DimensionMismatch("stereo images differ in shape")

    def lg(left, right):
        out = loss_and_gradient(d, StereoImagePair(left, right), labels)
        return out.value, out.grad_left, out.grad_right

    if cfg.n_iters == 0:
        v = loss_value(d, img, labels)
        return PGDTrace(img, [v], [], v)
    left, right, losses, norms = sign_ascent(img.left, img.right, lg, cfg)
    out = StereoImagePair(np.clip(left, 0.0, 255.0), np.clip(right, 0.0, 255.0))
    return PGDTrace(out, losses, norms, loss_value(d, out, labels))


def pgd_perturb(d, img, labels, cfg: PerturbationConfig) -> StereoImagePair:
    return pgd_attack(d, img, labels, cfg).image
