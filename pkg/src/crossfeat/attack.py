"""Gradient-based adversarial perturbations under l-inf and l2 constraints.

Both attacks maximize untargeted cross-entropy on the true label inside the
epsilon-ball around each input.  The multi-step variant iterates a projected
ascent step; the fast variant is a single step from a random point in the
ball.  sign(0) = 0, so flat coordinates do not drift; with a zero gradient an
iterate simply stays put for that step.  epsilon = 0 degenerates to the
identity attack.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Classifier, CrossEntropy, backward
from .numerics import RngStream, as_array

__all__ = ["AttackConfig", "fgsm", "pgd", "project"]


@dataclass(frozen=True)
class AttackConfig:
    """Perturbation budget and ascent schedule for one attack.

    ``step_size=None`` picks the conventional default for the norm:
    epsilon/4 for linf and epsilon/8 for l2 (10-step training attack), or
    epsilon for the single-step fast attack.
    """

    norm: str = "linf"
    epsilon: float = 0.0
    step_size: float | None = None
    steps: int = 10
    random_start: bool = False
    input_bounds: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.norm not in ("linf", "l2"):
            raise ValueError(f"norm must be 'linf' or 'l2', got {self.norm!r}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")
        if self.steps < 1:
            raise ValueError(f"steps must be at least 1, got {self.steps}")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.input_bounds is not None:
            lo, hi = self.input_bounds
            if not lo < hi:
                raise ValueError(f"input_bounds must satisfy lo < hi, got {self.input_bounds}")

    def resolved_step(self, fast: bool = False) -> float:
        if self.step_size is not None:
            return self.step_size
        if fast:
            return self.epsilon
        return self.epsilon / 4.0 if self.norm == "linf" else self.epsilon / 8.0


def project(x0, x, cfg: AttackConfig) -> np.ndarray:
    """Project ``x`` onto the epsilon-ball around ``x0`` (and the input box).

    linf clamps coordinates into [x0 - eps, x0 + eps]; l2 rescales the offset
    when its norm exceeds eps.  Row-wise over 2-D batches.
    """
    base = as_array(x0, name="x0")
    point = as_array(x, name="x")
    if base.shape != point.shape:
        raise ValueError(f"shape mismatch: {base.shape} vs {point.shape}")
    delta = point - base
    if cfg.norm == "linf":
        delta = np.clip(delta, -cfg.epsilon, cfg.epsilon)
    else:
        flat = delta.reshape(len(delta), -1) if delta.ndim > 1 else delta.reshape(1, -1)
        norms = np.linalg.norm(flat, axis=1)
        scale = np.ones_like(norms)
        over = norms > cfg.epsilon
        scale[over] = cfg.epsilon / norms[over]
        delta = (flat * scale[:, None]).reshape(delta.shape)
    out = base + delta
    if cfg.input_bounds is not None:
        out = np.clip(out, cfg.input_bounds[0], cfg.input_bounds[1])
    return out


def _random_start(x: np.ndarray, cfg: AttackConfig, rng: RngStream) -> np.ndarray:
    gen = rng.generator
    if cfg.norm == "linf":
        return x + gen.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape)
    # Uniform direction scaled by a uniform radius fraction, then projected.
    noise = gen.normal(0.0, 1.0, size=x.shape)
    flat = noise.reshape(len(noise), -1)
    norms = np.linalg.norm(flat, axis=1)
    norms[norms == 0.0] = 1.0
    radii = gen.uniform(0.0, cfg.epsilon, size=len(flat))
    return x + (flat * (radii / norms)[:, None]).reshape(x.shape)


def _ascent_direction(grad: np.ndarray, norm: str) -> np.ndarray:
    if norm == "linf":
        return np.sign(grad)
    flat = grad.reshape(len(grad), -1)
    norms = np.linalg.norm(flat, axis=1)
    safe = np.where(norms == 0.0, 1.0, norms)
    return (flat / safe[:, None]).reshape(grad.shape)


def pgd(
    model: Classifier,
    x,
    y,
    cfg: AttackConfig,
    rng: RngStream | None = None,
    steps: int | None = None,
    fast: bool = False,
) -> np.ndarray:
    """Multi-step projected gradient ascent on cross-entropy at label ``y``.

    Returns a point inside the epsilon-ball (and input box) around ``x``.
    ``random_start`` draws the initial point uniformly from the ball using
    ``rng``; without it the ascent starts at ``x`` itself.
    """
    arr = as_array(x, name="x")
    if cfg.epsilon == 0.0:
        return arr.copy()
    if cfg.random_start:
        if rng is None:
            raise ValueError("random_start requires an rng stream")
        current = project(arr, _random_start(arr, cfg, rng), cfg)
    else:
        current = arr.copy()
    alpha = cfg.resolved_step(fast=fast)
    n_steps = cfg.steps if steps is None else steps
    for _ in range(n_steps):
        bundle = backward(model, current, y, CrossEntropy(), include_params=False)
        step = alpha * _ascent_direction(bundle.inputs, cfg.norm)
        current = project(arr, current + step, cfg)
    return current


def fgsm(model: Classifier, x, y, cfg: AttackConfig, rng: RngStream | None = None) -> np.ndarray:
    """Single ascent step from a random point in the ball (step size alpha = eps
    unless the config overrides it)."""
    fast_cfg = cfg if cfg.random_start else AttackConfig(
        norm=cfg.norm,
        epsilon=cfg.epsilon,
        step_size=cfg.step_size,
        steps=cfg.steps,
        random_start=True,
        input_bounds=cfg.input_bounds,
    )
    return pgd(model, x, y, fast_cfg, rng, steps=1, fast=True)
