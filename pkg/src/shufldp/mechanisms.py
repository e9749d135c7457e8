"""Client-side gradient privatization.

Pipeline per client and round: clip the update to an L2 ball of radius C,
map every coordinate through the fixed affine map [-C, C] -> [0, 1] so that
the per-coordinate sensitivity is 1, then add Laplace noise whose scale is
split between the classifier and the feature extractor by the coefficient k.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NonFiniteError, OutOfRangeError
from .model import GradientTuple

CONSTANT = "constant"
LINEAR_DECAY = "linear-decay"
_SLACK = 1e-12


@dataclass(frozen=True)
class PrivacyParams:
    epsilon0: float
    delta_limit: float
    k: float = 0.5
    clip_c: float = 1.0
    sensitivity: float = 1.0
    schedule: str = CONSTANT
    decay_rounds: Optional[int] = None

    def __post_init__(self):
        if not self.epsilon0 > 0:
            raise ValueError(f"epsilon0 must be > 0, got {self.epsilon0}")
        if not 0 < self.delta_limit < 1:
            raise ValueError(f"delta_limit must lie in (0, 1), got {self.delta_limit}")
        if not 0 < self.k < 1:
            raise ValueError(f"k must lie strictly inside (0, 1), got {self.k}")
        if not self.clip_c > 0:
            raise ValueError(f"clip_c must be > 0, got {self.clip_c}")
        if not self.sensitivity > 0:
            raise ValueError(f"sensitivity must be > 0, got {self.sensitivity}")
        if self.schedule not in (CONSTANT, LINEAR_DECAY):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.schedule == LINEAR_DECAY and (self.decay_rounds is None or self.decay_rounds < 1):
            raise ValueError("linear-decay schedule needs decay_rounds >= 1")


def _require_finite(g: GradientTuple) -> None:
    if not (np.isfinite(g.extractor).all() and np.isfinite(g.classifier).all()):
        raise NonFiniteError("gradient contains NaN or Inf")


def l2_norm(g: GradientTuple) -> float:
    return float(np.sqrt(np.dot(g.extractor, g.extractor) + np.dot(g.classifier, g.classifier)))


def clip_gradient(g: GradientTuple, clip_c: float) -> GradientTuple:
    """Scale ``g`` onto the L2 ball of radius ``clip_c`` if it lies outside."""
    if not clip_c > 0:
        raise ValueError(f"clip_c must be > 0, got {clip_c}")
    _require_finite(g)
    norm = l2_norm(g)
    if norm <= clip_c:
        return g
    factor = clip_c / norm
    return g.map(lambda v: v * factor)


def normalize(g: GradientTuple, clip_c: float) -> GradientTuple:
    _require_finite(g)
    # clipping can overshoot the bound by one ulp on a single-coordinate vector
    bound = clip_c * (1.0 + _SLACK)
    for part in (g.extractor, g.classifier):
        if part.size and (part.min() < -bound or part.max() > bound):
            raise OutOfRangeError(f"entries must lie in [-{clip_c}, {clip_c}]; clip first")
    return g.map(lambda v: np.clip((v + clip_c) / (2.0 * clip_c), 0.0, 1.0))


def denormalize(g: GradientTuple, clip_c: float) -> GradientTuple:
    """Inverse of :func:`normalize`; accepts values pushed outside [0, 1] by noise."""
    _require_finite(g)
    return g.map(lambda v: 2.0 * clip_c * (v - 0.5))


def laplace_from_uniform(u, scale: float):
    """Inverse CDF of Laplace(0, scale) evaluated at ``u`` in (-0.5, 0.5)."""
    u = np.asarray(u, dtype=np.float64)
    out = -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))
    return float(out) if out.ndim == 0 else out


def _centered_uniform(rng: np.random.Generator, size):
    # rng.random() is in [0, 1); a draw of exactly 0 would give u = -0.5 and
    # an infinite sample, so redraw those.
    u = rng.random(size)
    zeros = u == 0.0
    while np.any(zeros):
        u[zeros] = rng.random(int(zeros.sum()))
        zeros = u == 0.0
    return u - 0.5


def laplace_sample(rng: np.random.Generator, scale: float) -> float:
    if not scale > 0:
        raise ValueError(f"Laplace scale must be > 0, got {scale}")
    return laplace_from_uniform(_centered_uniform(rng, 1)[0], scale)


def laplace_noise(rng: np.random.Generator, scale: float, size: int) -> np.ndarray:
    """``size`` independent Laplace(0, scale) draws, same sampler as :func:`laplace_sample`."""
    if not scale > 0:
        raise ValueError(f"Laplace scale must be > 0, got {scale}")
    return laplace_from_uniform(_centered_uniform(rng, size), scale)


def noise_scales(p: PrivacyParams, eps_t: float):
    """Return ``(classifier_scale, extractor_scale)``; they sum to Δf/ε_t."""
    if not eps_t > 0:
        raise ValueError(f"eps_t must be > 0, got {eps_t}")
    base = p.sensitivity / eps_t
    return (1.0 - p.k) * base, p.k * base


def perturb(g: GradientTuple, p: PrivacyParams, eps_t: float, rng: np.random.Generator) -> GradientTuple:
    """Add split Laplace noise to a clipped, normalized gradient.

    A larger ``k`` puts less noise on the classifier and more on the
    extractor. Noise is drawn extractor first, then classifier.
    """
    _require_finite(g)
    cls_scale, ext_scale = noise_scales(p, eps_t)
    ext = g.extractor + laplace_noise(rng, ext_scale, g.extractor.size)
    cls = g.classifier + laplace_noise(rng, cls_scale, g.classifier.size)
    return GradientTuple(ext, cls, g.layout)


def epsilon_schedule(p: PrivacyParams, t: int) -> float:
    if t < 1:
        raise ValueError(f"round index starts at 1, got {t}")
    if p.schedule == CONSTANT:
        return p.epsilon0
    decayed = p.epsilon0 * (1.0 - (t - 1) / p.decay_rounds)
    return max(decayed, p.epsilon0 / 10.0)


def privatize(g: GradientTuple, p: PrivacyParams, eps_t: Optional[float], rng) -> GradientTuple:
    """Clip, normalize and (when ``eps_t`` is given) perturb."""
    out = normalize(clip_gradient(g, p.clip_c), p.clip_c)
    if eps_t is None:
        return out
    return perturb(out, p, eps_t, rng)


__all__ = [
    "GradientTuple",
    "PrivacyParams",
    "clip_gradient",
    "normalize",
    "denormalize",
    "laplace_sample",
    "laplace_noise",
    "laplace_from_uniform",
    "noise_scales",
    "perturb",
    "epsilon_schedule",
    "privatize",
    "l2_norm",
]
