"""Training-objective formulas and the SSIM metric as pure functions of arrays."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .flow import FlowField, VisibilityMap
from .tensor import ImageTensor


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, ImageTensor) else np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class LossWeights:
    adv: float = 1.0
    l1: float = 1.0
    perceptual: float = 1.0

    def __post_init__(self):
        for name in ("adv", "l1", "perceptual"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ContractError(f"loss weight {name} must be finite and >= 0, got {v}")


@dataclass(frozen=True, eq=False)
class ProbMap:
    """Discriminator patch probabilities, strictly inside (0, 1)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.size == 0:
            raise ShapeError("empty probability map")
        if not np.all((v > 0.0) & (v < 1.0)):
            raise ContractError("probabilities must lie strictly inside (0, 1)")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def epe(predicted: FlowField, truth: FlowField, mask: VisibilityMap | None = None,
        masked: bool = True) -> float:
    """Mean end-point error over non-background pixels of ``mask`` (all pixels if unmasked)."""
    if predicted.vectors.shape != truth.vectors.shape:
        raise ShapeError(f"flow shapes differ: {predicted.vectors.shape} vs {truth.vectors.shape}")
    err = np.sqrt(((predicted.vectors - truth.vectors) ** 2).sum(axis=-1))
    if not masked:
        return float(err.mean()) if err.size else 0.0
    if mask is None:
        raise ContractError("masked EPE needs a visibility map")
    if (mask.height, mask.width) != err.shape:
        raise ShapeError("visibility map size does not match the flows")
    sel = err[mask.foreground]
    return float(sel.mean()) if sel.size else 0.0


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    m = logits.max(axis=axis, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def visibility_ce(logits, truth: VisibilityMap) -> float:
    """Mean over pixels of -log softmax(logits)[true label]; logits are H x W x 3."""
    lg = _arr(logits)
    if lg.ndim != 3 or lg.shape[2] != 3 or lg.shape[:2] != truth.labels.shape:
        raise ShapeError(f"logits {lg.shape} do not match visibility {truth.labels.shape} x 3")
    lp = log_softmax(lg)
    picked = np.take_along_axis(lp, truth.labels[..., None].astype(np.int64), axis=-1)
    return float(-picked.mean())


def adversarial_loss(d_real, d_fake) -> float:
    """mean(log D(real)) + mean(log(1 - D(fake))), means taken over patches."""
    real = d_real if isinstance(d_real, ProbMap) else ProbMap(d_real)
    fake = d_fake if isinstance(d_fake, ProbMap) else ProbMap(d_fake)
    return float(np.log(real.values).mean() + np.log1p(-fake.values).mean())


def l1_loss(generated, target) -> float:
    a, b = _arr(generated), _arr(target)
    if a.shape != b.shape:
        raise ShapeError(f"shapes differ: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).mean())


def perceptual_loss(features_a, features_b) -> float:
    """Sum over levels of the per-element mean squared feature difference."""
    if len(features_a) != len(features_b):
        raise ShapeError(f"{len(features_a)} vs {len(features_b)} feature levels")
    total = 0.0
    for j, (fa, fb) in enumerate(zip(features_a, features_b)):
        a, b = _arr(fa), _arr(fb)
        if a.shape != b.shape:
            raise ShapeError(f"level {j}: shapes differ {a.shape} vs {b.shape}")
        total += float(((a - b) ** 2).mean())
    return total


def total_loss(adv: float, l1: float, perc: float, weights: LossWeights) -> float:
    return weights.adv * adv + weights.l1 * l1 + weights.perceptual * perc


SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation of (H, W, C) with the 1-D kernel along both axes."""
    k = len(g)
    h = x.shape[0] - k + 1
    w = x.shape[1] - k + 1
    rows = sum(g[i] * x[i:i + h] for i in range(k))
    return sum(g[i] * rows[:, i:i + w] for i in range(k))


def ssim_map(a, b) -> np.ndarray:
    x, y = _arr(a), _arr(b)
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    if x.shape != y.shape:
        raise ShapeError(f"shapes differ: {x.shape} vs {y.shape}")
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise ShapeError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {x.shape[:2]}")
    g = gaussian_kernel()
    mu1 = _filter_valid(x, g)
    mu2 = _filter_valid(y, g)
    mu1_sq, mu2_sq, mu12 = mu1 * mu1, mu2 * mu2, mu1 * mu2
    s1 = _filter_valid(x * x, g) - mu1_sq
    s2 = _filter_valid(y * y, g) - mu2_sq
    s12 = _filter_valid(x * y, g) - mu12
    return ((2 * mu12 + SSIM_C1) * (2 * s12 + SSIM_C2)) / ((mu1_sq + mu2_sq + SSIM_C1) * (s1 + s2 + SSIM_C2))


def ssim(a, b) -> float:
    """Mean local SSIM (11x11 Gaussian window, sigma 1.5, unit dynamic range), channel-averaged."""
    m = ssim_map(a, b)
    return float(m.mean(axis=(0, 1)).mean())
