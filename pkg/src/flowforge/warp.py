"""Flow-guided bilinear warping with analytic gradients, visibility gating and blending.

Sampling positions are clamped to the image (clamp-to-edge). Where bilinear
interpolation has a kink the right-sided derivative is reported.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .flow import INVISIBLE, VISIBLE, FlowField, VisibilityMap
from .tensor import ImageTensor


@dataclass(frozen=True, eq=False)
class WarpGradients:
    """Jacobians of one bilinear warp.

    ``tap_index``/``tap_weight`` (H, W, 4) give d output / d input as four flat
    input-pixel indices and weights per output pixel (shared by all channels).
    ``d_flow`` (H, W, C, 2) holds d output[c] / d (dx, dy).
    """

    height: int
    width: int
    tap_index: np.ndarray
    tap_weight: np.ndarray
    d_flow: np.ndarray

    @property
    def d_flow_summed(self) -> np.ndarray:
        return self.d_flow.sum(axis=2)

    def backward(self, grad_output: np.ndarray):
        """Vector-Jacobian product: (dL/d input (H, W, C), dL/d flow (H, W, 2))."""
        g = np.asarray(grad_output, dtype=np.float64)
        if g.shape[:2] != (self.height, self.width) or g.shape[2] != self.d_flow.shape[2]:
            raise ShapeError(f"grad_output shape {g.shape} does not match the warp")
        C = g.shape[2]
        grad_in = np.zeros((self.height * self.width, C))
        contrib = self.tap_weight[..., None] * g[:, :, None, :]  # (H, W, 4, C)
        np.add.at(grad_in, self.tap_index.reshape(-1), contrib.reshape(-1, C))
        grad_flow = np.einsum("hwc,hwcd->hwd", g, self.d_flow)
        return grad_in.reshape(self.height, self.width, C), grad_flow


def _check(input: ImageTensor, flow: FlowField):
    if (input.height, input.width) != (flow.height, flow.width):
        raise ShapeError(
            f"input is {input.height}x{input.width} but flow is {flow.height}x{flow.width}")


def _sample_setup(H: int, W: int, vectors: np.ndarray):
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    sx = xs + vectors[..., 0]
    sy = ys + vectors[..., 1]
    cx = np.clip(sx, 0.0, W - 1)
    cy = np.clip(sy, 0.0, H - 1)
    x0 = np.minimum(np.floor(cx).astype(np.int64), max(W - 2, 0))
    y0 = np.minimum(np.floor(cy).astype(np.int64), max(H - 2, 0))
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    ax = cx - x0
    ay = cy - y0
    # right-sided derivative of the clamp
    gx = ((sx >= 0) & (sx < W - 1)).astype(np.float64)
    gy = ((sy >= 0) & (sy < H - 1)).astype(np.float64)
    return x0, x1, y0, y1, ax, ay, gx, gy


def bilinear_warp(input: ImageTensor, flow: FlowField) -> ImageTensor:
    """output(u) = input sampled bilinearly at u + flow(u)."""
    _check(input, flow)
    H, W = input.height, input.width
    x0, x1, y0, y1, ax, ay, _, _ = _sample_setup(H, W, flow.vectors)
    I = input.data
    ax, ay = ax[..., None], ay[..., None]
    top = (1.0 - ax) * I[y0, x0] + ax * I[y0, x1]
    bot = (1.0 - ax) * I[y1, x0] + ax * I[y1, x1]
    return ImageTensor((1.0 - ay) * top + ay * bot, input.role)


def bilinear_warp_with_grad(input: ImageTensor, flow: FlowField):
    _check(input, flow)
    H, W = input.height, input.width
    x0, x1, y0, y1, ax, ay, gx, gy = _sample_setup(H, W, flow.vectors)
    out = bilinear_warp(input, flow)
    I = input.data
    i00, i01, i10, i11 = I[y0, x0], I[y0, x1], I[y1, x0], I[y1, x1]
    axe, aye = ax[..., None], ay[..., None]
    d_dx = gx[..., None] * ((1.0 - aye) * (i01 - i00) + aye * (i11 - i10))
    d_dy = gy[..., None] * ((1.0 - axe) * (i10 - i00) + axe * (i11 - i01))
    tap_index = np.stack([y0 * W + x0, y0 * W + x1, y1 * W + x0, y1 * W + x1], axis=-1)
    tap_weight = np.stack([(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay], axis=-1)
    grads = WarpGradients(H, W, tap_index, tap_weight, np.stack([d_dx, d_dy], axis=-1))
    return out, grads


def visibility_gate(feature: ImageTensor, vis: VisibilityMap) -> ImageTensor:
    """Split channels into a visible-only half and an invisible-only half (2C channels)."""
    if (feature.height, feature.width) != (vis.height, vis.width):
        raise ShapeError(
            f"feature is {feature.height}x{feature.width} but visibility is {vis.height}x{vis.width}")
    lab = vis.labels[..., None]
    zero = np.zeros_like(feature.data)
    visible = np.where(lab == VISIBLE, feature.data, zero)
    invisible = np.where(lab == INVISIBLE, feature.data, zero)
    return ImageTensor(np.concatenate([visible, invisible], axis=2), "feature")


def warp_features(feature: ImageTensor, flow: FlowField, vis: VisibilityMap) -> ImageTensor:
    return visibility_gate(bilinear_warp(feature, flow), vis)


def warp_feature_pyramid(features, pyramid):
    """Apply ``warp_features`` level by level; ``pyramid`` comes from ``downsample_flow``."""
    if len(features) > len(pyramid):
        raise ShapeError(f"{len(features)} feature levels but only {len(pyramid)} flow levels")
    return [warp_features(f, F, V) for f, (F, V) in zip(features, pyramid)]


def blend(warped: ImageTensor, generated: ImageTensor, weight: ImageTensor) -> ImageTensor:
    """weight * warped + (1 - weight) * generated, weight broadcast over channels."""
    if warped.shape != generated.shape:
        raise ShapeError(f"warped {warped.shape} and generated {generated.shape} differ")
    if weight.channels != 1:
        raise ContractError("weight map must have one channel")
    if (weight.height, weight.width) != (warped.height, warped.width):
        raise ShapeError("weight map size does not match the images")
    z = weight.data
    if z.min() < 0.0 or z.max() > 1.0:
        raise ContractError("weight map values must lie in [0, 1]")
    w, g = warped.data, generated.data
    out = z * w + (1.0 - z) * g
    # rounding can leave the convex hull by one ulp
    out = np.clip(out, np.minimum(w, g), np.maximum(w, g))
    return ImageTensor(out, warped.role)
