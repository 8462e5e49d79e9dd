"""Training-objective terms with analytic gradients.

Implements the sharpness weights, the sharpness-weighted spatial
variational loss (through a 3x3 channel-fusion map), the bidirectional
soft monotonicity loss on focus probabilities, the smooth-L1 depth loss,
and their weighted combination. Every gradient returned here is checked
against central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DepthMap, FocusProbabilityMap, ValidationError, area_downsample, named_rng
from .surface import SurfaceField

__all__ = [
    "SharpnessWeights",
    "GradFusionMap",
    "LossReport",
    "SpatialLossResult",
    "sharpness_weights",
    "depth_gradient",
    "apply_grad_fusion",
    "spatial_variational_loss",
    "focal_variational_loss",
    "depth_loss",
    "total_loss",
]

DEFAULT_LAMBDA_SV = 20.0
DEFAULT_LAMBDA_FV = 100.0
DEFAULT_BETA = 1.0


@dataclass(frozen=True)
class SharpnessWeights:
    """Per-pixel distribution over planes peaking at the in-focus plane, (H, W, N)."""

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        if q.ndim != 3:
            raise ValidationError("q must be (H, W, N)")
        if np.max(np.abs(q.sum(axis=-1) - 1.0)) > 1e-9:
            raise ValidationError("q rows must sum to 1")
        if q.min() <= 0.0 or q.max() >= 1.0:
            raise ValidationError("q entries must lie in (0, 1)")
        object.__setattr__(self, "q", q)


@dataclass
class GradFusionMap:
    """3x3 convolution fusing C2 surface channels into a 2-channel gradient.

    weights: (3, 3, C2, 2); bias: (2,).
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 4 or w.shape[:2] != (3, 3) or w.shape[3] != 2:
            raise ValidationError("weights must be (3, 3, C2, 2)")
        if b.shape != (2,):
            raise ValidationError("bias must have 2 entries")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValidationError("fusion map must be finite")
        self.weights = w
        self.bias = b

    @property
    def channels(self) -> int:
        return self.weights.shape[2]

    @staticmethod
    def random_init(channels: int, seed: int = 0) -> "GradFusionMap":
        """Small symmetric init: weights in [-0.1, 0.1], bias zero."""
        rng = named_rng(seed, "grad_fusion_init")
        w = rng.uniform(-0.1, 0.1, size=(3, 3, channels, 2))
        return GradFusionMap(w, np.zeros(2))


@dataclass(frozen=True)
class LossReport:
    """Weighted combination of the three objective terms."""

    total: float
    depth_term: float
    sv_term: float
    fv_term: float
    lambda_sv: float
    lambda_fv: float


@dataclass(frozen=True)
class SpatialLossResult:
    value: float
    grad_z: np.ndarray        # (H, W, C2, N)
    grad_weights: np.ndarray  # (3, 3, C2, 2)
    grad_bias: np.ndarray     # (2,)


def sharpness_weights(gt: DepthMap, focal_distances) -> SharpnessWeights:
    """Softmax over -|f_n - D*(x)|; invalid pixels get the uniform distribution."""
    gt.require_valid_pixels()
    f = np.asarray(focal_distances, dtype=np.float64)
    if f.shape[0] < 2:
        raise ValidationError("need at least two planes")
    d = np.where(gt.mask, gt.values, f.mean())
    logits = -np.abs(f[None, None, :] - d[..., None])
    logits = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    q = e / e.sum(axis=-1, keepdims=True)
    q[~gt.mask] = 1.0 / f.shape[0]
    return SharpnessWeights(q)


def depth_gradient(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences matching the DiffOperator stencil (zero last column/row)."""
    dx = np.zeros_like(values)
    dy = np.zeros_like(values)
    dx[:, :-1] = values[:, 1:] - values[:, :-1]
    dy[:-1, :] = values[1:, :] - values[:-1, :]
    return dx, dy


def apply_grad_fusion(z_plane: np.ndarray, theta: GradFusionMap) -> np.ndarray:
    """Apply the 3x3 fusion map to one (H, W, C2) slice, zero padding; returns (H, W, 2)."""
    h, w, _ = z_plane.shape
    zp = np.pad(z_plane, ((1, 1), (1, 1), (0, 0)))
    out = np.broadcast_to(theta.bias, (h, w, 2)).copy()
    for u in range(3):
        for v in range(3):
            out += zp[u : u + h, v : v + w, :] @ theta.weights[u, v]
    return out


def _grad_fusion_backward(z_plane, theta, upstream):
    """Gradients of apply_grad_fusion wrt the slice, the weights, and the bias."""
    h, w, c2 = z_plane.shape
    zp = np.pad(z_plane, ((1, 1), (1, 1), (0, 0)))
    gzp = np.zeros_like(zp)
    gw = np.zeros_like(theta.weights)
    for u in range(3):
        for v in range(3):
            gzp[u : u + h, v : v + w, :] += upstream @ theta.weights[u, v].T
            gw[u, v] = np.einsum("ijc,ijd->cd", zp[u : u + h, v : v + w, :], upstream)
    gb = upstream.sum(axis=(0, 1))
    return gzp[1 : h + 1, 1 : w + 1, :], gw, gb


def spatial_variational_loss(
    z: SurfaceField,
    theta: GradFusionMap,
    gt: DepthMap,
    q: SharpnessWeights,
) -> SpatialLossResult:
    """Sharpness-weighted L1 between ground-truth depth gradients and the
    fused surface-field gradients, summed over pixels and planes.

    The ground truth is area-downsampled (valid pixels only) to the surface
    resolution when shapes differ. Gradient components touching an invalid
    cell are excluded. The L1 subgradient at exact zeros is 0.
    """
    hs, ws, c2, n = z.shape
    if theta.channels != c2:
        raise ValidationError("fusion map channel count differs from the surface field")
    if gt.shape != (hs, ws):
        values, mask = area_downsample(gt.values, (hs, ws), gt.mask)
    else:
        values, mask = gt.values, gt.mask
    if q.q.shape != (hs, ws, n):
        raise ValidationError("q resolution mismatch after downsampling")
    if not mask.any():
        raise ValidationError("no valid cells at the surface resolution")

    target_dx, target_dy = depth_gradient(np.where(mask, values, 0.0))
    # A forward difference is trusted only when both its endpoints are valid.
    mx = np.zeros((hs, ws), dtype=bool)
    my = np.zeros((hs, ws), dtype=bool)
    mx[:, :-1] = mask[:, :-1] & mask[:, 1:]
    my[:-1, :] = mask[:-1, :] & mask[1:, :]
    comp_mask = np.stack([mx, my], axis=-1).astype(np.float64)  # (H, W, 2)
    target = np.stack([target_dx, target_dy], axis=-1)          # (H, W, 2)

    value = 0.0
    grad_z = np.zeros_like(z.z)
    grad_w = np.zeros_like(theta.weights)
    grad_b = np.zeros_like(theta.bias)
    for idx_n in range(n):
        pred = apply_grad_fusion(z.z[:, :, :, idx_n], theta)    # (H, W, 2)
        resid = target - pred
        qn = q.q[:, :, idx_n][..., None]
        value += float(np.sum(qn * comp_mask * np.abs(resid)))
        upstream = -qn * comp_mask * np.sign(resid)
        gz, gw, gb = _grad_fusion_backward(z.z[:, :, :, idx_n], theta, upstream)
        grad_z[:, :, :, idx_n] = gz
        grad_w += gw
        grad_b += gb
    return SpatialLossResult(value, grad_z, grad_w, grad_b)


def focal_variational_loss(p: FocusProbabilityMap | np.ndarray):
    """Bidirectional soft monotonicity loss and its gradient wrt the probabilities.

    Per pixel, with k the (lowest-index) argmax plane: squared hinge on
    decreases before k and on increases after k. Zero iff every pixel's
    distribution rises to its peak and falls afterwards. The argmax index
    is treated as a constant (it is piecewise constant in p).
    """
    probs = p.probs if isinstance(p, FocusProbabilityMap) else np.asarray(p, dtype=np.float64)
    n = probs.shape[-1]
    k = np.argmax(probs, axis=-1)                     # lowest index on ties
    d = probs[..., 1:] - probs[..., :-1]              # pair i: p_{i+1} - p_i
    pair_idx = np.arange(n - 1)
    rising = pair_idx < k[..., None]                  # pairs before the peak
    viol = np.where(rising, np.maximum(0.0, -d), np.maximum(0.0, d))
    value = float(np.sum(viol * viol))
    # dL/dd = -2v on rising pairs, +2v on falling pairs.
    dldd = np.where(rising, -2.0 * viol, 2.0 * viol)
    grad = np.zeros_like(probs)
    grad[..., :-1] -= dldd
    grad[..., 1:] += dldd
    return value, grad


def depth_loss(pred: DepthMap, gt: DepthMap, beta: float = DEFAULT_BETA):
    """Smooth-L1 depth loss averaged over jointly valid pixels, plus its gradient."""
    if pred.shape != gt.shape:
        raise ValidationError("prediction and ground truth dimensions differ")
    mask = pred.mask & gt.mask
    m = int(mask.sum())
    if m == 0:
        raise ValidationError("no jointly valid pixels")
    e = np.where(mask, pred.values - gt.values, 0.0)
    ae = np.abs(e)
    per_pixel = np.where(ae < beta, 0.5 * e * e / beta, ae - 0.5 * beta)
    value = float(per_pixel[mask].sum() / m)
    grad = np.where(ae < beta, e / beta, np.sign(e)) * mask / m
    return value, grad


def total_loss(
    depth_term: float,
    sv_term: float,
    fv_term: float,
    lambda_sv: float = DEFAULT_LAMBDA_SV,
    lambda_fv: float = DEFAULT_LAMBDA_FV,
) -> LossReport:
    """Combine the three terms: total = depth + lambda_sv * sv + lambda_fv * fv."""
    total = depth_term + lambda_sv * sv_term + lambda_fv * fv_term
    return LossReport(total, depth_term, sv_term, fv_term, lambda_sv, lambda_fv)
