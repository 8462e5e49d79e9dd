"""Focus probabilities from logits and probability-weighted depth fusion."""

from __future__ import annotations

import numpy as np

from .core import DepthMap, FocusProbabilityMap, ValidationError
from .volume import SharpnessVolume

__all__ = [
    "softmax",
    "to_probabilities",
    "depth_from_probabilities",
    "argmax_baseline",
]


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax (max-subtracted)."""
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def to_probabilities(logits: np.ndarray) -> FocusProbabilityMap:
    """Per-pixel softmax over the plane axis of an (H, W, N) logit grid."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 3:
        raise ValidationError("logits must be (H, W, N)")
    if not np.all(np.isfinite(logits)):
        raise ValidationError("logits must be finite")
    return FocusProbabilityMap(softmax(logits))


def depth_from_probabilities(p: FocusProbabilityMap, focal_distances) -> DepthMap:
    """Fused depth as the per-pixel expectation over focal distances."""
    f = np.asarray(focal_distances, dtype=np.float64)
    if f.shape[0] != p.num_planes:
        raise ValidationError("plane count mismatch")
    values = p.probs @ f
    return DepthMap(values, np.ones(values.shape, dtype=bool))


def argmax_baseline(s: SharpnessVolume, focal_distances) -> DepthMap:
    """Classical baseline: depth of the sharpest plane per pixel (lowest index wins ties)."""
    f = np.asarray(focal_distances, dtype=np.float64)
    if f.shape[0] != s.sharpness.shape[-1]:
        raise ValidationError("plane count mismatch")
    idx = np.argmax(s.sharpness, axis=-1)  # argmax takes the first maximum
    values = f[idx]
    return DepthMap(values, np.ones(values.shape, dtype=bool))
