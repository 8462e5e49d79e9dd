"""Focus volume construction and classical per-plane sharpness measures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import FocalStack, ValidationError, to_grayscale

__all__ = [
    "FocusVolume",
    "SharpnessVolume",
    "build_focus_volume",
    "sharpness_measure",
    "default_base_features",
]


@dataclass(frozen=True)
class FocusVolume:
    """Per-plane features augmented with focal differences.

    features: (H, W, 2*C1, N). Channels [0, C1) hold the base features,
    channels [C1, 2*C1) hold the forward focal difference (backward for
    the last plane).
    """

    features: np.ndarray

    @property
    def num_planes(self) -> int:
        return self.features.shape[-1]

    @property
    def base_channels(self) -> int:
        return self.features.shape[2] // 2


@dataclass(frozen=True)
class SharpnessVolume:
    """Nonnegative per-pixel, per-plane focus measure, shape (H, W, N)."""

    sharpness: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sharpness, dtype=np.float64)
        if s.ndim != 3:
            raise ValidationError("sharpness must be (H, W, N)")
        if not np.all(np.isfinite(s)) or s.min() < 0:
            raise ValidationError("sharpness must be finite and nonnegative")
        object.__setattr__(self, "sharpness", s)


def build_focus_volume(stack: FocalStack, base_features: np.ndarray) -> FocusVolume:
    """Augment per-plane features with their focal-axis differences.

    base_features: (H, W, C1, N). Output channels double: plane n < N-1
    carries features[n+1] - features[n]; the last plane carries the
    backward difference features[N-1] - features[N-2].
    """
    v = np.asarray(base_features, dtype=np.float64)
    if v.ndim != 4:
        raise ValidationError("base features must be (H, W, C1, N)")
    n = v.shape[-1]
    if n != stack.num_planes:
        raise ValidationError("feature plane count differs from the stack")
    if n < 2:
        raise ValidationError("need at least two planes")
    if v.shape[:2] != (stack.height, stack.width):
        raise ValidationError("feature dimensions differ from the stack")
    diffs = np.empty_like(v)
    diffs[..., : n - 1] = v[..., 1:] - v[..., :-1]
    diffs[..., n - 1] = v[..., n - 1] - v[..., n - 2]
    return FocusVolume(np.concatenate([v, diffs], axis=2))


def default_base_features(stack: FocalStack) -> np.ndarray:
    """Training-free base features: grayscale plus Sobel gradient magnitude (C1=2)."""
    gray = stack.grayscale()
    feats = np.empty((stack.height, stack.width, 2, stack.num_planes))
    for n in range(stack.num_planes):
        g = gray[n]
        gx = ndimage.sobel(g, axis=1, mode="nearest")
        gy = ndimage.sobel(g, axis=0, mode="nearest")
        feats[..., 0, n] = g
        feats[..., 1, n] = np.hypot(gx, gy)
    return feats


def sharpness_measure(stack: FocalStack, kind: str = "laplacian_sq", window: int = 5) -> SharpnessVolume:
    """Classical focus measure per plane, box-smoothed over `window`.

    kind 'laplacian_sq': squared 4-neighbor discrete Laplacian.
    kind 'tenengrad': squared Sobel gradient magnitude.
    """
    if window < 1 or window % 2 == 0:
        raise ValidationError("window must be a positive odd integer")
    gray = stack.grayscale()
    out = np.empty((stack.height, stack.width, stack.num_planes))
    for n in range(stack.num_planes):
        g = gray[n]
        if kind == "laplacian_sq":
            s = ndimage.laplace(g, mode="nearest") ** 2
        elif kind == "tenengrad":
            gx = ndimage.sobel(g, axis=1, mode="nearest")
            gy = ndimage.sobel(g, axis=0, mode="nearest")
            s = gx * gx + gy * gy
        else:
            raise ValidationError(f"unknown sharpness kind: {kind}")
        if window > 1:
            s = ndimage.uniform_filter(s, size=window, mode="nearest")
        out[..., n] = s
    return SharpnessVolume(np.maximum(out, 0.0))
