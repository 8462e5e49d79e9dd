"""Focal stack synthesis from an RGB image plus ground-truth depth.

A virtual thin-lens camera assigns each pixel a circle of confusion (CoC)
from its depth and the plane's focus distance; the image is blurred with
normalized disc kernels using layered back-to-front compositing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import DepthMap, FocalStack, ValidationError

__all__ = ["CameraParams", "coc_diameter", "disc_kernel", "synthesize_stack"]


@dataclass(frozen=True)
class CameraParams:
    """Thin-lens camera parameters for defocus synthesis.

    focal_length_f: lens focal length in meters.
    f_number_N: aperture f-number (dimensionless).
    pixel_pitch: meters per pixel, converting CoC diameter to pixel radius.
    max_coc_px: clamp on the blur radius in pixels.
    """

    focal_length_f: float
    f_number_N: float
    pixel_pitch: float = 1e-5
    max_coc_px: int = 31

    def __post_init__(self):
        if self.focal_length_f <= 0:
            raise ValidationError("focal length must be positive")
        if self.f_number_N <= 0:
            raise ValidationError("f-number must be positive")
        if self.pixel_pitch <= 0:
            raise ValidationError("pixel pitch must be positive")
        if self.max_coc_px < 0:
            raise ValidationError("max_coc_px must be nonnegative")


def coc_diameter(s1: float, s2: float, cam: CameraParams) -> float:
    """Circle-of-confusion diameter (meters) for focus distance s1 and
    scene distance s2: c = (|s2 - s1| / s2) * f^2 / (N * (s1 - f)).
    """
    f = cam.focal_length_f
    if s1 <= f:
        raise ValidationError(f"in-focus distance {s1} must exceed focal length {f}")
    if s2 <= 0:
        raise ValidationError("scene distance must be positive")
    return (abs(s2 - s1) / s2) * (f * f) / (cam.f_number_N * (s1 - f))


def coc_radius_px(s1: float, s2: float, cam: CameraParams) -> int:
    """Blur radius in whole pixels: round(c / (2 * pitch)), clamped."""
    c = coc_diameter(s1, s2, cam)
    return int(min(round(c / (2.0 * cam.pixel_pitch)), cam.max_coc_px))


def disc_kernel(radius: int) -> np.ndarray:
    """Hard-edged disc kernel of the given pixel radius, normalized to sum 1.

    Radius 0 is the 1x1 identity kernel.
    """
    if radius < 0:
        raise ValidationError("radius must be nonnegative")
    if radius == 0:
        return np.ones((1, 1))
    y, x = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    k = (x * x + y * y <= radius * radius).astype(np.float64)
    return k / k.sum()


def _blur(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """2-D convolution with replicate padding, applied per channel."""
    if kernel.shape == (1, 1):
        return img.copy()
    if img.ndim == 2:
        return ndimage.convolve(img, kernel, mode="nearest")
    return np.stack(
        [ndimage.convolve(img[..., c], kernel, mode="nearest") for c in range(img.shape[-1])],
        axis=-1,
    )


def synthesize_stack(
    rgb: np.ndarray,
    depth: DepthMap,
    focus_distances,
    cam: CameraParams,
    layers: int = 16,
) -> FocalStack:
    """Render an N-plane focal stack from an image and its depth map.

    Depth is quantized into `layers` uniform bins; each layer is blurred by
    the CoC of its occupied-pixel mean depth and composited back-to-front
    with the layer's blurred binary mask as alpha. Pixels whose depth equals
    a plane's focus distance are untouched on that plane (zero-radius
    kernel), away from the blur bleed of nearer layers.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    focus_distances = np.asarray(focus_distances, dtype=np.float64)
    if rgb.shape[:2] != depth.shape:
        raise ValidationError("rgb and depth dimensions differ")
    if layers < 2:
        raise ValidationError("layers must be >= 2")
    if np.any(np.diff(focus_distances) <= 0):
        raise ValidationError("non-increasing focal distances")
    depth.require_valid_pixels()

    d = np.where(depth.mask, depth.values, np.nan)
    dmin = np.nanmin(d)
    dmax = np.nanmax(d)
    # Bin assignment over [dmin, dmax]; degenerate (constant) scenes land in bin 0.
    if dmax > dmin:
        idx = np.clip(((d - dmin) / (dmax - dmin) * layers).astype(int), 0, layers - 1)
    else:
        idx = np.zeros(depth.shape, dtype=int)
    idx = np.where(depth.mask, idx, 0)  # invalid pixels ride along in bin 0

    # Representative depth per bin: mean of the member pixels, so a layer
    # whose pixels all sit exactly at a focus distance gets a zero radius.
    reps = []
    for k in range(layers):
        member = (idx == k) & depth.mask
        if member.any():
            reps.append(float(d[member].mean()))
        else:
            reps.append(dmin + (k + 0.5) * (dmax - dmin) / layers)

    planes = []
    for fd in focus_distances:
        acc_color = np.zeros_like(rgb)
        acc_alpha = np.zeros(depth.shape)
        # Back-to-front: farthest bin first.
        order = sorted(range(layers), key=lambda k: reps[k], reverse=True)
        for k in order:
            member = idx == k
            if not member.any():
                continue
            kernel = disc_kernel(coc_radius_px(fd, reps[k], cam))
            m = member.astype(np.float64)
            mm = m[..., None] if rgb.ndim == 3 else m
            color_k = _blur(rgb * mm, kernel)
            alpha_k = _blur(m, kernel)
            a = alpha_k[..., None] if rgb.ndim == 3 else alpha_k
            acc_color = color_k + (1.0 - a) * acc_color
            acc_alpha = alpha_k + (1.0 - alpha_k) * acc_alpha
        # Normalize where coverage dips below 1 (disc edges near image border).
        a = np.maximum(acc_alpha, 1e-12)
        plane = acc_color / (a[..., None] if rgb.ndim == 3 else a)
        planes.append(np.clip(plane, 0.0, 1.0))

    return FocalStack(np.stack(planes), focus_distances)
