"""Core domain types and file I/O for focal-stack depth estimation.

Provides the immutable containers shared by every other module (focal
stacks, depth maps, focus probability maps), lossless PFM depth I/O,
16-bit PNG depth I/O, and JSON scene manifests.
"""

from __future__ import annotations

import hashlib
import json
import os

import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "FocalStack",
    "DepthMap",
    "FocusProbabilityMap",
    "StackManifest",
    "load_manifest",
    "save_manifest",
    "load_stack",
    "load_depth",
    "save_depth",
    "load_image",
    "read_pfm",
    "write_pfm",
    "to_grayscale",
    "area_downsample",
    "named_rng",
    "atomic_write_bytes",
    "atomic_write_text",
]

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class ValidationError(ValueError):
    """Raised when a domain invariant is violated."""


@dataclass(frozen=True)
class FocalStack:
    """Ordered stack of N images with strictly increasing focal distances.

    planes: (N, H, W) or (N, H, W, 3) array with values in [0, 1].
    focal_distances: (N,) array of focal distances in meters.
    """

    planes: np.ndarray
    focal_distances: np.ndarray

    def __post_init__(self):
        planes = np.asarray(self.planes, dtype=np.float64)
        f = np.asarray(self.focal_distances, dtype=np.float64)
        if planes.ndim not in (3, 4) or (planes.ndim == 4 and planes.shape[-1] != 3):
            raise ValidationError("planes must be (N,H,W) or (N,H,W,3)")
        if planes.shape[0] < 2:
            raise ValidationError("a focal stack needs at least two planes")
        if f.ndim != 1 or f.shape[0] != planes.shape[0]:
            raise ValidationError("count mismatch between planes and focal distances")
        if not np.all(np.isfinite(f)) or np.any(f <= 0):
            raise ValidationError("focal distances must be finite and positive")
        if np.any(np.diff(f) <= 0):
            raise ValidationError("non-increasing focal distances")
        if not np.all(np.isfinite(planes)):
            raise ValidationError("pixel values must be finite")
        if planes.min() < 0.0 or planes.max() > 1.0:
            raise ValidationError("pixel values must lie in [0, 1]")
        object.__setattr__(self, "planes", planes)
        object.__setattr__(self, "focal_distances", f)
        planes.setflags(write=False)
        f.setflags(write=False)

    @property
    def num_planes(self) -> int:
        return self.planes.shape[0]

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    def grayscale(self) -> np.ndarray:
        """Return the stack as (N, H, W) luma images."""
        return to_grayscale(self.planes)


@dataclass(frozen=True)
class DepthMap:
    """Scalar depth grid in meters with a validity mask.

    values: (H, W) float array; mask: (H, W) bool array. Masked-valid
    entries are finite and strictly positive.
    """

    values: np.ndarray
    mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValidationError("depth values must be a 2-D grid")
        if self.mask is None:
            mask = np.isfinite(values) & (values > 0)
        else:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != values.shape:
                raise ValidationError("mask shape must match values")
            # Re-validation is idempotent: never mark bad pixels valid.
            mask = mask & np.isfinite(values) & (values > 0)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        values.setflags(write=False)
        mask.setflags(write=False)

    @property
    def shape(self):
        return self.values.shape

    def valid_count(self) -> int:
        return int(self.mask.sum())

    def require_valid_pixels(self):
        if not self.mask.any():
            raise ValidationError("depth map has no valid pixels")


@dataclass(frozen=True)
class FocusProbabilityMap:
    """Per-pixel probability distribution over the N focal planes.

    probs: (H, W, N) array, nonnegative, summing to 1 along the last axis.
    """

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 3:
            raise ValidationError("probs must be (H, W, N)")
        if not np.all(np.isfinite(probs)):
            raise ValidationError("probabilities must be finite")
        if probs.min() < 0.0 or probs.max() > 1.0 + 1e-9:
            raise ValidationError("probabilities must lie in [0, 1]")
        sums = probs.sum(axis=-1)
        if np.max(np.abs(sums - 1.0)) > 1e-6:
            raise ValidationError("per-pixel probabilities must sum to 1")
        object.__setattr__(self, "probs", probs)
        probs.setflags(write=False)

    @property
    def num_planes(self) -> int:
        return self.probs.shape[-1]


@dataclass(frozen=True)
class StackManifest:
    """One scene: image paths, focal distances, optional ground truth."""

    image_paths: tuple
    focal_distances: tuple
    depth_path: str | None = None
    scene_id: str = ""

    def __post_init__(self):
        paths = tuple(str(p) for p in self.image_paths)
        f = tuple(float(v) for v in self.focal_distances)
        if len(paths) != len(f):
            raise ValidationError("count mismatch between images and focal distances")
        if len(paths) < 2:
            raise ValidationError("a manifest needs at least two planes")
        if any(b - a <= 0 for a, b in zip(f, f[1:])):
            raise ValidationError("non-increasing focal distances")
        object.__setattr__(self, "image_paths", paths)
        object.__setattr__(self, "focal_distances", f)


def load_manifest(path) -> StackManifest:
    """Read a JSON scene manifest (fields: images, focal_distances_m, depth, scene_id)."""
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    base = path.parent
    images = [str(base / p) for p in doc["images"]]
    depth = doc.get("depth")
    return StackManifest(
        image_paths=images,
        focal_distances=doc["focal_distances_m"],
        depth_path=str(base / depth) if depth else None,
        scene_id=doc.get("scene_id", path.stem),
    )


def save_manifest(manifest: StackManifest, path):
    """Write a manifest as JSON with paths relative to the manifest location."""
    base = Path(path).parent
    doc = {
        "images": [os.path.relpath(p, base) for p in manifest.image_paths],
        "focal_distances_m": list(manifest.focal_distances),
        "depth": os.path.relpath(manifest.depth_path, base) if manifest.depth_path else None,
        "scene_id": manifest.scene_id,
    }
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def load_image(path) -> np.ndarray:
    """Load a PNG as float64 in [0, 1], grayscale (H,W) or RGB (H,W,3)."""
    img = Image.open(path)
    if img.mode in ("I;16", "I;16B", "I"):
        arr = np.asarray(img, dtype=np.float64) / 65535.0
    elif img.mode == "L":
        arr = np.asarray(img, dtype=np.float64) / 255.0
    else:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return np.clip(arr, 0.0, 1.0)


def load_stack(manifest: StackManifest) -> FocalStack:
    """Load and validate the focal stack referenced by a manifest."""
    planes = []
    for p in manifest.image_paths:
        if not os.path.exists(p):
            raise FileNotFoundError(f"missing image: {p}")
        planes.append(load_image(p))
    shapes = {a.shape for a in planes}
    if len(shapes) != 1:
        raise ValidationError(f"dimension mismatch across planes: {sorted(shapes)}")
    return FocalStack(np.stack(planes), np.asarray(manifest.focal_distances))


def read_pfm(path) -> np.ndarray:
    """Read a single-channel little-endian PFM file as float32 (H, W)."""
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header != b"Pf":
            raise ValidationError(f"malformed PFM header: {header!r}")
        dims = fh.readline().split()
        if len(dims) != 2:
            raise ValidationError("malformed PFM dimension line")
        w, h = int(dims[0]), int(dims[1])
        scale = float(fh.readline().strip())
        if scale >= 0:
            raise ValidationError("only little-endian PFM is supported")
        data = np.frombuffer(fh.read(4 * w * h), dtype="<f4")
        if data.size != w * h:
            raise ValidationError("truncated PFM payload")
    # PFM stores rows bottom-to-top.
    return data.reshape(h, w)[::-1].copy()


def write_pfm(path, values: np.ndarray):
    """Write a single-channel little-endian PFM file (float32, lossless)."""
    arr = np.asarray(values, dtype="<f4")
    if arr.ndim != 2:
        raise ValidationError("PFM writer expects a 2-D array")
    h, w = arr.shape
    payload = b"Pf\n" + f"{w} {h}\n".encode() + b"-1.0\n" + arr[::-1].tobytes()
    atomic_write_bytes(path, payload)


def load_depth(path, png_scale: float = 1000.0) -> DepthMap:
    """Load a depth map from PFM (meters) or 16-bit PNG (value / png_scale meters).

    Pixels that are non-finite or <= 0 are masked invalid.
    """
    path = str(path)
    if path.lower().endswith(".pfm"):
        values = read_pfm(path).astype(np.float64)
    elif path.lower().endswith(".png"):
        img = Image.open(path)
        if img.mode not in ("I;16", "I;16B", "I"):
            raise ValidationError(f"unsupported PNG bit depth for depth: {img.mode}")
        values = np.asarray(img, dtype=np.float64) / png_scale
    else:
        raise ValidationError(f"unsupported depth format: {path}")
    return DepthMap(values)


def save_depth(depth: DepthMap, path, png_scale: float = 1000.0):
    """Save a depth map as PFM (lossless) or 16-bit PNG (rounded to 1/png_scale)."""
    path = str(path)
    values = np.where(depth.mask, depth.values, 0.0)
    if path.lower().endswith(".pfm"):
        write_pfm(path, values)
    elif path.lower().endswith(".png"):
        scaled = np.clip(np.round(values * png_scale), 0, 65535).astype("<u2")
        img = Image.fromarray(scaled)
        buf = tempfile.NamedTemporaryFile(dir=os.path.dirname(os.path.abspath(path)), delete=False)
        try:
            img.save(buf, format="PNG")
            buf.close()
            os.replace(buf.name, path)
        except BaseException:
            buf.close()
            os.unlink(buf.name)
            raise
    else:
        raise ValidationError(f"unsupported depth format: {path}")


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Convert RGB (..., 3) to luma; pass grayscale through unchanged."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape[-1] == 3 and img.ndim >= 3:
        return img @ LUMA_WEIGHTS
    return img


def area_downsample(values: np.ndarray, out_shape, mask: np.ndarray | None = None):
    """Area-average downsampling to out_shape = (Hs, Ws).

    Handles non-integer ratios by weighting fractional source-box overlap.
    With a mask, averages valid pixels only; returns (out, out_mask) where
    out_mask marks cells that saw at least one valid source pixel.
    """
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape
    hs, ws = out_shape
    if hs > h or ws > w:
        raise ValidationError("area_downsample cannot upsample")
    wy = _overlap_weights(h, hs)  # (hs, h)
    wx = _overlap_weights(w, ws)  # (ws, w)
    if mask is None:
        out = wy @ values @ wx.T
        denom = wy @ np.ones((h, w)) @ wx.T
        return out / denom
    m = mask.astype(np.float64)
    num = wy @ (values * m) @ wx.T
    denom = wy @ m @ wx.T
    out_mask = denom > 1e-12
    out = np.zeros_like(num)
    out[out_mask] = num[out_mask] / denom[out_mask]
    return out, out_mask


def _overlap_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) matrix of source-interval overlaps for area averaging."""
    step = n_in / n_out
    w = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = i * step, (i + 1) * step
        j0, j1 = int(np.floor(lo)), int(np.ceil(hi))
        for j in range(j0, min(j1, n_in)):
            w[i, j] = min(hi, j + 1) - max(lo, j)
    return w


def named_rng(seed: int, name: str) -> np.random.Generator:
    """Deterministic per-module random stream derived from one root seed."""
    digest = hashlib.sha256(name.encode()).digest()
    stream = int.from_bytes(digest[:8], "big")
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream]))


def atomic_write_bytes(path, payload: bytes):
    """Write bytes via a temp file and rename, so readers never see partial files."""
    path = str(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode())
