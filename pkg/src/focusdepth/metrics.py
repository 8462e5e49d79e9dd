"""Depth-map evaluation metrics and the invalid-focus-trend diagnostic."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .core import DepthMap, FocusProbabilityMap, ValidationError

__all__ = ["MetricsReport", "evaluate", "invalid_focus_trend"]

PRED_CLAMP = 1e-6
DELTA_BASE = 1.25
BUMP_SCALE = 100.0


@dataclass(frozen=True)
class MetricsReport:
    mse: float
    rmse: float
    log_rmse: float
    absrel: float
    sqrel: float
    delta1: float
    delta2: float
    delta3: float
    bump: float
    valid_pixels: int
    clamped_pixels: int = 0
    invalid_trend_pct: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate(pred: DepthMap, gt: DepthMap,
             probs: FocusProbabilityMap | None = None,
             trend_tol: float = 1e-9) -> MetricsReport:
    """Standard depth metric suite over ground-truth-valid pixels.

    Predictions <= 0 are clamped to a small positive floor before the
    relative and log metrics (the clamp count is reported). Bumpiness is
    the mean squared 4-neighbor Laplacian over valid interior pixels,
    scaled by 100. Passing a probability map adds the invalid-trend
    percentage.
    """
    if pred.shape != gt.shape:
        raise ValidationError("prediction and ground truth dimensions differ")
    mask = gt.mask
    m = int(mask.sum())
    if m == 0:
        raise ValidationError("zero valid pixels")
    d = pred.values[mask]
    dstar = gt.values[mask]

    clamped = int(np.sum(d < PRED_CLAMP))
    dc = np.maximum(d, PRED_CLAMP)

    err = d - dstar
    mse = float(np.mean(err * err))
    rmse = float(np.sqrt(mse))
    log_err = np.log(dc) - np.log(dstar)
    log_rmse = float(np.sqrt(np.mean(log_err * log_err)))
    absrel = float(np.mean(np.abs(dc - dstar) / dstar))
    sqrel = float(np.mean((dc - dstar) ** 2 / dstar))
    ratio = np.maximum(dc / dstar, dstar / dc)
    delta = [float(np.mean(ratio < DELTA_BASE ** k)) for k in (1, 2, 3)]

    bump = _bumpiness(pred.values, mask)
    trend = float(invalid_focus_trend(probs, trend_tol)) if probs is not None else None
    return MetricsReport(mse, rmse, log_rmse, absrel, sqrel,
                         delta[0], delta[1], delta[2], bump, m, clamped, trend)


def _bumpiness(values: np.ndarray, mask: np.ndarray) -> float:
    """Mean squared 4-neighbor Laplacian over interior pixels whose full
    stencil is valid, times 100. Zero when no interior pixel qualifies."""
    h, w = values.shape
    if h < 3 or w < 3:
        return 0.0
    lap = (values[:-2, 1:-1] + values[2:, 1:-1] + values[1:-1, :-2]
           + values[1:-1, 2:] - 4.0 * values[1:-1, 1:-1])
    ok = (mask[1:-1, 1:-1] & mask[:-2, 1:-1] & mask[2:, 1:-1]
          & mask[1:-1, :-2] & mask[1:-1, 2:])
    if not ok.any():
        return 0.0
    return float(BUMP_SCALE * np.mean(lap[ok] ** 2))


def invalid_focus_trend(p: FocusProbabilityMap | np.ndarray, tol: float = 1e-9) -> float:
    """Percentage of pixels whose focus probabilities are not unimodal.

    With k the lowest-index argmax plane, a pixel is invalid if any step
    left of k decreases, or any step right of k increases, by more than tol.
    """
    if tol < 0:
        raise ValidationError("tol must be nonnegative")
    probs = p.probs if isinstance(p, FocusProbabilityMap) else np.asarray(p, dtype=np.float64)
    n = probs.shape[-1]
    k = np.argmax(probs, axis=-1)
    d = probs[..., 1:] - probs[..., :-1]
    pair_idx = np.arange(n - 1)
    rising = pair_idx < k[..., None]
    bad = np.where(rising, -d, d) > tol
    invalid = bad.any(axis=-1)
    return 100.0 * float(invalid.mean())
