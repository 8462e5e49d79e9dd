"""Depth-from-focus numerical engine.

Library layout:
  core     -- domain types, PFM/PNG depth I/O, JSON manifests
  synth    -- circle-of-confusion focal stack synthesis
  volume   -- focus volume with focal differences, sharpness measures
  surface  -- finite-difference operator and integrability projection
  losses   -- variational loss terms with analytic gradients
  fusion   -- focus probabilities and probability-weighted depth
  solver   -- per-scene direct optimization and ablations
  metrics  -- depth evaluation suite and invalid-focus-trend
  cli      -- command-line frontend (synth / solve / eval / gradcheck / ablate)
"""

from .core import (
    DepthMap,
    FocalStack,
    FocusProbabilityMap,
    StackManifest,
    load_depth,
    load_manifest,
    load_stack,
    save_depth,
    save_manifest,
)
from .fusion import argmax_baseline, depth_from_probabilities, to_probabilities
from .losses import (
    GradFusionMap,
    LossReport,
    SharpnessWeights,
    depth_loss,
    focal_variational_loss,
    sharpness_weights,
    spatial_variational_loss,
    total_loss,
)
from .metrics import MetricsReport, evaluate, invalid_focus_trend
from .solver import SolverConfig, SolverTrace, ablate, solve_scene
from .surface import (
    GradientField,
    SurfaceField,
    build_diff_operator,
    grad_of_surface,
    integrability_project,
)
from .synth import CameraParams, coc_diameter, synthesize_stack
from .volume import FocusVolume, SharpnessVolume, build_focus_volume, sharpness_measure

__version__ = "0.1.0"
