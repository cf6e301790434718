"""Panoramic robust PCA: register video frames onto a common canvas and split
the stack into low-rank background, sparse corruption and TV-smooth
foreground."""

from .core import (Decomposition, FrameStack, ShapeError, TVWeights,
                   project_mask, stack_frames, tv_value)
from .evalsim import (MetricReport, SceneConfig, add_gaussian_snr,
                      add_salt_pepper, evaluate, make_synthetic_scene)
from .kernels import BACKEND
from .optshrink import optshrink, svt
from .registration import (RegistrationConfig, estimate_homography_dlt,
                           estimate_homography_ransac, register_video)
from .solver import DivergenceError, SolverConfig, SolverTrace, decompose
from .tvprox import AdmmConfig, TVDenoiser, tvdn

__version__ = "0.1.0"

__all__ = [
    "AdmmConfig", "BACKEND", "Decomposition", "DivergenceError", "FrameStack",
    "MetricReport", "RegistrationConfig", "SceneConfig", "ShapeError",
    "SolverConfig", "SolverTrace", "TVDenoiser", "TVWeights",
    "add_gaussian_snr", "add_salt_pepper", "decompose",
    "estimate_homography_dlt", "estimate_homography_ransac", "evaluate",
    "make_synthetic_scene", "optshrink", "project_mask", "register_video",
    "stack_frames", "svt", "tv_value", "tvdn",
]
