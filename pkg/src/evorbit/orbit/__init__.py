"""Orbit model, initialisation, triangulation and refinement."""
from .init import (CircleFit, FrequencyEstimate, PoseSet, dominant_frequency, estimate_frequency,
                   fit_circle, fit_plane, init_orbit, windowed_mean_x)
from .model import (CameraIntrinsics, Observations, OrbitParams, orbit_center, orbit_pose,
                    orbit_poses, predict, reproject, residuals, rms_reprojection, screw_line)
from .optimize import OptimizerOptions, Reconstruction, optimize
from .triangulate import triangulate_dlt, triangulate_landmarks

__all__ = [
    "CameraIntrinsics", "CircleFit", "FrequencyEstimate", "Observations", "OptimizerOptions",
    "OrbitParams", "PoseSet", "Reconstruction", "dominant_frequency", "estimate_frequency",
    "fit_circle", "fit_plane", "init_orbit", "optimize", "orbit_center", "orbit_pose",
    "orbit_poses", "predict", "reproject", "residuals", "rms_reprojection", "screw_line",
    "triangulate_dlt", "triangulate_landmarks", "windowed_mean_x",
]
