"""Lift normalized disparity maps into point clouds and refine prior shapes."""

from .errors import (
    AllRestartsInfeasible,
    DataError,
    DegenerateRange,
    DegenerateVisible,
    DimensionMismatch,
    DispliftError,
    EmptyCloud,
    EmptyMask,
    InfeasibleScene,
    InvalidFov,
    InvalidSceneSpec,
    InvalidThreshold,
    MalformedFile,
    NonFiniteGradient,
    NonPositiveDepth,
    NumericalError,
    PointBehindCamera,
    UnsupportedPropertyWarning,
)
from .fitter import FitConfig, FitResult, correspondences, fit_params, frozen_loss, loss, loss_gradient
from .formats import read_disparity, read_pointcloud, write_disparity, write_pointcloud
from .geometry import (
    EPS_Z,
    DisparityMap,
    PointCloud,
    ProjectionParams,
    Tag,
    ViewConfig,
    focal_length,
    normalize_disparity,
    pixel_to_image_coords,
)
from .metrics import NNIndex, build_nn_index, chamfer, fscore
from .pipeline import RefineReport, refine
from .projection import disparity_to_inverse_depth, project_disparity, render_disparity
from .synth import SceneSpec, SweepReport, SyntheticScene, add_uniform_noise, make_synthetic_scene, sweep_init, sweep_noise
from .visibility import clean_occluded, split_visibility

__all__ = [name for name in dir() if not name.startswith("_")]
