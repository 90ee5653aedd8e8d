"""Regularization-free shape-from-shading under second-order spherical-harmonics
lighting, solved by ADMM, with multi-view coupling through sparse
correspondences.

Modules:
    geometry: cameras, poses and depth-to-normal maps.
    operators: masked finite-difference gradients.
    shading: spherical-harmonics rendering and the PDE fields.
    solver: single-view ADMM and the fixed-point baseline.
    multiview: coupled multi-view solving and point-cloud fusion.
    evalgen: synthetic scenes, lighting presets and metrics.
    fileio: file formats and scene configuration.
    cli: the ``mvsfs`` command.
"""

from .errors import MVSFSError
from .evalgen import L1, L2, L3, calibrate_lighting, generate_matches, generate_scene, hemisphere_views
from .geometry import Intrinsics, Pose, look_at
from .kernels import BACKEND
from .multiview import CorrespondenceSet, CouplingOptions, fuse_point_cloud, solve_mvsfs
from .operators import GradientScheme
from .shading import field_a, field_b, render
from .solver import SolverOptions, energy, solve_sfs, solve_sfs_fixed_point

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CorrespondenceSet", "CouplingOptions", "GradientScheme", "Intrinsics", "L1", "L2",
    "L3", "MVSFSError", "Pose", "SolverOptions", "calibrate_lighting", "energy", "field_a",
    "field_b", "fuse_point_cloud", "generate_matches", "generate_scene", "hemisphere_views",
    "look_at", "render", "solve_mvsfs", "solve_sfs", "solve_sfs_fixed_point",
]
