"""Coarse registration of fetal-brain ultrasound scans.

Skull ellipse fitting, ellipse-derived affine normalization, intensity
refinement, concave-hull probability maps, an evaluation suite and a
synthetic phantom generator, driven by the ``fetalign`` command.
"""

from . import errors
from .dataset import (STRUCTURE_SCHEMA, SubjectRecord, load_landmarks_csv,
                      load_subject, save_landmarks_csv, save_registered,
                      select_reference)
from .geometry import (EllipseCoeffs, EllipseParams, RobustFitReport,
                       coeffs_to_params, eval_conic, fit_ellipse,
                       moment_init, params_to_coeffs, robust_fit_ellipse,
                       sample_boundary, to_canonical)
from .hulls import (Polygon2D, ProbabilityMap, average_masks,
                    build_structure_map, concave_hull, rasterize)
from .metrics import (MetricReport, avg_min_euclidean, hausdorff,
                      polygon_dsc, significance_stars, ssim,
                      wilcoxon_signed_rank)
from .phantom import (PhantomSpec, generate_cohort, generate_pair,
                      generate_phantom)
from .registration import (RefineConfig, RegistrationMethod,
                           RegistrationResult, register_affine,
                           register_ellipse, run_method, zscore)
from .segmentation import fallback_skull_mask, load_mask, mask_to_points
from .transform import (Affine2D, compose, ellipse_to_canonical, invert,
                        mirror_to_convention, warp_image, warp_points)

__version__ = "0.1.0"

__all__ = [
    "Affine2D", "EllipseCoeffs", "EllipseParams", "MetricReport",
    "PhantomSpec", "Polygon2D", "ProbabilityMap", "RefineConfig",
    "RegistrationMethod", "RegistrationResult", "RobustFitReport",
    "STRUCTURE_SCHEMA", "SubjectRecord", "average_masks",
    "avg_min_euclidean", "build_structure_map", "coeffs_to_params",
    "compose", "concave_hull", "ellipse_to_canonical", "errors",
    "eval_conic", "fallback_skull_mask", "fit_ellipse", "generate_cohort",
    "generate_pair", "generate_phantom", "hausdorff", "invert",
    "load_landmarks_csv", "load_mask", "load_subject", "mask_to_points",
    "mirror_to_convention", "moment_init", "params_to_coeffs",
    "polygon_dsc", "rasterize", "register_affine", "register_ellipse",
    "robust_fit_ellipse", "run_method", "sample_boundary",
    "save_landmarks_csv", "save_registered", "select_reference",
    "significance_stars", "ssim", "to_canonical", "warp_image",
    "warp_points", "wilcoxon_signed_rank", "zscore",
]
