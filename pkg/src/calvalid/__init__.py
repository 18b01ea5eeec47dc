"""Validate camera calibrations by testing standardized reprojection residuals for normality."""

__version__ = "0.1.0"

from .errors import CalValidError, NonPositiveDepth, ParseError
from .fit import FitConfig, fit_model, flag_inliers, load_model, refine, save_model
from .formats import load_correspondences, save_correspondences
from .geometry import CameraModel, Correspondence, ResidualSet, distort, project, residuals
from .gof import GofTest, TestReport, dap_test, ks_test, sw_test, validate
from .noise import IRLSConfig, LidarScales, NoiseFit, fit_noise, lidar_scales, standardize
from .pipeline import ValidationRecord, validate_correspondences, write_report
from .sim import SimConfig, SimSet, coverage, gen_poly_example, gen_sets

__all__ = [
    "CalValidError", "NonPositiveDepth", "ParseError",
    "FitConfig", "fit_model", "flag_inliers", "load_model", "refine", "save_model",
    "load_correspondences", "save_correspondences",
    "CameraModel", "Correspondence", "ResidualSet", "distort", "project", "residuals",
    "GofTest", "TestReport", "dap_test", "ks_test", "sw_test", "validate",
    "IRLSConfig", "LidarScales", "NoiseFit", "fit_noise", "lidar_scales", "standardize",
    "ValidationRecord", "validate_correspondences", "write_report",
    "SimConfig", "SimSet", "coverage", "gen_poly_example", "gen_sets",
]
