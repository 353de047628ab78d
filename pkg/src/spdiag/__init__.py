"""Model-agnostic spatial prediction error and variable importance profiles."""

from .comparators import CvResult, CvScheme, cv_distance_report, run_cv
from .dataset import ColumnRoles, Dataset, DistanceSummary, buffer_exclude, load_csv, load_meuse, nn_distances
from .diagnostics import DiagnosticsConfig, LooRun, Profile, run_spatial_loo, spep
from .errors import (
    ConfigError,
    DegenerateGeometryError,
    EstimationError,
    ExhaustedBufferError,
    FitError,
    KrigingError,
    ParseError,
    SchemaError,
    SpdiagError,
)
from .geostat import KrigingSystem, Variogram, fit_variogram
from .importance import SVIP, build_svip, fit_pc_groups, make_channels, svip
from .models import ModelSpec, fit, predict, predict_with_features

__version__ = "0.1.0"

__all__ = [
    "ColumnRoles", "ConfigError", "CvResult", "CvScheme", "Dataset", "DegenerateGeometryError",
    "DiagnosticsConfig", "DistanceSummary", "EstimationError", "ExhaustedBufferError", "FitError",
    "KrigingError", "KrigingSystem", "LooRun", "ModelSpec", "ParseError", "Profile", "SVIP", "SchemaError",
    "SpdiagError", "Variogram", "buffer_exclude", "build_svip", "cv_distance_report", "fit",
    "fit_pc_groups", "fit_variogram", "load_csv", "load_meuse", "make_channels", "nn_distances", "predict",
    "predict_with_features", "run_cv", "run_spatial_loo", "spep", "svip",
]
