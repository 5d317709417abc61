"""Optimization pipelines for g-tensors and crystal-field parameters."""

from .cf import CfFitConfig, default_seed_grid, fit_cf
from .spin import (
    FitResult,
    PeakDatum,
    SpinFitConfig,
    fit_spin,
    model_lines,
    nearest_line_loss,
    reverse_support_loss,
    rmsd_absolute,
    rmsd_relative,
)

__all__ = [
    "CfFitConfig", "FitResult", "PeakDatum", "SpinFitConfig", "default_seed_grid", "fit_cf",
    "fit_spin", "model_lines", "nearest_line_loss", "reverse_support_loss", "rmsd_absolute", "rmsd_relative",
]
