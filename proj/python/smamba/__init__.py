"""Selective state-space multivariate forecaster (C++ core)."""

from smamba._core import (
    ArtifactError,
    ComputeError,
    DimError,
    Model,
    classify_periodicity,
    discretize,
    generate_synthetic,
    mae,
    mse,
    selective_scan,
)

__all__ = [
    "ArtifactError",
    "ComputeError",
    "DimError",
    "Model",
    "classify_periodicity",
    "discretize",
    "generate_synthetic",
    "mae",
    "mse",
    "selective_scan",
]
