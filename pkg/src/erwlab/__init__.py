"""Excited random walk in the half-space: exact tools and ensemble estimators."""

from erwlab.lattice import (
    ORIGIN, ColumnStore, Legality, NaiveSet, Site, StepKind, WalkState, classify, erw_step,
    fold, is_legal_configuration, run_path, symmetric_erw_step,
)
from erwlab.rng import RngStream

__version__ = "0.1.0"

__all__ = [
    "ORIGIN", "ColumnStore", "Legality", "NaiveSet", "RngStream", "Site", "StepKind",
    "WalkState", "classify", "erw_step", "fold", "is_legal_configuration", "run_path",
    "symmetric_erw_step", "__version__",
]
