"""Compositional functional data analysis for cause-of-death mortality."""

from .compdata import (
    CAUSES,
    ClrCurve,
    FunctionalComposition,
    TimeGrid,
    closure,
    clr,
    clr_inv,
    distance,
    geometric_mean_curve,
    inner_product,
    norm,
    perturb,
    power,
)
from .cfpca import EigenSystem, MeanComposition, ScoreMatrix, center, covariance, eigendecompose, mean, pca, reconstruct, scores
from .clustering import majority_vote, select_g, silhouette, similarity, spectral_cluster
from .smoothing import MissingMask, SmoothingConfig, impute_missing, smooth_composition

__version__ = "0.1.0"
