"""Patch-based grayscale image restoration.

The image posterior factorizes over all overlapping patches, each factor a
likelihood times a prior shared within a cluster of similar patches
(multivariate Gaussian or Gaussian scale mixture).  Restoration minimizes the
penalized objective by block coordinate descent with exponentially growing
penalty weights.  See :mod:`crf_restore.solver` for the driver and
:mod:`crf_restore.cli` for the command-line interface.
"""

from .degrade import DegradationSpec, add_noise, apply_degradation, apply_mask, make_mask
from .image import (PatchSystem, aggregate_patches, extract_patch,
                    extract_patches, load_image, psnr, save_image)
from .matching import Cluster, assign_unique, build_clusters
from .priors import (GaussianParams, GSMConfig, GSMParams, gaussian_estimate,
                     gsm_estimate_v, gsm_map_params)
from .solver import IterationStats, Solver, SolverConfig, SolverState, run

__version__ = "0.1.0"

__all__ = [
    "DegradationSpec", "add_noise", "apply_degradation", "apply_mask",
    "make_mask", "PatchSystem", "aggregate_patches", "extract_patch",
    "extract_patches", "load_image", "psnr", "save_image", "Cluster",
    "assign_unique", "build_clusters", "GaussianParams", "GSMConfig",
    "GSMParams", "gaussian_estimate", "gsm_estimate_v", "gsm_map_params",
    "IterationStats", "Solver", "SolverConfig", "SolverState", "run",
]
