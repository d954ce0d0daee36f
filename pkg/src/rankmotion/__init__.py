"""Rank-constrained diffeomorphic density motion estimation for breathing
CT series."""
from .density import PenaltyConfig, fisher_rao_distance_sq, pair_energy, pair_gradient, preprocess_exponential
from .evaluation import BinaryMask, dice, evaluate_run, pca_truncate, sv_cumfrac, warp_mask
from .fields import DisplacementField, GridGeometry, ScalarVolume, density_action, jacobian_determinant
from .lowrank import DeformationEnsemble, ensemble_spectrum, gram_matrix, nuclear_norm, svt_apply
from .multiscale import OptimizationTrace, RegistrationParams, register_series
from .phantom import PhantomSpec, PhantomTruth, generate_phantom
from .volume_io import read_volume, write_volume

__version__ = "0.1.0"
