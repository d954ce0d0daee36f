"""Low-rank machinery over the ensemble of displacement fields.

Row ``i`` of the deformation matrix ``X`` is displacement ``i`` flattened.
Everything goes through the small Gram matrix ``K = X X^T / n_voxels``, so
singular values here are those of ``X / sqrt(n_voxels)``. Keeping the voxel
normalization makes thresholds comparable across pyramid levels.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .density import PairEnergyBreakdown, pair_energy
from .fields import DisplacementField, GridGeometry, ScalarVolume

EIGEN_FLOOR = 1e-12
SYMMETRY_TOL = 1e-12
GRAM_SLAB = 4096


@dataclass
class DeformationEnsemble:
    fields: list
    phase_ids: list = field(default=None)

    def __post_init__(self):
        self.fields = list(self.fields)
        if not self.fields:
            raise ValueError("ensemble needs at least one field")
        if self.phase_ids is None:
            self.phase_ids = list(range(1, len(self.fields) + 1))
        self.phase_ids = list(self.phase_ids)
        if len(self.phase_ids) != len(self.fields):
            raise ValueError("one phase id per field")
        geom = self.fields[0].geometry
        if any(f.geometry != geom for f in self.fields):
            raise ValueError("ensemble fields must share geometry")

    @classmethod
    def identity(cls, geometry: GridGeometry, phase_ids) -> "DeformationEnsemble":
        return cls([DisplacementField(geometry) for _ in phase_ids], list(phase_ids))

    @classmethod
    def from_matrix(cls, X: np.ndarray, geometry: GridGeometry, phase_ids) -> "DeformationEnsemble":
        shape = (3,) + geometry.dims
        return cls([DisplacementField(geometry, row.reshape(shape)) for row in X], phase_ids)

    @property
    def geometry(self) -> GridGeometry:
        return self.fields[0].geometry

    def __len__(self):
        return len(self.fields)

    def matrix(self) -> np.ndarray:
        """The ``(N-1, 3 * n_voxels)`` deformation matrix (a copy)."""
        return np.stack([f.u.reshape(-1) for f in self.fields])

    def copy(self) -> "DeformationEnsemble":
        return DeformationEnsemble([f.copy() for f in self.fields], list(self.phase_ids))


@dataclass
class GramSpectrum:
    gram: np.ndarray
    eigvecs: np.ndarray
    singvals: np.ndarray

    @property
    def eigvals(self) -> np.ndarray:
        return self.singvals ** 2


def gram_matrix(e: DeformationEnsemble) -> np.ndarray:
    # fixed-order slab sums, independent of BLAS threading
    return _kernels.gram(e.matrix(), GRAM_SLAB) / e.geometry.n_voxels


def spectrum(gram: np.ndarray) -> GramSpectrum:
    K = np.asarray(gram, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError("gram matrix must be square")
    scale = max(1.0, float(np.max(np.abs(K))) if K.size else 1.0)
    if np.max(np.abs(K - K.T)) > SYMMETRY_TOL * scale:
        raise ValueError("gram matrix is not symmetric")
    lam, U = np.linalg.eigh(0.5 * (K + K.T))
    order = np.argsort(lam)[::-1]
    lam, U = lam[order], U[:, order]
    lam = np.where(lam < EIGEN_FLOOR, 0.0, lam)
    return GramSpectrum(K, U, np.sqrt(lam))


def ensemble_spectrum(e: DeformationEnsemble) -> GramSpectrum:
    return spectrum(gram_matrix(e))


def nuclear_norm(e: DeformationEnsemble, spec: GramSpectrum | None = None) -> float:
    spec = spec or ensemble_spectrum(e)
    return float(np.sum(spec.singvals))


def shrink(singvals, tau: float) -> np.ndarray:
    """Soft threshold ``max(sigma - tau, 0)``."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    return np.maximum(np.asarray(singvals, dtype=np.float64) - tau, 0.0)


def mix(e: DeformationEnsemble, W: np.ndarray) -> DeformationEnsemble:
    """Replace the rows by ``W X``, keeping phase order."""
    X = e.matrix()
    return DeformationEnsemble.from_matrix(np.asarray(W, dtype=np.float64) @ X, e.geometry, e.phase_ids)


def svt_weights(spec: GramSpectrum, tau: float) -> np.ndarray:
    """Mixing matrix ``U diag((sigma - tau)_+ / sigma) U^T``."""
    s = spec.singvals
    gain = np.zeros_like(s)
    pos = s > 0
    gain[pos] = shrink(s[pos], tau) / s[pos]
    return (spec.eigvecs * gain) @ spec.eigvecs.T


def svt_apply(e: DeformationEnsemble, tau: float, spec: GramSpectrum | None = None) -> DeformationEnsemble:
    """Singular value thresholding of the ensemble, the prox of ``tau * ||X||_*``."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    spec = spec or ensemble_spectrum(e)
    return mix(e, svt_weights(spec, tau))


@dataclass(frozen=True)
class EnergyBreakdown:
    match: float
    penalty: float
    nuclear: float
    total: float
    folds: int = 0


def combine_energy(pairs, nuclear: float, alpha: float) -> EnergyBreakdown:
    match = float(sum(p.match_term for p in pairs))
    penalty = float(sum(p.penalty_term for p in pairs))
    folds = int(sum(p.folds for p in pairs))
    return EnergyBreakdown(match, penalty, nuclear, match + penalty + alpha * nuclear, folds)


def total_energy(e: DeformationEnsemble, images, I0: ScalarVolume, f: ScalarVolume, alpha: float) -> EnergyBreakdown:
    """Sum of pair energies plus ``alpha`` times the nuclear norm.

    ``images`` are the moving volumes in ensemble order.
    """
    if len(images) != len(e):
        raise ValueError("one image per ensemble field")
    pairs: list[PairEnergyBreakdown] = [pair_energy(d, Ii, I0, f) for d, Ii in zip(e.fields, images)]
    return combine_energy(pairs, nuclear_norm(e), alpha)
