"""Overlap scores, singular-value concentration and PCA truncation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import DisplacementField, GridGeometry, ScalarVolume, warp_values
from .lowrank import DeformationEnsemble, ensemble_spectrum, mix


@dataclass
class BinaryMask:
    geometry: GridGeometry
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=bool).reshape(self.geometry.dims)

    def count(self) -> int:
        return int(np.count_nonzero(self.values))

    def as_volume(self) -> ScalarVolume:
        return ScalarVolume(self.geometry, self.values.astype(np.float64))

    @classmethod
    def from_volume(cls, vol: ScalarVolume) -> "BinaryMask":
        return cls(vol.geometry, vol.values >= 0.5)


def dice(a: BinaryMask, b: BinaryMask) -> float:
    if a.geometry != b.geometry:
        raise ValueError("masks must share geometry")
    total = a.count() + b.count()
    if total == 0:
        return 1.0
    return 2.0 * np.count_nonzero(a.values & b.values) / total


def warp_mask(m: BinaryMask, d: DisplacementField) -> BinaryMask:
    """Pull the mask back through ``x + u(x)``; a voxel is kept if the
    interpolated occupancy is at least one half."""
    if m.geometry != d.geometry:
        raise ValueError("mask and displacement must share geometry")
    return BinaryMask(m.geometry, warp_values(m.values.astype(np.float64), d) >= 0.5)


def sv_cumfrac(e: DeformationEnsemble) -> np.ndarray:
    s = ensemble_spectrum(e).singvals
    total = s.sum()
    if total <= 0:
        raise ValueError("all-zero ensemble has no singular value distribution")
    c = np.cumsum(s) / total
    c[-1] = 1.0
    return c


def pca_truncate(e: DeformationEnsemble, k: int, center: bool = False) -> DeformationEnsemble:
    """Project the rows of ``X`` onto its top-``k`` left singular vectors.

    The default is uncentered; ``center=True`` subtracts the mean field
    first and adds it back afterwards.
    """
    m = len(e)
    if not 0 <= k <= m:
        raise ValueError(f"k must lie in [0, {m}]")
    if k == m:
        return e.copy()
    if center:
        X = e.matrix()
        mean = X.mean(axis=0)
        centered = DeformationEnsemble.from_matrix(X - mean, e.geometry, e.phase_ids)
        proj = pca_truncate(centered, k)
        return DeformationEnsemble.from_matrix(proj.matrix() + mean, e.geometry, e.phase_ids)
    U = ensemble_spectrum(e).eigvecs[:, :k]
    return mix(e, U @ U.T)


@dataclass
class EvaluationReport:
    dice_rows: list      # (run, alpha, structure, phase, dice)
    pca_rows: list       # (run, alpha, structure, k, mean dice)
    cumfrac_rows: list   # (run, alpha, [c_1..c_m])

    def mean_dice(self, run, structure) -> float:
        vals = [r[4] for r in self.dice_rows if r[0] == run and r[2] == structure]
        return float(np.mean(vals))

    def pca_dice(self, run, structure, k) -> float:
        for r in self.pca_rows:
            if r[0] == run and r[2] == structure and r[3] == k:
                return r[4]
        raise KeyError((run, structure, k))


def phase_dice(e: DeformationEnsemble, masks: dict, reference: int = 0) -> dict:
    """DICE of every warped phase mask against the reference mask.

    ``masks`` maps structure name to a sequence indexed by phase id.
    """
    out = {}
    for name, per_phase in masks.items():
        ref = per_phase[reference]
        out[name] = [dice(warp_mask(per_phase[pid], d), ref) for pid, d in zip(e.phase_ids, e.fields)]
    return out


def evaluate_run(runs: dict, masks: dict, ks=None, reference: int = 0, alphas: dict | None = None,
                 center: bool = False) -> EvaluationReport:
    """Tabulate DICE, PCA-truncated DICE and singular value fractions.

    ``runs`` maps a run label to its recovered ensemble; ``alphas`` optionally
    maps the label to the rank weight used.
    """
    alphas = alphas or {}
    dice_rows, pca_rows, cum_rows = [], [], []
    for label, ens in runs.items():
        alpha = alphas.get(label, float("nan"))
        m = len(ens)
        k_values = list(range(m + 1)) if ks is None else [k for k in ks if 0 <= k <= m]
        for name, vals in phase_dice(ens, masks, reference).items():
            for pid, v in zip(ens.phase_ids, vals):
                dice_rows.append((label, alpha, name, pid, v))
        for k in k_values:
            trunc = pca_truncate(ens, k, center=center)
            for name, vals in phase_dice(trunc, masks, reference).items():
                pca_rows.append((label, alpha, name, k, float(np.mean(vals))))
        try:
            cum = sv_cumfrac(ens)
        except ValueError:
            cum = np.full(m, np.nan)
        cum_rows.append((label, alpha, [float(c) for c in cum]))
    return EvaluationReport(dice_rows, pca_rows, cum_rows)
