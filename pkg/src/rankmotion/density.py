"""Pairwise Fisher-Rao density matching with a weighted incompressibility
penalty: energy, Sobolev gradient, penalty field and intensity preprocessing.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .fields import (
    DisplacementField,
    ScalarVolume,
    gradient_array,
    inverse_neg_laplacian,
    jacobian_determinant,
    warp_values,
)

DENSITY_FLOOR = 1e-8
JACOBIAN_FLOOR = 1e-8


@dataclass(frozen=True)
class PenaltyConfig:
    """Logistic soft threshold of the reference intensities.

    ``threshold`` and ``steepness`` left as ``None`` are filled from the
    reference histogram by :func:`resolve_penalty`.
    """

    sigma: float = 0.01
    high_mult: float = 5.0
    low_mult: float = 0.2
    threshold: float | None = None
    steepness: float | None = None

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("penalty sigma must be positive")
        if not self.high_mult > self.low_mult > 0:
            raise ValueError("need high_mult > low_mult > 0")
        if self.steepness is not None and self.steepness <= 0:
            raise ValueError("penalty steepness must be positive")


@dataclass(frozen=True)
class PairEnergyBreakdown:
    match_term: float
    penalty_term: float
    folds: int = 0

    @property
    def total(self) -> float:
        return self.match_term + self.penalty_term


def histogram_modes(values: np.ndarray, bins: int = 64) -> tuple[float, float]:
    """Most populated intensity in the lower and upper half of the range."""
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return lo, hi
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    half = bins // 2
    return float(centers[np.argmax(counts[:half])]), float(centers[half + np.argmax(counts[half:])])


def resolve_penalty(I0: ScalarVolume, cfg: PenaltyConfig) -> PenaltyConfig:
    """Fill unset logistic parameters from the intensity histogram of ``I0``."""
    vals = I0.values
    threshold, steepness = cfg.threshold, cfg.steepness
    if threshold is None:
        air, tissue = histogram_modes(vals)
        threshold = 0.5 * (air + tissue)
    if steepness is None:
        steepness = max(0.05 * float(vals.max() - vals.min()), 1e-12)
    return replace(cfg, threshold=float(threshold), steepness=float(steepness))


def build_penalty_field(I0: ScalarVolume, cfg: PenaltyConfig) -> ScalarVolume:
    cfg = resolve_penalty(I0, cfg)
    t = (I0.values - cfg.threshold) / cfg.steepness
    # logistic via tanh stays finite for extreme t
    logistic = 0.5 * (1.0 + np.tanh(0.5 * t))
    f = cfg.sigma * (cfg.low_mult + (cfg.high_mult - cfg.low_mult) * logistic)
    return ScalarVolume(I0.geometry, f)


def preprocess_exponential(I: ScalarVolume, gamma: float, scale: float = 1.0) -> ScalarVolume:
    """Intensity transform ``scale * exp(gamma * I)``."""
    if not (np.isfinite(gamma) and np.isfinite(scale)) or scale <= 0:
        raise ValueError("gamma and scale must be finite with scale > 0")
    arg = gamma * I.values
    if arg.max() > 80:
        raise ValueError(f"exponential preprocessing overflows: max(gamma*I) = {arg.max():.3g} > 80")
    return ScalarVolume(I.geometry, scale * np.exp(arg))


def _check_nonnegative(*vols):
    for v in vols:
        if np.any(v.values < 0):
            raise ValueError("negative density values; preprocess the intensities first")


def _sqrt_density(a):
    return np.sqrt(np.maximum(a, DENSITY_FLOOR))


def fisher_rao_distance_sq(I0: ScalarVolume, I1: ScalarVolume) -> float:
    if I0.geometry != I1.geometry:
        raise ValueError("volumes must share geometry")
    _check_nonnegative(I0, I1)
    diff = np.sqrt(I0.values) - np.sqrt(I1.values)
    return float(np.sum(diff * diff) * I0.geometry.voxel_volume)


@dataclass
class PairState:
    """Everything the energy and gradient need for one phase at the current map."""

    jac: np.ndarray
    rho: np.ndarray       # |D phi^-1| * I_i(phi^-1)
    f_warped: np.ndarray  # f(phi^-1)
    folds: int


def pair_state(d: DisplacementField, Ii: ScalarVolume, f: ScalarVolume) -> PairState:
    jac = jacobian_determinant(d).values
    rho = jac * warp_values(Ii.values, d)
    f_warped = warp_values(f.values, d)
    return PairState(jac, rho, f_warped, int(np.count_nonzero(jac <= 0)))


def energy_from_state(state: PairState, I0: ScalarVolume) -> PairEnergyBreakdown:
    vol = I0.geometry.voxel_volume
    diff = _sqrt_density(state.rho) - _sqrt_density(I0.values)
    match = float(np.sum(diff * diff) * vol)
    pen = np.sqrt(np.maximum(state.jac, JACOBIAN_FLOOR)) - 1.0
    penalty = float(np.sum(pen * pen * state.f_warped) * vol)
    return PairEnergyBreakdown(match, penalty, state.folds)


def pair_energy(d: DisplacementField, Ii: ScalarVolume, I0: ScalarVolume, f: ScalarVolume) -> PairEnergyBreakdown:
    """Fisher-Rao mismatch plus incompressibility penalty for one phase.

    The penalty weight is sampled at ``phi^-1(x)``, which makes
    :func:`l2_gradient` the exact first variation of this energy.
    """
    if not (d.geometry == Ii.geometry == I0.geometry == f.geometry):
        raise ValueError("all inputs must share geometry")
    return energy_from_state(pair_state(d, Ii, f), I0)


def reference_terms(I0: ScalarVolume) -> tuple[np.ndarray, np.ndarray]:
    """``sqrt(I0)`` and its gradient; constant over an optimization level."""
    sqrt_i0 = _sqrt_density(I0.values)
    return sqrt_i0, gradient_array(sqrt_i0, I0.geometry.spacing)


def l2_gradient_from_state(state: PairState, I0: ScalarVolume, ref_terms=None) -> np.ndarray:
    sp = I0.geometry.spacing
    sqrt_i0, grad_sqrt_i0 = ref_terms if ref_terms is not None else reference_terms(I0)
    sqrt_rho = _sqrt_density(state.rho)
    weight = state.f_warped * (1.0 - np.sqrt(np.maximum(state.jac, JACOBIAN_FLOOR)))
    u = gradient_array(sqrt_rho, sp)
    u *= sqrt_i0
    u -= sqrt_rho * grad_sqrt_i0
    u -= gradient_array(weight, sp)
    return u


def l2_gradient(d: DisplacementField, Ii: ScalarVolume, I0: ScalarVolume, f: ScalarVolume) -> np.ndarray:
    """Negative L2 gradient ``u`` of :func:`pair_energy`, shape ``(3, nx, ny, nz)``.

    For an update ``phi^-1 <- phi^-1(x + eps w)`` the energy changes at rate
    ``-<u, w>``.
    """
    return l2_gradient_from_state(pair_state(d, Ii, f), I0)


def pair_gradient(d: DisplacementField, Ii: ScalarVolume, I0: ScalarVolume, f: ScalarVolume) -> np.ndarray:
    """Sobolev descent direction ``v = (-Laplacian)^-1 u`` for a positive step."""
    return inverse_neg_laplacian(l2_gradient(d, Ii, I0, f), d.geometry)
