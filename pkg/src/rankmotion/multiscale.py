"""Group-wise rank-constrained density matching over an image pyramid."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .density import (
    PenaltyConfig,
    build_penalty_field,
    energy_from_state,
    l2_gradient_from_state,
    pair_state,
    reference_terms,
    resolve_penalty,
)
from .fields import DisplacementField, GridGeometry, ScalarVolume, compose_update, interpolate_at_indices, inverse_neg_laplacian
from .lowrank import DeformationEnsemble, combine_energy, ensemble_spectrum, svt_weights, mix

log = logging.getLogger(__name__)

THREADS_ENV = "RANKMOTION_NUM_THREADS"


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass
class RegistrationParams:
    epsilon: float = 1.0
    alpha: float = 0.0
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    scale_factors: tuple = (4, 2, 1)
    iters_per_level: tuple = (300, 200, 100)
    converge_rel_tol: float = 1e-6
    converge_window: int = 10
    step_halving: bool = True
    max_halvings: int = 10
    fold_policy: str = "reject"
    svt_every: int = 1

    def __post_init__(self):
        self.scale_factors = tuple(int(s) for s in self.scale_factors)
        self.iters_per_level = tuple(int(n) for n in self.iters_per_level)
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if len(self.scale_factors) != len(self.iters_per_level) or not self.scale_factors:
            raise ValueError("scale_factors and iters_per_level must have the same non-zero length")
        if self.scale_factors[-1] != 1 or any(a <= b for a, b in zip(self.scale_factors, self.scale_factors[1:])):
            raise ValueError("scale_factors must be strictly decreasing and end in 1")
        if self.fold_policy not in ("reject", "warn"):
            raise ValueError("fold_policy must be 'reject' or 'warn'")
        if self.svt_every < 1:
            raise ValueError("svt_every must be >= 1")


@dataclass(frozen=True)
class TraceRecord:
    level: int
    iteration: int
    match: float
    penalty: float
    nuclear: float
    total: float
    singvals: tuple
    folds: int
    eps: float


@dataclass
class OptimizationTrace:
    alpha: float
    records: list = field(default_factory=list)
    # total energy of each level before its first step
    level_start: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def append(self, rec: TraceRecord):
        self.records.append(rec)

    def totals(self, level: int | None = None) -> np.ndarray:
        return np.array([r.total for r in self.records if level is None or r.level == level])

    def level_jumps(self) -> list:
        """Relative change between the last total of a level and the start of the next."""
        jumps = []
        for lvl in range(1, len(self.level_start)):
            prev = self.totals(lvl - 1)
            if len(prev) == 0:
                continue
            last = prev[-1]
            jumps.append(abs(self.level_start[lvl] - last) / max(abs(last), 1e-300))
        return jumps


def downsample_volume(vol: ScalarVolume, factor: int) -> ScalarVolume:
    """Gaussian blur (std ``factor / 2`` voxels) then stride decimation."""
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return vol.copy()
    geom = vol.geometry.scaled(factor)  # validates dims >= 2
    blurred = ndimage.gaussian_filter(vol.values, sigma=0.5 * factor, truncate=3.0, mode="nearest")
    return ScalarVolume(geom, blurred[::factor, ::factor, ::factor].copy())


def upsample_displacement(d: DisplacementField, target: GridGeometry) -> DisplacementField:
    src = d.geometry
    for ax in range(3):
        half = 0.5 * target.spacing[ax]
        if abs(src.origin[ax] - target.origin[ax]) > half or abs(src.extent[ax] - target.extent[ax]) > half:
            raise ValueError(f"physical extent mismatch on axis {ax}")
    idx = src.to_index(target.coordinates())
    return DisplacementField(target, np.stack([interpolate_at_indices(d.u[c], idx) for c in range(3)]))


def pin_boundary(v: np.ndarray) -> np.ndarray:
    """Zero a ``(3, nx, ny, nz)`` direction on the outer voxel faces, in place.

    Keeps the grid boundary fixed so no mass is pushed across it; without
    this the flow misses the boundary flux terms of the energy and stops
    being a descent direction near convergence.
    """
    v[:, 0] = v[:, -1] = 0.0
    v[:, :, 0] = v[:, :, -1] = 0.0
    v[:, :, :, 0] = v[:, :, :, -1] = 0.0
    return v


class _Level:
    """Images and penalty for one pyramid level plus the per-phase states."""

    def __init__(self, images, ref_index, factor, penalty, pool):
        self.ref = downsample_volume(images[ref_index], factor)
        self.moving = [downsample_volume(im, factor) for k, im in enumerate(images) if k != ref_index]
        self.geometry = self.ref.geometry
        self.f = build_penalty_field(self.ref, penalty)
        self.ref_terms = reference_terms(self.ref)
        self.pool = pool

    def states(self, ens: DeformationEnsemble):
        return list(self.pool.map(lambda p: pair_state(p[0], p[1], self.f), zip(ens.fields, self.moving)))

    def energy(self, ens, states, alpha):
        spec = ensemble_spectrum(ens)
        pairs = [energy_from_state(s, self.ref) for s in states]
        return combine_energy(pairs, float(np.sum(spec.singvals)), alpha), spec

    def directions(self, states):
        def one(s):
            v = inverse_neg_laplacian(l2_gradient_from_state(s, self.ref, self.ref_terms), self.geometry)
            return pin_boundary(v)
        return list(self.pool.map(one, states))

    def step(self, ens, dirs, eps):
        fields = list(self.pool.map(lambda p: compose_update(p[0], p[1], eps), zip(ens.fields, dirs)))
        return DeformationEnsemble(fields, ens.phase_ids)


def register_series(images, reference_index: int, params: RegistrationParams, threads: int | None = None):
    """Register every image to ``images[reference_index]``.

    Returns the full-resolution :class:`DeformationEnsemble` (phase order,
    reference omitted) and the :class:`OptimizationTrace`.
    """
    images = list(images)
    if len(images) < 2:
        raise ValueError("need at least two images")
    if not 0 <= reference_index < len(images):
        raise ValueError("reference index out of range")
    geom = images[0].geometry
    if any(im.geometry != geom for im in images):
        raise ValueError("all images must share geometry")

    phase_ids = [k for k in range(len(images)) if k != reference_index]
    penalty = resolve_penalty(images[reference_index], params.penalty)
    alpha = params.alpha
    trace = OptimizationTrace(alpha=alpha)
    ens = None
    with ThreadPoolExecutor(max_workers=threads or default_threads()) as pool:
        for level, (factor, max_iter) in enumerate(zip(params.scale_factors, params.iters_per_level)):
            lv = _Level(images, reference_index, factor, penalty, pool)
            if ens is None:
                ens = DeformationEnsemble.identity(lv.geometry, phase_ids)
            else:
                ens = DeformationEnsemble([upsample_displacement(d, lv.geometry) for d in ens.fields], phase_ids)
            ens = _run_level(lv, ens, level, max_iter, params, trace)
    return ens, trace


def _run_level(lv: _Level, ens, level, max_iter, params, trace):
    alpha = params.alpha
    states = lv.states(ens)
    energy, spec = lv.energy(ens, states, alpha)
    trace.level_start.append(energy.total)
    history = [energy.total]
    eps = params.epsilon
    for it in range(1, max_iter + 1):
        dirs = lv.directions(states)
        if all(not np.any(v) for v in dirs):
            log.info("level %d: stationary at iteration %d", level, it)
            break
        apply_svt = alpha > 0 and it % params.svt_every == 0
        stalled = False
        trial_eps = eps
        for attempt in range(params.max_halvings + 1):
            trial = lv.step(ens, dirs, trial_eps)
            if apply_svt:
                trial = mix(trial, svt_weights(ensemble_spectrum(trial), trial_eps * alpha))
            t_states = lv.states(trial)
            t_energy, t_spec = lv.energy(trial, t_states, alpha)
            new_folds = t_energy.folds > energy.folds
            if new_folds and params.fold_policy == "warn":
                log.warning("level %d iter %d: %d folded voxels", level, it, t_energy.folds)
            if not params.step_halving:
                break
            bad = t_energy.total > energy.total or (new_folds and params.fold_policy == "reject")
            if not bad:
                break
            if attempt == params.max_halvings:
                stalled = True
                break
            trial_eps *= 0.5
        if stalled:
            # no step size decreases the discrete energy: treat as converged
            msg = f"level {level} iter {it}: no descent after {params.max_halvings} halvings, stopping level"
            log.info(msg)
            trace.warnings.append(msg)
            break
        eps = trial_eps
        ens, states, energy, spec = trial, t_states, t_energy, t_spec
        trace.append(TraceRecord(level, it, energy.match, energy.penalty, energy.nuclear, energy.total,
                                 tuple(float(s) for s in spec.singvals), energy.folds, eps))
        history.append(energy.total)
        w = params.converge_window
        if len(history) > w:
            ref = history[-1 - w]
            if abs(ref - history[-1]) <= params.converge_rel_tol * max(abs(ref), 1e-300):
                log.info("level %d converged at iteration %d", level, it)
                break
    return ens
