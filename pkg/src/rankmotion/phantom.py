"""Synthetic breathing phantom with exactly rank-2 ground-truth motion.

Axes: 0 = left-right, 1 = anterior-posterior, 2 = superior-inferior.
Phase ``p`` has ground-truth displacement ``a_p * B1 + b_p * B2`` in the
registration convention, i.e. ``|D psi| * I_p(psi(x)) = I_ref(x)`` with
``psi(x) = x + u_p(x)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .evaluation import BinaryMask
from .fields import DisplacementField, GridGeometry, ScalarVolume, density_action, jacobian_determinant
from .lowrank import DeformationEnsemble

MIN_TRUE_JACOBIAN = 0.2


@dataclass
class PhantomSpec:
    dims: tuple = (64, 64, 64)
    spacing: tuple = (1.0, 1.0, 1.0)
    n_phases: int = 10
    amplitude_mm: float = 6.0
    hysteresis_mm: float = 2.0
    tumor_center: tuple = (36.0, 32.0, 24.0)
    tumor_radius: float = 5.0
    body_center: tuple = (32.0, 32.0, 32.0)
    body_radii: tuple = (27.0, 22.0, 28.0)
    lung_center: tuple = (32.0, 32.0, 32.0)
    lung_radii: tuple = (18.0, 14.0, 20.0)
    # compact supports of the two motion modes (centre, semi-axes)
    si_center: tuple = (32.0, 32.0, 26.0)
    si_radii: tuple = (22.0, 20.0, 22.0)
    ap_center: tuple = (32.0, 32.0, 30.0)
    ap_radii: tuple = (20.0, 18.0, 20.0)
    air: float = 0.05
    lung: float = 0.25
    tumor: float = 1.0
    tissue: float = 1.0
    blur_voxels: float = 1.0
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if self.n_phases < 3:
            raise ValueError("n_phases must be >= 3")
        if self.amplitude_mm < 0 or self.hysteresis_mm < 0:
            raise ValueError("amplitude_mm and hysteresis_mm must be non-negative")
        if self.tumor_radius <= 0:
            raise ValueError("tumor_radius must be positive")
        if not 0 < self.air < self.lung < self.tumor <= self.tissue:
            raise ValueError("intensities must satisfy 0 < air < lung < tumor <= tissue")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")

    @property
    def geometry(self) -> GridGeometry:
        return GridGeometry(self.dims, self.spacing)

    def coefficients(self, p: int) -> tuple[float, float]:
        t = 2 * np.pi * p / self.n_phases
        return self.amplitude_mm * (1 - np.cos(t)) / 2, self.hysteresis_mm * np.sin(t)


@dataclass
class PhantomTruth:
    spec: PhantomSpec
    images: list
    true_displacements: DeformationEnsemble
    masks: dict  # structure -> list of per-phase BinaryMask
    reference_index: int = 0
    extras: dict = field(default_factory=dict)


def _bump(points, center, radii):
    """C2 compact bump ``(1 - r^2)^3`` over an ellipsoid."""
    r2 = sum(((points[a] - center[a]) / radii[a]) ** 2 for a in range(3))
    return np.where(r2 < 1, (1 - np.minimum(r2, 1)) ** 3, 0.0)


def _inside(points, center, radii):
    return sum(((points[a] - center[a]) / radii[a]) ** 2 for a in range(3)) <= 1.0


def _modes(spec: PhantomSpec, points):
    """Basis displacements B1 (SI) and B2 (AP) evaluated at ``points``."""
    b1 = np.zeros_like(points)
    b2 = np.zeros_like(points)
    b1[2] = _bump(points, spec.si_center, spec.si_radii)
    b2[1] = _bump(points, spec.ap_center, spec.ap_radii)
    return b1, b2


def _displacement(spec, a, b, points):
    b1, b2 = _modes(spec, points)
    return a * b1 + b * b2


def _invert(spec, a, b, x, iters=100, tol=1e-11):
    """Displacement ``w`` of the inverse map: ``x + w + u(x + w) = x``.

    Fixed-point iteration; only points that can reach the motion support
    are iterated, everywhere else ``w = 0``.
    """
    reach = max(abs(a), abs(b)) + 1e-9
    near = np.zeros(x.shape[1:], dtype=bool)
    for c, r in ((spec.si_center, spec.si_radii), (spec.ap_center, spec.ap_radii)):
        near |= _inside(x, c, tuple(ri + reach for ri in r))
    pts = x[:, near]
    w = np.zeros_like(pts)
    for _ in range(iters):
        w_new = -_displacement(spec, a, b, pts + w)
        done = np.max(np.abs(w_new - w)) < tol
        w = w_new
        if done:
            break
    else:
        raise ValueError("phantom inverse map did not converge; motion too large")
    out = np.zeros_like(x)
    out[:, near] = w
    return out


def anatomy(spec: PhantomSpec, points) -> dict:
    """Binary membership of body, lung and tumor at physical ``points``."""
    return {
        "body": _inside(points, spec.body_center, spec.body_radii),
        "lung": _inside(points, spec.lung_center, spec.lung_radii),
        "tumor": _inside(points, spec.tumor_center, (spec.tumor_radius,) * 3),
    }


def reference_image(spec: PhantomSpec) -> ScalarVolume:
    geom = spec.geometry
    parts = anatomy(spec, geom.coordinates())
    img = np.full(geom.dims, spec.air)
    img[parts["body"]] = spec.tissue
    img[parts["lung"]] = spec.lung
    img[parts["tumor"]] = spec.tumor
    if spec.blur_voxels > 0:
        img = ndimage.gaussian_filter(img, spec.blur_voxels, mode="nearest")
    return ScalarVolume(geom, img)


def generate_phantom(spec: PhantomSpec) -> PhantomTruth:
    geom = spec.geometry
    x = geom.coordinates()
    ref = reference_image(spec)
    b1, b2 = _modes(spec, x)
    rng = np.random.default_rng(spec.seed)

    images, truth, masks = [], [], {"tumor": [], "lung": []}
    for p in range(spec.n_phases):
        a, b = spec.coefficients(p)
        if p == 0:
            img = ref.values.copy()
            inside = anatomy(spec, x)
        else:
            u = a * b1 + b * b2
            jac = jacobian_determinant(DisplacementField(geom, u)).values
            if jac.min() < MIN_TRUE_JACOBIAN:
                raise ValueError(
                    f"phantom motion folds (min Jacobian {jac.min():.3f} at phase {p}); "
                    f"reduce amplitude_mm={spec.amplitude_mm} or hysteresis_mm={spec.hysteresis_mm}")
            truth.append(DisplacementField(geom, u))
            w = _invert(spec, a, b, x)
            img = density_action(ref, DisplacementField(geom, w)).values
            inside = anatomy(spec, x + w)
        if spec.noise_std > 0:
            img = img + rng.normal(0.0, spec.noise_std, size=img.shape)
        img = np.maximum(img, spec.air)
        images.append(ScalarVolume(geom, img))
        for name in masks:
            masks[name].append(BinaryMask(geom, inside[name]))
    ens = DeformationEnsemble(truth, list(range(1, spec.n_phases)))
    return PhantomTruth(spec, images, ens, masks, reference_index=0)


@dataclass
class MassReport:
    masses: list
    deviations: list  # relative to the reference mass
    noise_bound: float

    @property
    def max_deviation(self) -> float:
        return float(max(abs(d) for d in self.deviations))


def phantom_mass_check(t: PhantomTruth) -> MassReport:
    masses = [im.mass() for im in t.images]
    ref = masses[t.reference_index]
    geom = t.images[0].geometry
    bound = 3 * t.spec.noise_std * np.sqrt(geom.n_voxels) * geom.voxel_volume / ref
    return MassReport(masses, [(m - ref) / ref for m in masses], float(bound))
