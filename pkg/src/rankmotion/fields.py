"""Regular-grid 3D scalar and displacement fields with their differential
and interpolation operators.

Arrays are indexed ``[i, j, k]`` with ``i`` running along x. A point with
index ``(i, j, k)`` sits at ``origin + (i, j, k) * spacing`` in mm. Vector
fields are plain arrays of shape ``(3, nx, ny, nz)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from . import _kernels


def _triple(values, cast):
    out = tuple(cast(v) for v in values)
    if len(out) != 3:
        raise ValueError(f"expected 3 components, got {len(out)}")
    return out


@dataclass(frozen=True)
class GridGeometry:
    dims: tuple
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "dims", _triple(self.dims, int))
        object.__setattr__(self, "spacing", _triple(self.spacing, float))
        object.__setattr__(self, "origin", _triple(self.origin, float))
        if min(self.dims) < 2:
            raise ValueError(f"every dimension must be >= 2, got {self.dims}")
        if min(self.spacing) <= 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")

    @property
    def voxel_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims))

    @property
    def extent(self) -> np.ndarray:
        """Physical size ``dims * spacing`` per axis."""
        return np.asarray(self.dims) * np.asarray(self.spacing)

    @cached_property
    def index_grid(self) -> np.ndarray:
        """Voxel index coordinates, shape ``(3, nx, ny, nz)``."""
        return np.indices(self.dims, dtype=np.float64)

    def coordinates(self) -> np.ndarray:
        """Physical coordinates of every voxel in mm, shape ``(3, nx, ny, nz)``."""
        sp = np.asarray(self.spacing)[:, None, None, None]
        org = np.asarray(self.origin)[:, None, None, None]
        return org + sp * self.index_grid

    def to_index(self, points: np.ndarray) -> np.ndarray:
        """Map mm coordinates (leading axis of length 3) to fractional indices."""
        points = np.asarray(points, dtype=np.float64)
        shape = (3,) + (1,) * (points.ndim - 1)
        sp = np.asarray(self.spacing).reshape(shape)
        org = np.asarray(self.origin).reshape(shape)
        return (points - org) / sp

    def scaled(self, factor: int) -> "GridGeometry":
        """Geometry after stride-``factor`` decimation (same origin)."""
        dims = tuple(-(-n // factor) for n in self.dims)
        spacing = tuple(s * factor for s in self.spacing)
        return GridGeometry(dims, spacing, self.origin)


@dataclass
class ScalarVolume:
    geometry: GridGeometry
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.geometry.dims:
            self.values = self.values.reshape(self.geometry.dims)

    @classmethod
    def constant(cls, geometry: GridGeometry, value: float) -> "ScalarVolume":
        return cls(geometry, np.full(geometry.dims, float(value)))

    def mass(self) -> float:
        """Total mass ``sum(I) * voxel_volume``."""
        return float(np.sum(self.values, dtype=np.float64) * self.geometry.voxel_volume)

    def copy(self) -> "ScalarVolume":
        return ScalarVolume(self.geometry, self.values.copy())


@dataclass
class DisplacementField:
    """Displacement ``u(x) = phi^-1(x) - x`` in mm; zero is the identity map."""

    geometry: GridGeometry
    u: np.ndarray = field(default=None)

    def __post_init__(self):
        shape = (3,) + self.geometry.dims
        if self.u is None:
            self.u = np.zeros(shape)
        self.u = np.asarray(self.u, dtype=np.float64)
        if self.u.shape != shape:
            raise ValueError(f"displacement shape {self.u.shape} does not match {shape}")

    @classmethod
    def identity(cls, geometry: GridGeometry) -> "DisplacementField":
        return cls(geometry)

    def copy(self) -> "DisplacementField":
        return DisplacementField(self.geometry, self.u.copy())

    def index_offsets(self) -> np.ndarray:
        """Displacement expressed in voxel units."""
        return self.u / np.asarray(self.geometry.spacing)[:, None, None, None]

    def max_magnitude(self) -> float:
        return float(np.sqrt(np.max(np.sum(self.u ** 2, axis=0))))


def interpolate_at_indices(values: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of ``values`` at fractional ``indices``.

    Out-of-grid coordinates are clamped to the boundary.
    """
    return ndimage.map_coordinates(values, indices, order=1, mode="nearest", prefilter=False)


def sample_trilinear(vol: ScalarVolume, point) -> float:
    """Trilinear sample of ``vol`` at a physical point in mm (edge-clamped)."""
    idx = vol.geometry.to_index(np.asarray(point, dtype=np.float64).reshape(3, 1))
    return float(interpolate_at_indices(vol.values, idx)[0])


def _inv_spacing(geometry):
    return 1.0 / np.asarray(geometry.spacing, dtype=np.float64)


def pull_back(arrays: np.ndarray, disp: np.ndarray, geometry: GridGeometry) -> np.ndarray:
    """Sample each of ``arrays`` (shape ``(k, nx, ny, nz)``) at ``x + disp(x)``."""
    arrays = np.ascontiguousarray(arrays, dtype=np.float64)
    disp = np.ascontiguousarray(disp, dtype=np.float64)
    return _kernels.pull_back(arrays, disp, _inv_spacing(geometry))


def warp_values(values: np.ndarray, d: DisplacementField) -> np.ndarray:
    """Pull-back ``values(x + u(x))`` on the grid of ``d``."""
    return pull_back(values[None], d.u, d.geometry)[0]


def gradient_array(values: np.ndarray, spacing) -> np.ndarray:
    # central differences inside, first-order one-sided at the faces
    return _kernels.gradient(np.ascontiguousarray(values, dtype=np.float64),
                             np.asarray(spacing, dtype=np.float64))


def gradient(vol: ScalarVolume) -> np.ndarray:
    """Spatial gradient of a volume, shape ``(3, nx, ny, nz)``, per mm."""
    return gradient_array(vol.values, vol.geometry.spacing)


def jacobian_determinant(d: DisplacementField) -> ScalarVolume:
    """Jacobian determinant ``|D phi^-1|`` of the map ``x + u(x)``."""
    sp = np.asarray(d.geometry.spacing, dtype=np.float64)
    return ScalarVolume(d.geometry, _kernels.jacobian_det(np.ascontiguousarray(d.u), sp))


def density_action(I: ScalarVolume, d: DisplacementField, jac: np.ndarray | None = None) -> ScalarVolume:
    """Push-forward of the density ``I dx``: ``|D phi^-1| * I(phi^-1(x))``."""
    if I.geometry != d.geometry:
        raise ValueError("volume and displacement must share geometry")
    if jac is None:
        jac = jacobian_determinant(d).values
    return ScalarVolume(I.geometry, jac * warp_values(I.values, d))


def laplacian_eigenvalues(geometry: GridGeometry) -> np.ndarray:
    """Eigenvalues of the periodic 7-point ``-Laplacian`` on the rfft grid."""
    nx, ny, nz = geometry.dims
    hx, hy, hz = geometry.spacing
    kx = np.fft.fftfreq(nx)[:, None, None]
    ky = np.fft.fftfreq(ny)[None, :, None]
    kz = np.fft.rfftfreq(nz)[None, None, :]
    return ((2 - 2 * np.cos(2 * np.pi * kx)) / hx ** 2
            + (2 - 2 * np.cos(2 * np.pi * ky)) / hy ** 2
            + (2 - 2 * np.cos(2 * np.pi * kz)) / hz ** 2)


def neg_laplacian(v: np.ndarray, geometry: GridGeometry) -> np.ndarray:
    """Periodic 7-point ``-Laplacian`` over the last three axes."""
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros_like(v)
    for ax, h in zip((-3, -2, -1), geometry.spacing):
        out += (2 * v - np.roll(v, 1, axis=ax) - np.roll(v, -1, axis=ax)) / h ** 2
    return out


def inverse_neg_laplacian(v: np.ndarray, geometry: GridGeometry) -> np.ndarray:
    """Solve ``-Laplacian w = v`` spectrally with periodic boundaries.

    Works on the last three axes, so a ``(3, nx, ny, nz)`` vector field is
    solved componentwise. The mean mode of the result is zero.
    """
    v = np.asarray(v, dtype=np.float64)
    lam = laplacian_eigenvalues(geometry)
    inv = np.zeros_like(lam)
    nz = lam > 0
    inv[nz] = 1.0 / lam[nz]
    spec = sfft.rfftn(v, axes=(-3, -2, -1), workers=1)
    spec *= inv
    return sfft.irfftn(spec, s=geometry.dims, axes=(-3, -2, -1), workers=1)


def compose_update(d: DisplacementField, v: np.ndarray, eps: float) -> DisplacementField:
    """Euler update ``phi^-1 <- phi^-1(x + eps * v(x))`` in displacement form."""
    if eps == 0:
        return d.copy()
    step = eps * np.asarray(v, dtype=np.float64)
    return DisplacementField(d.geometry, pull_back(d.u, step, d.geometry) + step)
