"""3D lattice geometry and in-mask voxel indexing."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Mask:
    """Bookkeeping for the analysis lattice.

    In-mask voxels are numbered ``0..V-1`` in C scan order; every
    statistic vector in the package uses that order.  ``affine`` maps
    voxel indices to world (mm) coordinates and defaults to a diagonal
    matrix built from ``voxel_size``.
    """

    inclusion: np.ndarray
    voxel_size: tuple = (1.0, 1.0, 1.0)
    affine: np.ndarray = None
    sites: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.inclusion = np.asarray(self.inclusion, dtype=bool)
        if self.inclusion.ndim != 3:
            raise ValueError("mask inclusion array must be 3D")
        if not self.inclusion.any():
            raise ValueError("mask contains no voxels")
        self.voxel_size = tuple(float(s) for s in self.voxel_size)
        if len(self.voxel_size) != 3 or any(s <= 0 for s in self.voxel_size):
            raise ValueError("voxel sizes must be three positive numbers")
        if self.affine is None:
            self.affine = np.diag(self.voxel_size + (1.0,))
        self.affine = np.asarray(self.affine, dtype=float)
        if self.affine.shape != (4, 4) or abs(np.linalg.det(self.affine)) < 1e-12:
            raise ValueError("affine must be an invertible 4x4 matrix")
        self.sites = np.argwhere(self.inclusion)
        lookup = np.full(self.inclusion.shape, -1, dtype=np.int64)
        lookup[self.inclusion] = np.arange(self.sites.shape[0])
        self._lookup = lookup

    @property
    def dims(self):
        return self.inclusion.shape

    @property
    def n_voxels(self):
        return self.sites.shape[0]

    @property
    def voxel_volume_mm3(self):
        sx, sy, sz = self.voxel_size
        return sx * sy * sz

    def index_of(self, site):
        """Flat in-mask index of a lattice site; raises if outside the mask."""
        i, j, k = site
        idx = int(self._lookup[i, j, k])
        if idx < 0:
            raise ValueError(f"site {tuple(site)} is not in the mask")
        return idx

    def site_of(self, index):
        return tuple(int(c) for c in self.sites[int(index)])

    def to_volume(self, values, fill=0.0):
        """Scatter a V-vector back onto the full lattice."""
        values = np.asarray(values)
        if values.shape != (self.n_voxels,):
            raise ValueError(f"expected {self.n_voxels} in-mask values, got shape {values.shape}")
        out = np.full(self.dims, fill, dtype=np.result_type(values.dtype, type(fill)))
        out[self.inclusion] = values
        return out

    def from_volume(self, volume):
        volume = np.asarray(volume)
        if volume.shape != self.dims:
            raise ValueError(f"volume shape {volume.shape} does not match mask dims {self.dims}")
        return volume[self.inclusion]

    @classmethod
    def full(cls, dims, voxel_size=(1.0, 1.0, 1.0), affine=None):
        return cls(np.ones(dims, dtype=bool), voxel_size, affine)

    @classmethod
    def ellipsoid(cls, dims, voxel_size=(1.0, 1.0, 1.0), semi_axis_fraction=0.45, affine=None):
        """Ellipsoidal mask centered in the grid.

        Semi-axes are ``semi_axis_fraction`` of each grid extent, giving a
        brain-like blob with boundary voxels on every side.
        """
        dims = tuple(int(d) for d in dims)
        centers = [(d - 1) / 2.0 for d in dims]
        axes = [max(semi_axis_fraction * d, 1.0) for d in dims]
        grids = np.ogrid[tuple(slice(0, d) for d in dims)]
        r2 = sum(((g - c) / a) ** 2 for g, c, a in zip(grids, centers, axes))
        return cls(r2 <= 1.0, voxel_size, affine)
