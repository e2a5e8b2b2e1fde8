"""Parametric bootstrap sampling of the null chi-square statistic process.

The joint null law of the statistic image is approximated by a diagonal
Wishart process whose spatial correlation is estimated from the residual
images: residual rows scaled to unit norm act as a covariance square root,
and each bootstrap image is the rowwise squared norm of that root applied
to fresh standard normal draws.
"""

import numpy as np

from . import rng
from .glm import DegenerateVoxelError, StatImage


class SqrtCovRoot:
    """V-by-n covariance square root with unit-norm rows."""

    def __init__(self, rows):
        rows = np.asarray(rows, dtype=float)
        if rows.ndim != 2:
            raise ValueError("covariance root must be a 2D V-by-n matrix")
        if not np.isfinite(rows).all():
            raise ValueError("covariance root contains non-finite values")
        norms = np.linalg.norm(rows, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-10):
            raise ValueError("covariance root rows must have unit norm")
        self.rows = rows

    @property
    def n_voxels(self):
        return self.rows.shape[0]

    @property
    def n(self):
        return self.rows.shape[1]


class StatImageStream:
    """Deterministic lazy sequence of null statistic images.

    Image ``b`` is a pure function of the stream's seed and ``b`` alone, so
    materializing any subset, in any order, on any number of workers,
    reproduces identical images.
    """

    def __init__(self, count, make_image):
        if count < 1:
            raise ValueError("bootstrap count must be at least 1")
        self._count = int(count)
        self._make_image = make_image

    def __len__(self):
        return self._count

    def __getitem__(self, b):
        b = int(b)
        if not 0 <= b < self._count:
            raise IndexError(f"bootstrap index {b} out of range [0, {self._count})")
        return self._make_image(b)

    def __iter__(self):
        for b in range(self._count):
            yield self._make_image(b)


def pbj_sqrt_cov(fit):
    """Covariance root from a fit's residual images.

    Row v is the voxel-v residual vector across subjects scaled to unit
    norm.  A zero-norm residual row means the voxel carries no residual
    variation and is reported as degenerate.
    """
    root = np.ascontiguousarray(fit.resid.T)
    norms = np.linalg.norm(root, axis=1)
    bad = ~(norms > np.finfo(float).tiny)
    if bad.any():
        raise DegenerateVoxelError(np.flatnonzero(bad)[0])
    return SqrtCovRoot(root / norms[:, None])


def pbj_sample(root, m1, draw):
    """One diagonal-Wishart image from an n-by-m1 standard normal draw.

    Z(v) is the squared norm of row v of ``root @ draw``, i.e. the v-th
    diagonal entry of the sampled Wishart matrix.
    """
    draw = np.asarray(draw, dtype=float)
    if draw.shape != (root.n, int(m1)):
        raise ValueError(f"draw shape {draw.shape} does not match (n, m1) = {(root.n, int(m1))}")
    proj = root.rows @ draw
    return StatImage(np.einsum("vk,vk->v", proj, proj), df=int(m1))


def pbj_bootstrap(root, m1, B, seed):
    """Stream of B bootstrap statistic images.

    The draw for index b is derived from ``(seed, b)`` through a
    counter-based generator, so streaming, chunking, and parallel
    consumption all see identical images.
    """
    m1 = int(m1)
    if m1 < 1:
        raise ValueError("m1 must be a positive integer")

    def make_image(b):
        draw = rng.stream(seed, rng.PBJ_DRAWS, b).standard_normal((root.n, m1))
        return pbj_sample(root, m1, draw)

    return StatImageStream(B, make_image)
