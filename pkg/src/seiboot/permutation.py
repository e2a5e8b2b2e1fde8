"""Permutation baseline for spatial extent inference under exchangeability.

Nuisance effects are estimated once on the reduced model; residual rows
are then permuted and reattached to the fitted nuisance signal, and each
rebuilt dataset's full-model F image feeds the max-cluster-size
distribution.  Permuting reduced-model residuals keeps the nuisance fit
honest while breaking any interest association.
"""

import numpy as np

from . import rng
from ._parallel import parallel_map
from .cluster import MaxSizeDistribution, max_cluster_size
from .glm import DegenerateVoxelError, _RSS_REL_TOL, chisq_to_f_threshold


def freedman_lane_max_distribution(
    Y, X, z0_list, connectivity, mask, B, seed, workers=1, permutations=None
):
    """Null max-cluster-size distributions from permuted reduced-model residuals.

    For each permutation the rebuilt outcome is X0 a-hat + pi(residuals) and
    the full-model partial F image is thresholded.  Thresholds are applied
    on the F scale through the exact monotone pullback of each chi-square
    threshold, which yields cluster sizes identical to transforming every
    permuted image and is far cheaper.

    Parameters
    ----------
    Y : OutcomeStack
    X : Design with a single interest column.
    z0_list : chi-square(1)-scale thresholds.
    B : number of permutations.
    seed : permutation b is a pure function of (seed, b).
    permutations : callable(b) -> index array, optional
        Override the seeded permutation stream (testing hook).

    Returns one MaxSizeDistribution per threshold, labeled with the
    chi-square threshold it corresponds to.
    """
    if X.m1 != 1:
        raise ValueError("permutation baseline requires a scalar interest column")
    n, V = Y.data.shape
    if n != X.n:
        raise ValueError("outcome stack and design disagree on subject count")
    if n <= X.m:
        raise ValueError("need more subjects than design columns")
    if B < 1:
        raise ValueError("permutation count must be at least 1")
    z0s = [float(z0) for z0 in z0_list]
    df2 = n - X.m
    f_thresholds = [chisq_to_f_threshold(z0, 1, df2) for z0 in z0s]

    # Reduced-model pieces shared by every permutation.
    q0, _ = np.linalg.qr(X.X0)
    resid = Y.data - q0 @ (q0.T @ Y.data)
    ss_resid = np.einsum("iv,iv->v", resid, resid)
    x1 = X.X1[:, 0]
    x1_perp = x1 - q0 @ (q0.T @ x1)
    x1_energy = float(x1_perp @ x1_perp)
    if x1_energy <= _RSS_REL_TOL * float(x1 @ x1):
        raise ValueError("interest column collinear with nuisance")
    tiny = _RSS_REL_TOL * np.maximum(ss_resid, np.finfo(float).tiny)

    def one(b):
        if permutations is not None:
            perm = np.asarray(permutations(b), dtype=np.intp)
        else:
            perm = rng.stream(seed, rng.PERMUTATIONS, b).permutation(n)
        resid_p = resid[perm]
        # Row permutation preserves the columnwise sum of squares, so the
        # reduced RSS only needs the projection onto the nuisance basis.
        proj = q0.T @ resid_p
        rss0 = ss_resid - np.einsum("jv,jv->v", proj, proj)
        explained = (x1_perp @ resid_p) ** 2 / x1_energy
        rss = np.maximum(rss0 - explained, 0.0)
        degenerate = (rss <= tiny) & (rss0 > tiny)
        if degenerate.any():
            raise DegenerateVoxelError(np.flatnonzero(degenerate)[0])
        T = np.zeros(V)
        ok = rss > tiny
        T[ok] = explained[ok] / (rss[ok] / df2)
        return [max_cluster_size(T, t, connectivity, mask) for t in f_thresholds]

    rows = np.asarray(parallel_map(one, range(int(B)), workers), dtype=np.int64)
    return [MaxSizeDistribution(rows[:, j], z0s[j]) for j in range(len(z0s))]
