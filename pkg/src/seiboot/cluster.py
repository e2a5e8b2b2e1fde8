"""Thresholding, 3D connected components, and spatial extent p-values.

Clusters are maximal connected sets of in-mask voxels whose statistic
strictly exceeds the cluster forming threshold.  Their sizes are compared
against the distribution of the maximum cluster size over a null image
stream; the add-one Monte Carlo estimator keeps every p-value strictly
positive.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from ._parallel import parallel_map
from .glm import StatImage

_CONNECTIVITY_RANK = {6: 1, 18: 2, 26: 3}


def _structure(connectivity):
    try:
        rank = _CONNECTIVITY_RANK[int(connectivity)]
    except (KeyError, ValueError):
        raise ValueError(f"connectivity must be one of 6, 18, 26; got {connectivity!r}")
    return ndimage.generate_binary_structure(3, rank)


def _image_values(img):
    values = img.values if isinstance(img, StatImage) else np.asarray(img, dtype=float)
    if values.ndim != 1:
        raise ValueError("statistic image must be a 1D in-mask vector")
    return values


@dataclass(frozen=True)
class ClusterRecord:
    label: int
    size_voxels: int
    extent_mm3: float
    peak_value: float
    peak_site: tuple
    p_value: float = None


@dataclass
class ClusterTable:
    """Suprathreshold clusters sorted by decreasing size (ties: smallest label).

    ``labels`` assigns each in-mask voxel its cluster label (0 outside all
    clusters); together the labels partition the suprathreshold voxels.
    """

    clusters: list
    labels: np.ndarray
    z0: float
    connectivity: int

    def __len__(self):
        return len(self.clusters)

    def __iter__(self):
        return iter(self.clusters)

    def __getitem__(self, i):
        return self.clusters[i]


@dataclass
class MaxSizeDistribution:
    """Maximum cluster size per null image at one threshold."""

    sizes: np.ndarray
    z0: float

    def __post_init__(self):
        self.sizes = np.asarray(self.sizes, dtype=np.int64)
        if self.sizes.ndim != 1 or self.sizes.shape[0] < 1:
            raise ValueError("distribution needs at least one sample")
        if (self.sizes < 0).any():
            raise ValueError("cluster sizes are non-negative")

    @property
    def n_samples(self):
        return self.sizes.shape[0]


def _label_volume(values, z0, connectivity, mask):
    supra = mask.to_volume(values > z0, fill=False)
    return ndimage.label(supra, structure=_structure(connectivity))


def threshold_label(img, z0, connectivity, mask):
    """Label suprathreshold connected components and tabulate them.

    Parameters
    ----------
    img : StatImage or 1D array
        In-mask statistic values.
    z0 : float
        Cluster forming threshold; voxels with value strictly greater
        survive.
    connectivity : {6, 18, 26}
        Face, face+edge, or face+edge+corner adjacency.
    mask : Mask

    Returns
    -------
    ClusterTable with p-values unset.
    """
    values = _image_values(img)
    if z0 <= 0:
        raise ValueError("cluster forming threshold must be positive")
    labeled, n_clusters = _label_volume(values, z0, connectivity, mask)
    labels_flat = labeled[mask.inclusion].astype(np.int64)

    records = []
    if n_clusters:
        sizes = np.bincount(labels_flat, minlength=n_clusters + 1)
        member_idx = np.flatnonzero(labels_flat)
        order = np.argsort(labels_flat[member_idx], kind="stable")
        member_idx = member_idx[order]
        bounds = np.searchsorted(labels_flat[member_idx], np.arange(1, n_clusters + 2))
        for label in range(1, n_clusters + 1):
            members = member_idx[bounds[label - 1] : bounds[label]]
            peak = members[np.argmax(values[members])]
            records.append(
                ClusterRecord(
                    label=label,
                    size_voxels=int(sizes[label]),
                    extent_mm3=float(sizes[label] * mask.voxel_volume_mm3),
                    peak_value=float(values[peak]),
                    peak_site=mask.site_of(peak),
                )
            )
        records.sort(key=lambda r: (-r.size_voxels, r.label))
    return ClusterTable(
        clusters=records, labels=labels_flat, z0=float(z0), connectivity=int(connectivity)
    )


def cluster_sizes(img, z0, connectivity, mask):
    """Sizes of all suprathreshold clusters, in decreasing order.

    The cheap path when only extents matter; ``threshold_label`` builds the
    full table from the same labeling.
    """
    values = _image_values(img)
    if not (values > z0).any():
        return np.empty(0, dtype=np.int64)
    labeled, n_clusters = _label_volume(values, z0, connectivity, mask)
    if n_clusters == 0:
        return np.empty(0, dtype=np.int64)
    sizes = np.bincount(labeled.ravel())[1:]
    return np.sort(sizes)[::-1].astype(np.int64)


def max_cluster_size(img, z0, connectivity, mask):
    """Size of the largest suprathreshold cluster; 0 when none."""
    sizes = cluster_sizes(img, z0, connectivity, mask)
    return int(sizes[0]) if sizes.size else 0


def null_max_distribution(sampler, z0_list, connectivity, mask, workers=1):
    """Max cluster size at every threshold across a null image stream.

    Each image is consumed once, recording its maximum cluster size at all
    thresholds in one pass.  Indexed samplers (len + getitem) may be
    consumed concurrently; results are keyed by bootstrap index so worker
    count never changes the output.

    Returns one MaxSizeDistribution per threshold, in input order.
    """
    z0s = [float(z0) for z0 in z0_list]
    if not z0s:
        raise ValueError("need at least one threshold")

    def maxima(img):
        values = _image_values(img)
        return [max_cluster_size(values, z0, connectivity, mask) for z0 in z0s]

    if hasattr(sampler, "__getitem__") and hasattr(sampler, "__len__"):
        rows = parallel_map(lambda b: maxima(sampler[b]), range(len(sampler)), workers)
    else:
        rows = [maxima(img) for img in sampler]
    if not rows:
        raise ValueError("null sampler yielded no images")
    table = np.asarray(rows, dtype=np.int64)
    return [MaxSizeDistribution(table[:, j], z0s[j]) for j in range(len(z0s))]


def sei_pvalues(observed, dist):
    """Attach spatial extent p-values to an observed cluster table.

    p_j = (1 + #{b : max_size_b >= size_j}) / (B + 1), the add-one Monte
    Carlo estimator, so p-values lie in [1/(B+1), 1].  Cluster order is
    preserved.
    """
    if dist.n_samples < 1:
        raise ValueError("empty null distribution")
    sorted_sizes = np.sort(dist.sizes)
    B = dist.n_samples
    clusters = []
    for rec in observed.clusters:
        count_ge = B - np.searchsorted(sorted_sizes, rec.size_voxels, side="left")
        clusters.append(replace(rec, p_value=(1 + int(count_ge)) / (B + 1)))
    return ClusterTable(
        clusters=clusters,
        labels=observed.labels,
        z0=observed.z0,
        connectivity=observed.connectivity,
    )
