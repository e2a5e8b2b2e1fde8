"""Tests for thresholding, component labeling, and extent p-values."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from seiboot.cluster import (
    MaxSizeDistribution,
    max_cluster_size,
    null_max_distribution,
    sei_pvalues,
    threshold_label,
)
from seiboot.glm import StatImage
from seiboot.grid import Mask
from seiboot.pbj import SqrtCovRoot, pbj_bootstrap


def _values_for(mask, volume):
    return np.asarray(volume, dtype=float)[mask.inclusion]


def _pair_mask_values(site_a, site_b, dims=(5, 5, 5)):
    mask = Mask.full(dims)
    vol = np.zeros(dims)
    vol[site_a] = 5.0
    vol[site_b] = 4.0
    return mask, _values_for(mask, vol)


def test_empty_table_when_nothing_survives():
    mask = Mask.full((4, 4, 4))
    table = threshold_label(np.zeros(mask.n_voxels), 1.0, 26, mask)
    assert len(table) == 0
    assert table.labels.sum() == 0


def test_face_neighbors_connect_at_all_connectivities():
    mask, values = _pair_mask_values((1, 1, 1), (1, 1, 2))
    for conn in (6, 18, 26):
        table = threshold_label(values, 1.0, conn, mask)
        assert [rec.size_voxels for rec in table] == [2]


def test_edge_neighbors_split_at_6():
    mask, values = _pair_mask_values((1, 1, 1), (1, 2, 2))
    sizes = {
        conn: [rec.size_voxels for rec in threshold_label(values, 1.0, conn, mask)]
        for conn in (6, 18, 26)
    }
    assert sizes[6] == [1, 1]
    assert sizes[18] == [2]
    assert sizes[26] == [2]


def test_corner_neighbors_connect_only_at_26():
    mask, values = _pair_mask_values((1, 1, 1), (2, 2, 2))
    assert max_cluster_size(values, 1.0, 6, mask) == 1
    assert max_cluster_size(values, 1.0, 18, mask) == 1
    assert max_cluster_size(values, 1.0, 26, mask) == 2


def test_threshold_is_strict():
    mask = Mask.full((3, 3, 3))
    values = np.full(mask.n_voxels, 2.0)
    assert max_cluster_size(values, 2.0, 26, mask) == 0


def test_clusters_outside_mask_are_ignored():
    inclusion = np.zeros((4, 4, 4), dtype=bool)
    inclusion[0, 0, 0] = True
    inclusion[3, 3, 3] = True
    mask = Mask(inclusion)
    values = np.array([3.0, 3.0])
    table = threshold_label(values, 1.0, 26, mask)
    assert [rec.size_voxels for rec in table] == [1, 1]


def test_table_sorted_by_size_then_label():
    mask = Mask.full((8, 8, 8))
    vol = np.zeros((8, 8, 8))
    vol[0, 0, 0:2] = 9.0       # size 2, first in scan order
    vol[4, 4, 4:6] = 3.0       # size 2
    vol[6:8, 6, 6] = 1.5       # another size 2? make it size 1
    vol[6, 6, 6] = 1.5
    vol[7, 6, 6] = 0.0
    vol[2, 2, 2:5] = 2.0       # size 3
    table = threshold_label(_values_for(mask, vol), 1.0, 26, mask)
    sizes = [rec.size_voxels for rec in table]
    assert sizes == sorted(sizes, reverse=True)
    ties = [rec.label for rec in table if rec.size_voxels == 2]
    assert ties == sorted(ties)


def test_record_fields():
    mask = Mask.full((4, 4, 4), voxel_size=(2.0, 2.0, 3.0))
    vol = np.zeros((4, 4, 4))
    vol[1, 1, 1] = 4.0
    vol[1, 1, 2] = 7.0
    table = threshold_label(_values_for(mask, vol), 1.0, 6, mask)
    rec = table[0]
    assert rec.size_voxels == 2
    assert rec.extent_mm3 == pytest.approx(2 * 2.0 * 2.0 * 3.0)
    assert rec.peak_value == 7.0
    assert rec.peak_site == (1, 1, 2)
    assert rec.p_value is None


def test_labels_partition_suprathreshold_voxels():
    rng = np.random.default_rng(0)
    mask = Mask.ellipsoid((10, 10, 10))
    values = rng.chisquare(1, size=mask.n_voxels)
    table = threshold_label(values, 1.5, 26, mask)
    assert np.array_equal(table.labels > 0, values > 1.5)
    assert sum(rec.size_voxels for rec in table) == int((values > 1.5).sum())
    assert sum(rec.size_voxels for rec in table) <= mask.n_voxels


def test_max_cluster_size_trivia():
    mask = Mask.full((3, 3, 3))
    assert max_cluster_size(np.zeros(27), 0.5, 26, mask) == 0
    one = np.zeros(27)
    one[13] = 1.0
    assert max_cluster_size(one, 0.5, 26, mask) == 1


def test_cluster_sizes_matches_table():
    from seiboot.cluster import cluster_sizes

    rng = np.random.default_rng(7)
    mask = Mask.ellipsoid((9, 9, 9))
    values = rng.chisquare(1, mask.n_voxels) * 2
    sizes = cluster_sizes(values, 1.5, 26, mask)
    table = threshold_label(values, 1.5, 26, mask)
    assert sizes.tolist() == [rec.size_voxels for rec in table]
    assert cluster_sizes(np.zeros(mask.n_voxels), 1.0, 26, mask).size == 0


def test_labeling_matches_flood_fill_oracle():
    rng = np.random.default_rng(1)
    mask = Mask.full((12, 12, 12))
    for _ in range(60):
        density = rng.uniform(0.05, 0.5)
        values = (rng.random(mask.n_voxels) < density).astype(float)
        for conn in (6, 18, 26):
            table = threshold_label(values, 0.5, conn, mask)
            sizes = sorted(rec.size_voxels for rec in table)
            grid = mask.to_volume(values > 0.5, fill=False)
            assert sizes == oracles.flood_fill_sizes(grid, conn)


def test_labeling_axis_flip_invariance():
    rng = np.random.default_rng(2)
    dims = (9, 9, 9)
    mask = Mask.full(dims)
    values = (rng.random(dims) < 0.3).astype(float)
    base = sorted(
        rec.size_voxels
        for rec in threshold_label(values[mask.inclusion], 0.5, 18, mask)
    )
    for axis in range(3):
        flipped = np.flip(values, axis=axis)
        sizes = sorted(
            rec.size_voxels
            for rec in threshold_label(flipped[mask.inclusion], 0.5, 18, mask)
        )
        assert sizes == base


def test_null_max_distribution_all_zero_images():
    mask = Mask.full((4, 4, 4))
    images = [StatImage(np.zeros(mask.n_voxels), df=1) for _ in range(5)]
    dists = null_max_distribution(iter(images), [1.0, 2.0], 26, mask)
    for dist in dists:
        np.testing.assert_array_equal(dist.sizes, 0)
        assert dist.n_samples == 5


def test_null_max_distribution_single_image():
    rng = np.random.default_rng(3)
    mask = Mask.full((5, 5, 5))
    img = StatImage(rng.chisquare(1, mask.n_voxels), df=1)
    dists = null_max_distribution([img], [1.0], 26, mask)
    assert dists[0].sizes.tolist() == [max_cluster_size(img, 1.0, 26, mask)]


def test_null_max_distribution_matches_per_image_recomputation():
    rng = np.random.default_rng(4)
    mask = Mask.ellipsoid((8, 8, 8))
    rows = rng.standard_normal((mask.n_voxels, 12))
    root = SqrtCovRoot(rows / np.linalg.norm(rows, axis=1, keepdims=True))
    sampler = pbj_bootstrap(root, 1, 50, seed=11)
    z0s = [1.0, 6.63]
    dists = null_max_distribution(sampler, z0s, 26, mask)
    for b in range(50):
        img = sampler[b]
        for z0, dist in zip(z0s, dists):
            assert dist.sizes[b] == max_cluster_size(img, z0, 26, mask)


def test_null_max_distribution_worker_invariance():
    rng = np.random.default_rng(5)
    mask = Mask.ellipsoid((8, 8, 8))
    rows = rng.standard_normal((mask.n_voxels, 10))
    root = SqrtCovRoot(rows / np.linalg.norm(rows, axis=1, keepdims=True))
    a = null_max_distribution(pbj_bootstrap(root, 1, 30, seed=6), [2.5], 26, mask)
    b = null_max_distribution(
        pbj_bootstrap(root, 1, 30, seed=6), [2.5], 26, mask, workers=4
    )
    np.testing.assert_array_equal(a[0].sizes, b[0].sizes)


def _table_with_run(length, dims=(12, 12, 12)):
    """A cluster table holding one straight run of ``length`` voxels."""
    mask = Mask.full(dims)
    vol = np.zeros(dims)
    vol[0, 0, :length] = 2.0
    return threshold_label(vol[mask.inclusion], 1.0, 26, mask)


def test_sei_pvalues_add_one_estimator():
    dist = MaxSizeDistribution(np.array([2, 3, 11, 5]), z0=1.0)
    # size 10: one null max (11) reaches it -> (1 + 1) / 5
    out = sei_pvalues(_table_with_run(10), dist)
    assert out[0].p_value == pytest.approx(0.4)
    # size 3: null maxima {3, 11, 5} reach it -> (1 + 3) / 5
    out = sei_pvalues(_table_with_run(3), dist)
    assert out[0].p_value == pytest.approx(0.8)


def test_sei_pvalues_never_zero():
    dist = MaxSizeDistribution(np.zeros(199, dtype=int), z0=1.0)
    out = sei_pvalues(_table_with_run(10), dist)
    assert out[0].p_value == pytest.approx(1 / 200)


def test_sei_pvalues_empty_table_passthrough():
    mask = Mask.full((4, 4, 4))
    table = threshold_label(np.zeros(mask.n_voxels), 1.0, 26, mask)
    out = sei_pvalues(table, MaxSizeDistribution(np.array([0, 1, 2]), z0=1.0))
    assert len(out) == 0


def test_sei_pvalues_preserves_order_and_monotonicity():
    rng = np.random.default_rng(6)
    mask = Mask.ellipsoid((10, 10, 10))
    values = rng.chisquare(1, mask.n_voxels) * 2
    table = threshold_label(values, 2.0, 26, mask)
    dist = MaxSizeDistribution(rng.integers(0, 20, size=99), z0=2.0)
    out = sei_pvalues(table, dist)
    assert [r.label for r in out] == [r.label for r in table]
    ps = [r.p_value for r in out]
    sizes = [r.size_voxels for r in out]
    for j in range(len(ps) - 1):
        assert sizes[j] >= sizes[j + 1]
        assert ps[j] <= ps[j + 1]
    assert all(1 / 100 <= p <= 1.0 for p in ps)


@settings(max_examples=25, deadline=None)
@given(
    sizes=st.lists(st.integers(0, 30), min_size=1, max_size=40),
    observed=st.integers(1, 10),
)
def test_pvalue_estimator_properties(sizes, observed):
    dist = MaxSizeDistribution(np.array(sizes), z0=1.0)
    p = sei_pvalues(_table_with_run(observed), dist)[0].p_value
    B = len(sizes)
    assert 1 / (B + 1) <= p <= 1.0
    expected = (1 + sum(s >= observed for s in sizes)) / (B + 1)
    assert p == pytest.approx(expected)


def test_connectivity_validation():
    mask = Mask.full((3, 3, 3))
    with pytest.raises(ValueError, match="connectivity"):
        threshold_label(np.ones(27), 0.5, 10, mask)
    with pytest.raises(ValueError, match="threshold must be positive"):
        threshold_label(np.ones(27), 0.0, 26, mask)
