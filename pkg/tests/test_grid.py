"""Tests for mask geometry and indexing."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seiboot.grid import Mask


def test_index_round_trip_every_site():
    rng = np.random.default_rng(0)
    mask = Mask(rng.random((5, 6, 4)) < 0.4)
    for index in range(mask.n_voxels):
        site = mask.site_of(index)
        assert mask.index_of(site) == index


def test_index_of_rejects_outside_site():
    inclusion = np.zeros((3, 3, 3), dtype=bool)
    inclusion[1, 1, 1] = True
    mask = Mask(inclusion)
    with pytest.raises(ValueError, match="not in the mask"):
        mask.index_of((0, 0, 0))


def test_volume_round_trip():
    rng = np.random.default_rng(1)
    mask = Mask(rng.random((4, 5, 6)) < 0.5)
    values = rng.standard_normal(mask.n_voxels)
    vol = mask.to_volume(values, fill=-1.0)
    np.testing.assert_array_equal(mask.from_volume(vol), values)
    assert np.all(vol[~mask.inclusion] == -1.0)


def test_voxel_volume():
    mask = Mask.full((2, 2, 2), voxel_size=(2.0, 3.0, 1.5))
    assert mask.voxel_volume_mm3 == pytest.approx(9.0)


def test_default_affine_from_voxel_size():
    mask = Mask.full((2, 2, 2), voxel_size=(2.0, 2.0, 2.0))
    np.testing.assert_allclose(mask.affine, np.diag([2.0, 2.0, 2.0, 1.0]))


def test_empty_mask_rejected():
    with pytest.raises(ValueError, match="no voxels"):
        Mask(np.zeros((3, 3, 3), dtype=bool))


def test_bad_voxel_size_rejected():
    with pytest.raises(ValueError, match="positive"):
        Mask.full((2, 2, 2), voxel_size=(1.0, 0.0, 1.0))


def test_ellipsoid_has_margin_and_interior():
    mask = Mask.ellipsoid((24, 24, 24))
    assert 0 < mask.n_voxels < 24**3
    # boundary planes stay outside the ellipsoid
    assert not mask.inclusion[0].any()
    assert not mask.inclusion[-1].any()
    assert mask.inclusion[12, 12, 12]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_round_trip_random_masks(seed):
    rng = np.random.default_rng(seed)
    inclusion = rng.random((3, 4, 3)) < 0.5
    if not inclusion.any():
        inclusion[0, 0, 0] = True
    mask = Mask(inclusion)
    assert mask.n_voxels == int(inclusion.sum())
    sites = [mask.site_of(i) for i in range(mask.n_voxels)]
    assert [mask.index_of(s) for s in sites] == list(range(mask.n_voxels))
