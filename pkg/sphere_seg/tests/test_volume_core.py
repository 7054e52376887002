import numpy as np
import pytest

from sphere_seg.Scripts.exceptions import (
    DegenerateVolumeError,
    DimensionMismatchError,
    InvalidLabelError,
    InvalidVolumeError,
)
from sphere_seg.Scripts.volume_core import (
    LabelVolume,
    MultiChannelVolume,
    Region,
    RegionMask,
    ScalarVolume,
    Spacing,
    labels_from_region_masks,
    nonzero_mask,
    normalize_with_stats,
    region_masks_from_labels,
    voxel_to_mm,
    zscore_normalize,
)


# --- 1. Types: construction invariants ---
def test_spacing_must_be_positive():
    """Zero or negative spacing is rejected; anisotropy is fine."""
    with pytest.raises(InvalidVolumeError):
        Spacing(1.0, 0.0, 1.0)
    with pytest.raises(InvalidVolumeError):
        Spacing(-1.0, 1.0, 1.0)
    assert Spacing(0.5, 1.0, 2.0).voxel_volume == pytest.approx(1.0)


def test_scalar_volume_rejects_non_finite_and_is_read_only():
    data = np.zeros((2, 2, 2), dtype=np.float32)
    data[0, 0, 0] = np.nan
    with pytest.raises(InvalidVolumeError):
        ScalarVolume(data, Spacing.isotropic())

    volume = ScalarVolume(np.ones((2, 2, 2)), Spacing.isotropic())
    assert volume.data.dtype == np.float32
    with pytest.raises(ValueError):
        volume.data[0, 0, 0] = 5


def test_multichannel_requires_shared_geometry():
    a = ScalarVolume(np.ones((2, 2, 2)), Spacing.isotropic())
    b = ScalarVolume(np.ones((2, 2, 3)), Spacing.isotropic())
    with pytest.raises(DimensionMismatchError):
        MultiChannelVolume((a, b))
    with pytest.raises(InvalidVolumeError):
        MultiChannelVolume(())

    four = MultiChannelVolume((a, a, a, a))
    assert four.names == ("t1", "t1ce", "t2", "flair")


def test_label_volume_rejects_label_three():
    with pytest.raises(InvalidLabelError):
        LabelVolume(np.full((2, 2, 2), 3), Spacing.isotropic())


# --- 2. Geometry ---
@pytest.mark.parametrize(
    "index, spacing, expected",
    [
        ((0, 0, 0), (1, 1, 1), (0.0, 0.0, 0.0)),
        ((2, 3, 4), (1, 1, 1), (2.0, 3.0, 4.0)),
        ((2, 3, 4), (0.5, 0.5, 2.0), (1.0, 1.5, 8.0)),
    ],
)
def test_voxel_to_mm(index, spacing, expected):
    assert voxel_to_mm(index, Spacing.from_sequence(spacing)) == pytest.approx(expected)


# --- 3. Labels and regions ---
def test_region_masks_enumerate_label_membership():
    labels = LabelVolume(np.array([1, 2, 4, 0]).reshape(4, 1, 1), Spacing.isotropic())
    wt, tc, et = region_masks_from_labels(labels)
    np.testing.assert_array_equal(wt.data.ravel(), [1, 1, 1, 0])
    np.testing.assert_array_equal(tc.data.ravel(), [1, 0, 1, 0])
    np.testing.assert_array_equal(et.data.ravel(), [0, 0, 1, 0])


def test_region_masks_of_empty_and_single_enhancing_voxel():
    spacing = Spacing.isotropic()
    empty = region_masks_from_labels(LabelVolume.empty((3, 3, 3), spacing))
    assert all(m.voxel_count == 0 for m in empty)

    data = np.zeros((3, 3, 3), dtype=np.uint8)
    data[1, 1, 1] = 4
    masks = region_masks_from_labels(LabelVolume(data, spacing))
    assert all(m.data[1, 1, 1] and m.voxel_count == 1 for m in masks)


def test_labels_from_masks_applies_union_closure():
    """ET set with TC clear still becomes label 4; WT-only becomes 2."""
    spacing = Spacing.isotropic()
    wt = np.zeros((3, 1, 1), dtype=bool)
    tc = np.zeros_like(wt)
    et = np.zeros_like(wt)
    wt[0] = True
    et[2] = True

    labels = labels_from_region_masks(
        RegionMask(Region.WT, wt, spacing), RegionMask(Region.TC, tc, spacing), RegionMask(Region.ET, et, spacing)
    )
    np.testing.assert_array_equal(labels.data.ravel(), [2, 0, 4])


def test_labels_from_masks_rejects_dimension_mismatch():
    spacing = Spacing.isotropic()
    with pytest.raises(DimensionMismatchError):
        labels_from_region_masks(
            RegionMask(Region.WT, np.zeros((2, 2, 2), bool), spacing),
            RegionMask(Region.TC, np.zeros((2, 2, 3), bool), spacing),
            RegionMask(Region.ET, np.zeros((2, 2, 2), bool), spacing),
        )


def test_nesting_and_round_trip_on_random_labels():
    """Masks from any label volume nest, and labels -> masks -> labels is the identity."""
    rng = np.random.default_rng(7)
    spacing = Spacing.isotropic()
    for _ in range(20):
        data = rng.choice([0, 1, 2, 4], size=(5, 6, 4))
        labels = LabelVolume(data, spacing)
        masks = region_masks_from_labels(labels)
        assert masks.is_nested()
        np.testing.assert_array_equal(labels_from_region_masks(*masks).data, labels.data)


# --- 4. Intensities ---
def test_nonzero_mask_is_strict():
    data = np.zeros((3, 3, 3), dtype=np.float32)
    assert not nonzero_mask(ScalarVolume(data, Spacing.isotropic())).any()
    data[0, 1, 2] = 1e-9
    mask = nonzero_mask(ScalarVolume(data, Spacing.isotropic()))
    assert mask.sum() == 1 and mask[0, 1, 2]


def test_nonzero_mask_matches_phantom_brain(small_phantom, small_phantom_spec):
    channels, _ = small_phantom
    spec = small_phantom_spec
    center = spec.volume_center()
    semi = np.asarray(spec.brain_semi_axes_mm)
    points = np.indices(spec.dims).reshape(3, -1).T * np.asarray(spec.spacing)
    brain = ((((points - center) / semi) ** 2).sum(axis=1) <= 1.0).reshape(spec.dims)
    np.testing.assert_array_equal(nonzero_mask(channels.channels[0]), brain)


def test_zscore_two_point():
    data = np.zeros((2, 2, 1), dtype=np.float32)
    data[0, 0, 0] = 1.0
    data[1, 1, 0] = 3.0
    out = zscore_normalize(ScalarVolume(data, Spacing.isotropic())).data
    assert out[0, 0, 0] == pytest.approx(-1.0)
    assert out[1, 1, 0] == pytest.approx(1.0)
    assert out[0, 1, 0] == 0 and out[1, 0, 0] == 0


def test_zscore_statistics_and_zero_set_on_random_volumes():
    rng = np.random.default_rng(11)
    for _ in range(25):
        data = rng.normal(5.0, 2.0, size=(6, 7, 5)).astype(np.float32)
        data[rng.random(data.shape) < 0.4] = 0.0
        volume = ScalarVolume(data, Spacing.isotropic())

        out = zscore_normalize(volume).data
        nonzero = data != 0
        np.testing.assert_array_equal(out != 0, nonzero)
        values = out[nonzero].astype(np.float64)
        assert abs(values.mean()) < 1e-4
        assert abs(values.std() - 1.0) < 1e-3


def test_zscore_is_idempotent_on_normalized_input():
    rng = np.random.default_rng(3)
    once = zscore_normalize(ScalarVolume(rng.normal(size=(8, 8, 8)), Spacing.isotropic()))
    twice = zscore_normalize(once)
    np.testing.assert_allclose(twice.data, once.data, atol=1e-6)


def test_zscore_degenerate_inputs_raise():
    with pytest.raises(DegenerateVolumeError):
        zscore_normalize(ScalarVolume(np.zeros((3, 3, 3)), Spacing.isotropic()))
    constant = np.zeros((3, 3, 3))
    constant[:2] = 7.0
    with pytest.raises(DegenerateVolumeError):
        zscore_normalize(ScalarVolume(constant, Spacing.isotropic()))


def test_normalization_stats_restore_original_units():
    data = np.zeros((4, 4, 4), dtype=np.float32)
    data[1:3, 1:3, 1:3] = np.arange(8, dtype=np.float32).reshape(2, 2, 2) + 1
    normalized, stats = normalize_with_stats(ScalarVolume(data, Spacing.isotropic()))
    np.testing.assert_allclose(stats.restore(normalized.data), data, atol=1e-5)
