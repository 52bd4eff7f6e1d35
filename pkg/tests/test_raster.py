import numpy as np
import pytest

from gaze_forge.raster import (
    attended_mask,
    connected_components,
    downsample_half,
    instrument_slot,
    normalize_to_distribution,
    part_id,
    part_label,
)


class TestConnectedComponents:
    def test_all_background(self):
        assert connected_components(np.zeros((5, 5), dtype=int)) == []

    def test_single_blob(self):
        mask = np.zeros((7, 7), dtype=int)
        mask[2:5, 3:6] = 1
        comps = connected_components(mask)
        assert len(comps) == 1
        assert comps[0].label == 1
        assert comps[0].area == 9
        assert comps[0].centroid == (3.0, 4.0)

    def test_diagonal_pixels_split_under_4_connectivity(self):
        # Hand enumeration: (0,0) and (1,1) share no 4-neighbourhood edge.
        mask = np.zeros((3, 3), dtype=int)
        mask[0, 0] = 1
        mask[1, 1] = 1
        assert len(connected_components(mask, connectivity=4)) == 2
        assert len(connected_components(mask, connectivity=8)) == 1

    def test_partition_of_foreground(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            mask = rng.integers(0, 4, size=(12, 15))
            comps = connected_components(mask)
            seen = set()
            for comp in comps:
                pixels = {tuple(p) for p in comp.pixels}
                assert not (pixels & seen), "components overlap"
                seen |= pixels
                assert all(mask[r, c] == comp.label for r, c in pixels)
            assert seen == {tuple(p) for p in np.argwhere(mask > 0)}

    def test_deterministic_order(self):
        mask = np.zeros((6, 6), dtype=int)
        mask[4, 4] = 1
        mask[0, 0] = 2
        mask[0, 3] = 1
        comps = connected_components(mask)
        keys = [(c.label, tuple(c.pixels[0])) for c in comps]
        assert keys == sorted(keys)

    def test_rejects_bad_connectivity_and_negative_labels(self):
        with pytest.raises(ValueError):
            connected_components(np.zeros((3, 3), dtype=int), connectivity=6)
        with pytest.raises(ValueError):
            connected_components(np.array([[-1, 0]]))


class TestDownsampleHalf:
    def test_constant_block(self):
        out = downsample_half(np.ones((2, 2)))
        assert out.shape == (1, 1)
        assert out[0, 0] == 1.0

    def test_hand_mean(self):
        out = downsample_half(np.array([[0.0, 2.0], [0.0, 2.0]]))
        assert out[0, 0] == 1.0

    def test_odd_dims_drop_trailing(self):
        m = np.arange(9, dtype=float).reshape(3, 3)
        out = downsample_half(m)
        assert out.shape == (1, 1)
        assert out[0, 0] == pytest.approx((0 + 1 + 3 + 4) / 4, abs=0)

    def test_too_small(self):
        with pytest.raises(ValueError, match="too small"):
            downsample_half(np.ones((1, 5)))

    def test_mean_preserved_on_retained_region(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            h, w = rng.integers(2, 17, size=2)
            m = rng.random((h, w))
            retained = m[: 2 * (h // 2), : 2 * (w // 2)]
            assert abs(downsample_half(m).mean() - retained.mean()) < 1e-12

    def test_rejects_nan(self):
        m = np.ones((4, 4))
        m[1, 1] = np.nan
        with pytest.raises(ValueError):
            downsample_half(m)


class TestNormalizeToDistribution:
    def test_symmetric(self):
        np.testing.assert_allclose(normalize_to_distribution([2.0, 2.0]), [0.5, 0.5])

    def test_zero_sum_goes_uniform(self):
        np.testing.assert_allclose(normalize_to_distribution([0.0, 0.0, 0.0]), [1 / 3] * 3)

    def test_hand_division(self):
        np.testing.assert_allclose(normalize_to_distribution([1.0, 3.0]), [0.25, 0.75])

    def test_negative_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            normalize_to_distribution([1.0, -0.5])

    def test_sums_to_one_and_idempotent(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            v = rng.random(int(rng.integers(1, 40))) * rng.uniform(0.1, 100)
            p = normalize_to_distribution(v)
            assert abs(p.sum() - 1.0) < 1e-12
            np.testing.assert_allclose(normalize_to_distribution(p), p, atol=1e-12)


class TestPartLabels:
    def test_slot_and_part_roundtrip(self):
        for slot in (1, 2, 5):
            for part in (1, 2, 3):
                label = part_label(slot, part)
                assert instrument_slot(np.array([[label]]))[0, 0] == slot
                assert part_id(np.array([[label]]))[0, 0] == part

    def test_attended_mask_selects_wrist_and_clasper(self):
        mask = np.array([[0, 1, 2], [3, 4, 5]])  # instrument 1 parts + instrument 2 shaft/wrist
        out = attended_mask(mask, 1)
        np.testing.assert_array_equal(out, [[False, False, True], [True, False, False]])
        out2 = attended_mask(mask, 2)
        np.testing.assert_array_equal(out2, [[False, False, False], [False, False, True]])
