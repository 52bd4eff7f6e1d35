import math

import numpy as np
import pytest

from gaze_forge.raster import CLASPER, WRIST, part_label
from gaze_forge.saliency import (
    Fixation,
    PartDynamics,
    generate_scanpath,
    instrument_weights,
    part_dynamics,
    place_fixations,
    render_saliency,
)


def dyn(instrument_id, deformation, displacement):
    return PartDynamics(
        instrument_id=instrument_id,
        area_t=100,
        area_prev=100,
        deformation=deformation,
        displacement=displacement,
        centroid_t=(0.0, 0.0),
        centroid_prev=(0.0, 0.0),
    )


class TestPartDynamics:
    def test_stationary_instrument(self):
        mask = np.zeros((20, 20), dtype=int)
        mask[2:12, 3:13] = part_label(1, WRIST)  # area 100
        out = part_dynamics(mask, mask, [1])
        assert len(out) == 1
        assert out[0].area_t == 100
        assert out[0].deformation == 1.0
        assert out[0].displacement == 0.0

    def test_growth_and_translation(self):
        # prev: 10x10 wrist, centroid (4.5, 14.5); t: 10x20, centroid (7.5, 18.5)
        # -> deformation 200/100 = 2, displacement hypot(3, 4) = 5.
        prev = np.zeros((40, 40), dtype=int)
        prev[0:10, 10:20] = part_label(1, WRIST)
        cur = np.zeros((40, 40), dtype=int)
        cur[3:13, 9:29] = part_label(1, WRIST)
        out = part_dynamics(cur, prev, [1])
        assert out[0].deformation == 2.0
        assert out[0].displacement == 5.0

    def test_instrument_missing_in_one_frame_is_omitted(self, caplog):
        cur = np.zeros((8, 8), dtype=int)
        cur[1:3, 1:3] = part_label(1, CLASPER)
        prev = np.zeros((8, 8), dtype=int)
        with caplog.at_level("WARNING"):
            out = part_dynamics(cur, prev, [1])
        assert out == []
        assert "instrument 1" in caplog.text

    def test_instrument_absent_everywhere_is_silent(self, caplog):
        empty = np.zeros((8, 8), dtype=int)
        with caplog.at_level("WARNING"):
            assert part_dynamics(empty, empty, [3]) == []
        assert caplog.text == ""

    def test_area_is_wrist_union_clasper(self):
        cur = np.zeros((10, 10), dtype=int)
        cur[0:2, 0:2] = part_label(1, WRIST)    # 4 px
        cur[5:8, 5:7] = part_label(1, CLASPER)  # 6 px
        cur[9, 9] = part_label(1, 1)            # shaft: not counted
        out = part_dynamics(cur, cur, [1])
        assert out[0].area_t == 10

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimensions differ"):
            part_dynamics(np.zeros((4, 4), dtype=int), np.zeros((5, 4), dtype=int), [1])


class TestInstrumentWeights:
    def test_two_instrument_worked_example(self):
        weights = instrument_weights([dyn(1, 1.0, 5.0), dyn(2, 2.0, 10.0)], 0.5, 0.5)
        assert weights[1] == pytest.approx(0.5 + 0.5 * math.log(2), abs=1e-12)
        assert weights[2] == pytest.approx(1.0 + 0.5 * math.log(4), abs=1e-12)

    def test_singleton_collapses_both_ratios(self):
        weights = instrument_weights([dyn(7, 3.0, 2.5)])
        assert weights[7] == pytest.approx(0.5 + 0.5 * math.log(2), abs=1e-12)

    def test_all_stationary_ranked_by_deformation(self):
        weights = instrument_weights([dyn(1, 1.0, 0.0), dyn(2, 3.0, 0.0)])
        offset = 0.5 * math.log(2)
        assert weights[1] == pytest.approx(0.5 + offset, abs=1e-12)
        assert weights[2] == pytest.approx(1.5 + offset, abs=1e-12)
        assert weights[2] > weights[1]

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError, match="no trackable"):
            instrument_weights([])

    def test_scale_covariant_in_area(self):
        base = [dyn(1, 1.2, 3.0), dyn(2, 2.5, 8.0)]
        scaled = [
            PartDynamics(d.instrument_id, d.area_t * 9, d.area_prev * 9, d.deformation,
                         d.displacement, d.centroid_t, d.centroid_prev)
            for d in base
        ]
        assert instrument_weights(base) == instrument_weights(scaled)

    def test_argmax_invariant_under_relabeling(self):
        a = instrument_weights([dyn(1, 1.0, 2.0), dyn(2, 4.0, 9.0)])
        b = instrument_weights([dyn(5, 1.0, 2.0), dyn(3, 4.0, 9.0)])
        assert max(a, key=a.get) == 2
        assert max(b, key=b.get) == 3
        assert sorted(a.values()) == pytest.approx(sorted(b.values()))


class TestPlaceFixations:
    def test_one_point_per_part(self):
        mask = np.zeros((20, 20), dtype=int)
        mask[2:5, 2:5] = part_label(1, WRIST)
        mask[10:12, 10:12] = part_label(1, CLASPER)
        fixations = place_fixations(mask, {1: 1.25})
        assert len(fixations) == 2
        assert all(f.weight == 1.25 for f in fixations)
        assert {f.part for f in fixations} == {WRIST, CLASPER}

    def test_ring_wrist_snaps_into_mask(self):
        mask = np.zeros((15, 15), dtype=int)
        mask[3:10, 3:10] = part_label(1, WRIST)
        mask[5:8, 5:8] = 0  # hole at the centroid
        fixations = place_fixations(mask, {1: 1.0})
        wrist_points = [f.point for f in fixations if f.part == WRIST]
        assert len(wrist_points) == 1
        r, c = wrist_points[0]
        assert mask[r, c] == part_label(1, WRIST)

    def test_weight_attribution(self):
        mask = np.zeros((20, 20), dtype=int)
        mask[1:4, 1:4] = part_label(1, WRIST)
        mask[10:13, 10:13] = part_label(2, WRIST)
        fixations = place_fixations(mask, {1: 1.7, 2: 0.85})
        by_id = {f.instrument_id: f.weight for f in fixations}
        assert by_id == {1: 1.7, 2: 0.85}

    def test_two_clasper_jaws_give_two_fixations(self):
        mask = np.zeros((10, 12), dtype=int)
        mask[2:4, 1:3] = part_label(1, CLASPER)
        mask[2:4, 8:10] = part_label(1, CLASPER)
        mask[6:8, 4:8] = part_label(1, WRIST)
        fixations = place_fixations(mask, {1: 1.0})
        assert sum(f.part == CLASPER for f in fixations) == 2

    def test_missing_parts_error_lists_instrument(self):
        mask = np.zeros((8, 8), dtype=int)
        mask[0:2, 0:2] = part_label(1, WRIST)
        with pytest.raises(ValueError, match="2"):
            place_fixations(mask, {1: 1.0, 2: 1.0})

    def test_extra_grid_points_stay_in_mask_and_are_deterministic(self):
        mask = np.zeros((30, 30), dtype=int)
        mask[5:20, 5:25] = part_label(1, WRIST)
        first = place_fixations(mask, {1: 1.0}, points_per_part=4)
        second = place_fixations(mask, {1: 1.0}, points_per_part=4)
        assert first == second
        assert len(first) == 4
        assert len({f.point for f in first}) == 4
        for f in first:
            assert mask[f.point] == part_label(1, WRIST)


class TestRenderSaliency:
    def test_empty_fixations(self):
        out = render_saliency([], 16, 12, sigma=2.0)
        assert out.shape == (12, 16)
        assert not out.any()

    def test_single_fixation_peak_and_decay(self):
        out = render_saliency([Fixation(1, (8, 8), 2.0, WRIST)], 17, 17, sigma=2.0)
        assert out[8, 8] == 1.0
        assert out.max() == 1.0
        row = out[8, 8:]
        assert np.all(np.diff(row) < 0)

    def test_two_distant_equal_peaks(self):
        # 6 sigma apart: the foreign Gaussian adds exp(-18) at each peak.
        sigma = 2.0
        out = render_saliency(
            [Fixation(1, (10, 4), 1.5, WRIST), Fixation(2, (10, 16), 1.5, WRIST)],
            21, 21, sigma=sigma,
        )
        assert out[10, 4] == pytest.approx(1.0, abs=1e-6)
        assert out[10, 16] == pytest.approx(1.0, abs=1e-6)

    def test_permutation_invariance_and_range(self):
        rng = np.random.default_rng(2)
        fixations = [
            Fixation(i, (int(rng.integers(0, 20)), int(rng.integers(0, 20))),
                     float(rng.uniform(0.5, 3.0)), WRIST)
            for i in range(6)
        ]
        a = render_saliency(fixations, 20, 20, sigma=1.5)
        b = render_saliency(fixations[::-1], 20, 20, sigma=1.5)
        np.testing.assert_array_equal(a, b)
        assert a.min() >= 0.0 and a.max() == 1.0

    def test_parameter_errors(self):
        with pytest.raises(ValueError, match="sigma"):
            render_saliency([], 8, 8, sigma=0.0)
        with pytest.raises(ValueError, match="outside"):
            render_saliency([Fixation(1, (9, 0), 1.0, WRIST)], 8, 8, sigma=1.0)


class TestGenerateScanpath:
    def test_orders_by_descending_weight(self):
        fixations = [
            Fixation(1, (0, 0), 0.8466, WRIST),
            Fixation(2, (5, 5), 1.6931, WRIST),
            Fixation(2, (6, 6), 1.6931, CLASPER),
        ]
        path = generate_scanpath(fixations)
        assert [f.instrument_id for f in path] == [2, 2, 1]
        assert path[0].part == WRIST  # wrist precedes clasper within an instrument

    def test_tie_breaks_by_instrument_id(self):
        fixations = [Fixation(5, (0, 0), 1.0, WRIST), Fixation(2, (9, 9), 1.0, WRIST)]
        assert [f.instrument_id for f in generate_scanpath(fixations)] == [2, 5]

    def test_empty(self):
        assert generate_scanpath([]) == []

    def test_matches_weight_order_of_instrument_weights(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            dynamics = [
                dyn(i + 1, float(rng.uniform(1, 4)), float(rng.uniform(0, 10)))
                for i in range(4)
            ]
            weights = instrument_weights(dynamics)
            fixations = [Fixation(i, (i, i), w, WRIST) for i, w in weights.items()]
            path = generate_scanpath(fixations)
            expected = [i for i, _ in sorted(weights.items(), key=lambda kv: (-kv[1], kv[0]))]
            assert [f.instrument_id for f in path] == expected
