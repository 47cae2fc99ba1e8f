import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aogparts import (
    PartAnnotation,
    Region,
    center_prediction,
    evaluate,
    heatmap_export,
    iou,
    normalized_distance,
    parse_semantic,
)
from aogparts.evaluation import evaluate_parse, heatmap

from conftest import single_pattern_aog
from test_parsing import crafted_volume_with_peaks


def region(x1, y1, x2, y2):
    return Region(center=((x1 + x2) / 2, (y1 + y2) / 2), scale=(x2 - x1, y2 - y1))


class TestIou:
    def test_identical(self):
        a = region(0, 0, 10, 10)
        assert iou(a, a) == 1.0

    def test_disjoint(self):
        assert iou(region(0, 0, 10, 10), region(20, 20, 30, 30)) == 0.0

    def test_half_overlap(self):
        assert iou(region(0, 0, 10, 10), region(5, 0, 15, 10)) == pytest.approx(1 / 3)

    @given(
        ax=st.floats(0, 50), ay=st.floats(0, 50), aw=st.floats(1, 40), ah=st.floats(1, 40),
        bx=st.floats(0, 50), by=st.floats(0, 50), bw=st.floats(1, 40), bh=st.floats(1, 40),
    )
    def test_symmetric_and_bounded(self, ax, ay, aw, ah, bx, by, bw, bh):
        a = Region((ax, ay), (aw, ah))
        b = Region((bx, by), (bw, bh))
        assert iou(a, b) == iou(b, a)
        assert 0.0 <= iou(a, b) <= 1.0


class TestCenterPrediction:
    def test_inside(self):
        assert center_prediction((5.0, 5.0), (0.0, 0.0, 10.0, 10.0))

    def test_outside(self):
        assert not center_prediction((15.0, 5.0), (0.0, 0.0, 10.0, 10.0))

    def test_boundary_counts(self):
        assert center_prediction((10.0, 5.0), (0.0, 0.0, 10.0, 10.0))
        assert center_prediction((0.0, 0.0), (0.0, 0.0, 10.0, 10.0))


class TestNormalizedDistance:
    def test_zero(self):
        assert normalized_distance((3.0, 4.0), (3.0, 4.0), (80, 80)) == 0.0

    def test_opposite_corners(self):
        assert normalized_distance((0.0, 0.0), (80.0, 60.0), (80, 60)) == pytest.approx(1.0)

    def test_scales_with_diagonal(self):
        d = normalized_distance((0.0, 0.0), (30.0, 40.0), (100, 100))
        assert d == pytest.approx(50.0 / math.hypot(100, 100))


class TestEvaluate:
    def test_perfect_predictions(self):
        vol = crafted_volume_with_peaks([(0, 2, 2, 50.0)])
        aog = single_pattern_aog(center=(40.0, 40.0), scale=(40.0, 40.0))
        parse = parse_semantic(aog, vol)
        ann = PartAnnotation("crafted", "part", 0, (20.0, 20.0, 60.0, 60.0))
        report = evaluate([parse], [ann], (160, 160))
        assert report.detection_rate == 1.0
        assert report.center_prediction_rate == 1.0
        assert report.mean_normalized_distance == 0.0

    def test_aggregates_are_means(self):
        vol = crafted_volume_with_peaks([(0, 2, 2, 50.0)])
        aog = single_pattern_aog(center=(40.0, 40.0), scale=(40.0, 40.0))
        parse = parse_semantic(aog, vol)
        good = PartAnnotation("crafted", "part", 0, (20.0, 20.0, 60.0, 60.0))
        r1 = evaluate_parse(parse, good, (160, 160))
        bad = PartAnnotation("crafted", "part", 0, (100.0, 100.0, 150.0, 150.0))
        r2 = evaluate_parse(parse, bad, (160, 160))
        from aogparts.evaluation import EvalReport

        rep = EvalReport([r1, r2])
        assert rep.detection_rate == 0.5
        assert rep.center_prediction_rate == 0.5
        assert rep.mean_normalized_distance == pytest.approx((r1.distance + r2.distance) / 2)

    def test_detection_uses_template_scale_box(self):
        vol = crafted_volume_with_peaks([(0, 2, 2, 50.0)])
        aog = single_pattern_aog(center=(40.0, 40.0), scale=(10.0, 10.0))
        parse = parse_semantic(aog, vol)
        ann = PartAnnotation("crafted", "part", 0, (20.0, 20.0, 60.0, 60.0))
        rec = evaluate_parse(parse, ann, (160, 160))
        assert rec.center_correct
        assert not rec.detected  # 10x10 box against 40x40 truth: IoU 1/16
        assert rec.iou == pytest.approx(100.0 / 1600.0)

    def test_missing_annotation_raises(self):
        vol = crafted_volume_with_peaks([(0, 2, 2, 50.0)])
        aog = single_pattern_aog()
        parse = parse_semantic(aog, vol)
        with pytest.raises(KeyError):
            evaluate([parse], [], (160, 160))


class TestHeatmap:
    def test_single_unit_bright(self, tmp_path):
        vol = crafted_volume_with_peaks([(0, 2, 2, 50.0)])
        aog = single_pattern_aog(center=(40.0, 40.0))
        parse = parse_semantic(aog, vol)
        grid = heatmap(parse, vol, 2)
        assert grid[2, 2] == pytest.approx(50.0)
        assert np.count_nonzero(grid) == 1
        path = tmp_path / "map.pgm"
        heatmap_export(parse, vol, 2, path)
        data = path.read_bytes()
        assert data.startswith(b"P5\n10 10\n255\n")
        pixels = np.frombuffer(data.split(b"255\n", 1)[1], dtype=np.uint8)
        assert pixels.reshape(10, 10)[2, 2] == 255
        assert pixels.sum() == 255

    def test_layer_without_patterns_is_zero(self, tmp_path):
        from aogparts import FeatureVolume, LayerGeometry

        vol = crafted_volume_with_peaks([(0, 2, 2, 50.0)])
        g2 = LayerGeometry(3, 1, 4, 4, 32.0, 150.0, 16.0)
        vol = FeatureVolume(
            vol.image_id, 160, 160,
            vol.layers + [(g2, np.ones((1, 4, 4), np.float32))],
        )
        aog = single_pattern_aog(center=(40.0, 40.0))
        parse = parse_semantic(aog, vol)
        assert np.all(heatmap(parse, vol, 3) == 0.0)
        path = tmp_path / "zero.pgm"
        heatmap_export(parse, vol, 3, path)
        pixels = np.frombuffer(path.read_bytes().split(b"255\n", 1)[1], dtype=np.uint8)
        assert pixels.sum() == 0

    def test_same_cell_sums_across_slices(self):
        from aogparts import Aog, LatentPattern, PartTemplate, ScoreWeights

        vol = crafted_volume_with_peaks([(0, 2, 2, 50.0), (1, 2, 2, 30.0)])
        t = PartTemplate(
            0,
            (40.0, 40.0),
            [
                LatentPattern(2, 0, (40.0, 40.0), (0.0, 0.0)),
                LatentPattern(2, 1, (40.0, 40.0), (0.0, 0.0)),
            ],
        )
        aog = Aog("part", ScoreWeights(lambda_pair=0.0), [t])
        parse = parse_semantic(aog, vol)
        grid = heatmap(parse, vol, 2)
        assert grid[2, 2] == pytest.approx(80.0)
