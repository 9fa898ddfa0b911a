"""IoU, NMS (vs brute-force oracle), letterboxing, detect_face contract."""

import numpy as np
import pytest

from chickface.detection import (
    Detection,
    DetectorConfig,
    StubDetector,
    detect_face,
    export_training_boxes,
    iou,
    letterbox,
    load_detections,
    nms,
    save_detections,
)
from chickface.errors import DetectorError, RejectedInputError
from chickface.geometry import BoundingBox

rng = np.random.default_rng(9)


def brute_force_nms(dets, thr):
    """Independent greedy oracle: sort by confidence (stable), keep-if-clear."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    kept = []
    for i in order:
        if all(iou(dets[i].box, dets[j].box) <= thr for j in kept):
            kept.append(i)
    return [dets[i] for i in kept]


def random_detections(n, extent=50.0):
    out = []
    for _ in range(n):
        out.append(
            Detection(
                box=BoundingBox(
                    float(rng.uniform(0, extent)),
                    float(rng.uniform(0, extent)),
                    float(rng.uniform(1, extent / 2)),
                    float(rng.uniform(1, extent / 2)),
                ),
                confidence=float(rng.uniform(0, 1)),
            )
        )
    return out


class TestIoU:
    def test_identical_boxes(self):
        b = BoundingBox(3, 4, 10, 12)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(BoundingBox(0, 0, 1, 1), BoundingBox(5, 5, 1, 1)) == 0.0

    def test_half_overlap_hand_arithmetic(self):
        # unit squares at (0,0) and (0.5,0): inter 0.5, union 1.5 -> 1/3
        a = BoundingBox(0, 0, 1, 1)
        b = BoundingBox(0.5, 0, 1, 1)
        assert iou(a, b) == pytest.approx(1.0 / 3.0)

    def test_symmetric_and_bounded(self):
        for _ in range(100):
            a, b = (d.box for d in random_detections(2))
            v = iou(a, b)
            assert v == iou(b, a)
            assert 0.0 <= v <= 1.0


class TestNMS:
    def test_empty(self):
        assert nms([], 0.5) == []

    def test_identical_boxes_keep_highest(self):
        b = BoundingBox(0, 0, 10, 10)
        dets = [Detection(box=b, confidence=0.8), Detection(box=b, confidence=0.9)]
        kept = nms(dets, 0.5)
        assert len(kept) == 1
        assert kept[0].confidence == 0.9

    def test_matches_brute_force_oracle(self):
        for trial in range(200):
            dets = random_detections(int(rng.integers(0, 11)))
            thr = float(rng.uniform(0.1, 0.9))
            ours = nms(dets, thr)
            oracle = brute_force_nms(dets, thr)
            assert [(d.box, d.confidence) for d in ours] == [(d.box, d.confidence) for d in oracle]

    def test_subset_and_pairwise_clear(self):
        dets = random_detections(10)
        kept = nms(dets, 0.4)
        ids = {id(d) for d in dets}
        assert all(id(d) in ids for d in kept)
        for i, a in enumerate(kept):
            for b in kept[i + 1 :]:
                assert iou(a.box, b.box) <= 0.4

    def test_idempotent(self):
        dets = random_detections(10)
        once = nms(dets, 0.5)
        assert nms(once, 0.5) == once

    def test_tie_at_threshold_kept(self):
        # IoU exactly 0.5: two 2x1 boxes overlapping in a 1x1 area -> union 2 -> wait, use exact construction
        a = Detection(box=BoundingBox(0, 0, 2, 1), confidence=0.9)
        b = Detection(box=BoundingBox(1, 0, 1, 1), confidence=0.8)  # inter 1, union 2 -> 0.5
        assert iou(a.box, b.box) == 0.5
        assert len(nms([a, b], 0.5)) == 2


class TestLetterbox:
    def test_square_no_pad(self):
        img = rng.integers(0, 256, size=(100, 100, 3), dtype=np.uint8)
        out, scale, (dx, dy) = letterbox(img, 640)
        assert out.shape == (640, 640, 3)
        assert scale == 6.4
        assert (dx, dy) == (0.0, 0.0)

    def test_wide_image_hand_arithmetic(self):
        # 200x100 -> scale 3.2, resized 640x320, pad (0, 160)
        img = rng.integers(0, 256, size=(100, 200, 3), dtype=np.uint8)
        out, scale, (dx, dy) = letterbox(img, 640)
        assert scale == pytest.approx(3.2)
        assert (dx, dy) == (0.0, 160.0)
        assert out.shape == (640, 640, 3)
        # padding is the fill color
        assert np.all(out[:160] == 114)
        assert np.all(out[480:] == 114)

    def test_round_trip_corner(self):
        img = rng.integers(0, 256, size=(70, 130, 3), dtype=np.uint8)
        _, scale, (dx, dy) = letterbox(img, 640)
        for x, y in [(0.0, 0.0), (130.0, 70.0), (17.0, 42.0)]:
            rx, ry = x * scale + dx, y * scale + dy
            assert (rx - dx) / scale == pytest.approx(x, abs=1e-6)
            assert (ry - dy) / scale == pytest.approx(y, abs=1e-6)


class TestDetectFace:
    def test_no_boxes_gives_none(self):
        img = rng.integers(0, 256, size=(100, 200, 3), dtype=np.uint8)
        cfg = DetectorConfig(model_ref=StubDetector([]))
        assert detect_face(img, cfg) is None

    def test_single_box_inverse_letterboxed_exactly(self):
        # hand inverse: scale 3.2, pad (0,160); x=(100-0)/3.2, y=(200-160)/3.2
        img = rng.integers(0, 256, size=(100, 200, 3), dtype=np.uint8)
        stub = StubDetector([Detection(box=BoundingBox(100, 200, 50, 60), confidence=0.85)])
        det = detect_face(img, DetectorConfig(model_ref=stub))
        assert det.confidence == 0.85
        assert det.box.x == pytest.approx(31.25)
        assert det.box.y == pytest.approx(12.5)
        assert det.box.w == pytest.approx(15.625)
        assert det.box.h == pytest.approx(18.75)

    def test_overlapping_boxes_nms(self):
        img = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
        b1 = BoundingBox(10, 10, 40, 40)
        b2 = BoundingBox(12, 12, 40, 40)
        assert iou(b1, b2) > 0.7
        stub = StubDetector(
            [Detection(box=b1, confidence=0.9), Detection(box=b2, confidence=0.85)]
        )
        det = detect_face(img, DetectorConfig(model_ref=stub, iou_threshold=0.7))
        assert det.confidence == 0.9

    def test_below_threshold_dropped(self):
        img = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
        stub = StubDetector([Detection(box=BoundingBox(1, 1, 5, 5), confidence=0.5)])
        assert detect_face(img, DetectorConfig(model_ref=stub, conf_threshold=0.8)) is None

    def test_failing_model_wrapped(self):
        class Exploding:
            name = "boom"

            def predict(self, image):
                raise RuntimeError("cuda on fire")

        img = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
        with pytest.raises(DetectorError, match="boom"):
            detect_face(img, DetectorConfig(model_ref=Exploding()))

    def test_missing_model_rejected(self):
        img = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
        with pytest.raises(DetectorError):
            detect_face(img, DetectorConfig(model_ref=None))


class TestConfigValidation:
    def test_bad_thresholds(self):
        with pytest.raises(RejectedInputError):
            DetectorConfig(conf_threshold=0.0)
        with pytest.raises(RejectedInputError):
            DetectorConfig(iou_threshold=1.5)
        with pytest.raises(RejectedInputError):
            DetectorConfig(input_size=0)


class TestExportAndPersistence:
    def test_yolo_line_format(self, tmp_path):
        paths = export_training_boxes(
            [("frame1", BoundingBox(10, 20, 40, 30), (100, 200))], tmp_path
        )
        line = paths[0].read_text().strip()
        cls, cx, cy, w, h = line.split()
        assert cls == "0"
        assert float(cx) == pytest.approx((10 + 20) / 200)
        assert float(cy) == pytest.approx((20 + 15) / 100)
        assert float(w) == pytest.approx(0.2)
        assert float(h) == pytest.approx(0.3)

    def test_detections_round_trip(self, tmp_path):
        dets = {
            "f1": Detection(box=BoundingBox(1, 2, 3, 4), confidence=0.9),
            "f2": None,
        }
        save_detections(dets, tmp_path / "d.json")
        loaded = load_detections(tmp_path / "d.json")
        assert loaded["f2"] is None
        assert loaded["f1"].box == dets["f1"].box
        assert loaded["f1"].confidence == 0.9
