"""Full/middle cropping: Otsu eye extremes, dynamic margin, containment."""

import numpy as np
import pytest

from chickface.cropping import (
    EyeExtremes,
    FaceCrop,
    crop_full_face,
    crop_middle_face,
    eye_extremes,
    middle_face_box,
    otsu_threshold,
    rasterize_box,
)
from chickface.errors import FlaggedFrameError, PoseError
from chickface.geometry import KEYPOINT_NAMES, BoundingBox, KeypointSet, Point2

rng = np.random.default_rng(5)


def disc_image(w=100, h=60, centers=((20, 30), (80, 30)), radius=5):
    """White canvas with black discs; returns uint8 RGB."""
    img = np.full((h, w, 3), 255, dtype=np.uint8)
    yy, xx = np.mgrid[0:h, 0:w]
    for cx, cy in centers:
        img[(xx - cx) ** 2 + (yy - cy) ** 2 <= radius**2] = 0
    return img


def disc_face_crop(w=100, h=60, eye_y=30.0, radius=5, eyes_x=(20.0, 80.0)):
    """A FaceCrop whose eyes are black discs on white, keypoints at centers."""
    img = disc_image(w, h, centers=((eyes_x[0], eye_y), (eyes_x[1], eye_y)), radius=radius)
    pts = {
        "upper_nose": Point2((eyes_x[0] + eyes_x[1]) / 2, eye_y - 12.0),
        "middle_nose": Point2((eyes_x[0] + eyes_x[1]) / 2, eye_y + 5.0),
        "right_eye": Point2(eyes_x[0], eye_y),
        "right_beak": Point2((eyes_x[0] + eyes_x[1]) / 2 - 8, eye_y + 18.0),
        "middle_beak": Point2((eyes_x[0] + eyes_x[1]) / 2, eye_y + 22.0),
        "left_beak": Point2((eyes_x[0] + eyes_x[1]) / 2 + 8, eye_y + 18.0),
        "left_eye": Point2(eyes_x[1], eye_y),
    }
    kps = KeypointSet(points=pts)
    return FaceCrop(image=img, kind="full", source_box=BoundingBox(0, 0, w, h), keypoints=kps)


class TestCropFullFace:
    def test_whole_image_box(self):
        img = rng.integers(0, 256, size=(80, 100, 3), dtype=np.uint8)
        kps = disc_face_crop().keypoints
        crop = crop_full_face(img, BoundingBox(0, 0, 100, 80), kps)
        np.testing.assert_array_equal(crop.image, img)
        assert crop.image.shape[:2] == (80, 100)

    def test_keypoint_at_corner_goes_to_origin(self):
        img = rng.integers(0, 256, size=(80, 100, 3), dtype=np.uint8)
        base = disc_face_crop().keypoints
        base.points["upper_nose"] = Point2(10.0, 15.0)
        crop = crop_full_face(img, BoundingBox(10, 15, 75, 45), base)
        p = crop.keypoints["upper_nose"]
        assert (p.x, p.y) == (0.0, 0.0)

    def test_box_outside_image_flagged(self):
        img = np.zeros((50, 50, 3), dtype=np.uint8)
        kps = KeypointSet(points={n: Point2(60.0, 60.0) for n in KEYPOINT_NAMES})
        with pytest.raises(FlaggedFrameError):
            crop_full_face(img, BoundingBox(40, 40, 30, 30), kps)

    def test_keypoints_translated(self):
        img = rng.integers(0, 256, size=(80, 100, 3), dtype=np.uint8)
        base = disc_face_crop()
        crop = crop_full_face(img, BoundingBox(10, 5, 80, 55), base.keypoints)
        for name in KEYPOINT_NAMES:
            assert crop.keypoints[name].x == base.keypoints[name].x - 10
            assert crop.keypoints[name].y == base.keypoints[name].y - 5


class TestOtsu:
    def test_bimodal_separates(self):
        values = np.array([0] * 50 + [255] * 50, dtype=np.uint8)
        t = otsu_threshold(values)
        assert 0 < t <= 255
        assert np.all(values[values < t] == 0)

    def test_constant_gives_empty_foreground(self):
        values = np.full(100, 77, dtype=np.uint8)
        t = otsu_threshold(values)
        assert not np.any(values < t)


class TestEyeExtremes:
    def test_synthetic_discs_exhaustive_oracle(self):
        crop = disc_face_crop()
        ext = eye_extremes(crop, mask_radius_factor=0.25)
        # oracle: exhaustive scan of dark pixels inside each disc mask
        gray = crop.image[:, :, 0].astype(float)
        yy, xx = np.mgrid[0 : crop.height, 0 : crop.width]
        radius = 0.25 * 60.0
        left_mask = ((xx - 20) ** 2 + (yy - 30) ** 2 <= radius**2) & (gray < 128)
        right_mask = ((xx - 80) ** 2 + (yy - 30) ** 2 <= radius**2) & (gray < 128)
        assert ext.left_x == int(xx[left_mask].min()) == 15
        assert ext.right_x == int(xx[right_mask].max()) == 85
        assert not ext.left_fallback and not ext.right_fallback

    def test_all_white_falls_back_to_keypoints(self):
        crop = disc_face_crop(radius=0)  # nothing drawn
        crop.image[:] = 255
        ext = eye_extremes(crop)
        assert ext.left_x == 20 and ext.right_x == 80
        assert ext.left_fallback and ext.right_fallback

    def test_deterministic(self):
        crop = disc_face_crop()
        a = eye_extremes(crop)
        b = eye_extremes(crop)
        assert (a.left_x, a.right_x) == (b.left_x, b.right_x)

    def test_invisible_eye_rejected(self):
        crop = disc_face_crop()
        crop.keypoints.visible["left_eye"] = False
        with pytest.raises(PoseError):
            eye_extremes(crop)


class TestMiddleFaceBox:
    def test_margin_formula_hand_arithmetic(self):
        # width 100, extremes (15, 85), d_eye 70 -> m = 70 / (0.5*(15+15)) = 4.666..
        crop = disc_face_crop(eyes_x=(15.0, 85.0))  # d_eye = 70
        ext = EyeExtremes(left_x=15, right_x=85)
        box = middle_face_box(crop, ext, margin_scale=1.0)
        m = 70.0 / (0.5 * (15 + 15))
        assert m == pytest.approx(14.0 / 3.0)
        assert box.x == pytest.approx(15 - m)      # 10.333..
        assert box.x2 == pytest.approx(85 + m)     # 89.666..

    def test_zero_margin_spans_extremes(self):
        crop = disc_face_crop()
        ext = eye_extremes(crop)
        box = middle_face_box(crop, ext, margin_scale=0.0)
        assert box.x == ext.left_x
        assert box.x2 == ext.right_x

    def test_vertical_bounds(self):
        crop = disc_face_crop()
        box = middle_face_box(crop, EyeExtremes(15, 85), margin_scale=0.0)
        kps = crop.keypoints
        lowest_beak = max(kps[n].y for n in ("middle_beak", "left_beak", "right_beak"))
        assert box.y == kps["upper_nose"].y
        assert box.y2 == lowest_beak
        assert box.h == lowest_beak - kps["upper_nose"].y

    def test_degenerate_slack_margin_zero(self):
        crop = disc_face_crop()
        ext = EyeExtremes(left_x=0, right_x=crop.width)  # s_l + s_r == 0
        box = middle_face_box(crop, ext, margin_scale=1.0)
        assert box.x == 0
        assert box.x2 == crop.width


class TestCropMiddleFace:
    def test_idempotent_at_zero_margin(self):
        crop = disc_face_crop()
        mid1 = crop_middle_face(crop, margin_scale=0.0)
        mid2 = crop_middle_face(mid1, margin_scale=0.0)
        assert mid2.image.shape == mid1.image.shape
        np.testing.assert_array_equal(mid2.image, mid1.image)

    def test_keypoints_translate_by_box_origin(self):
        crop = disc_face_crop()
        mid = crop_middle_face(crop, margin_scale=0.5)
        x0, y0, _, _ = rasterize_box(mid.source_box, (crop.height, crop.width))
        for name in KEYPOINT_NAMES:
            assert mid.keypoints[name].x == pytest.approx(crop.keypoints[name].x - x0)
            assert mid.keypoints[name].y == pytest.approx(crop.keypoints[name].y - y0)

    def test_pose_gate_enforced(self):
        crop = disc_face_crop()
        crop.keypoints.visible["right_beak"] = False
        with pytest.raises(PoseError):
            crop_middle_face(crop)

    def test_random_faces_containment_and_area(self):
        count = 0
        for trial in range(500):
            trng = np.random.default_rng(trial)
            w = int(trng.integers(60, 140))
            h = int(trng.integers(50, 100))
            eye_y = float(trng.uniform(h * 0.3, h * 0.55))
            x_left = float(trng.uniform(8, w * 0.35))
            x_right = float(trng.uniform(w * 0.6, w - 8))
            radius = int(trng.integers(3, 7))
            crop = disc_face_crop(w=w, h=h, eye_y=eye_y, radius=radius, eyes_x=(x_left, x_right))
            if crop.keypoints["middle_beak"].y >= h:  # beak below canvas; skip config
                continue
            try:
                mid = crop_middle_face(crop, margin_scale=float(trng.uniform(0, 2)))
            except FlaggedFrameError:
                continue
            count += 1
            # containment chain: middle box inside full crop bounds
            assert mid.source_box.x >= 0 and mid.source_box.y >= 0
            assert mid.source_box.x2 <= w and mid.source_box.y2 <= h
            assert mid.image.shape[0] * mid.image.shape[1] <= crop.image.shape[0] * crop.image.shape[1]
        assert count > 400

    def test_margin_monotonicity(self):
        crop = disc_face_crop()
        widths = []
        for scale in (0.0, 0.5, 1.0, 2.0):
            box = middle_face_box(crop, eye_extremes(crop), margin_scale=scale)
            widths.append(box.w)
        assert all(a <= b for a, b in zip(widths, widths[1:]))

    def test_margin_symmetric(self):
        crop = disc_face_crop()
        ext = eye_extremes(crop)
        box = middle_face_box(crop, ext, margin_scale=1.0)
        left_margin = ext.left_x - box.x
        right_margin = box.x2 - ext.right_x
        assert left_margin == pytest.approx(right_margin)


class TestRasterize:
    def test_integral_box_keeps_max_edge_pixel(self):
        x0, y0, x1, y1 = rasterize_box(BoundingBox(15, 10, 70, 20), (60, 100))
        assert (x0, y0, x1, y1) == (15, 10, 86, 31)

    def test_fractional_box_ceils(self):
        x0, y0, x1, y1 = rasterize_box(BoundingBox(15.2, 10.7, 69.9, 20.1), (60, 100))
        assert (x0, y0) == (15, 10)
        assert (x1, y1) == (86, 31)

    def test_clip_to_canvas(self):
        x0, y0, x1, y1 = rasterize_box(BoundingBox(0, 0, 100, 80), (80, 100))
        assert (x0, y0, x1, y1) == (0, 0, 100, 80)
