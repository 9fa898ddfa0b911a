"""Heatmap rendering, decoding, round trips, and tiny-model training."""

import numpy as np
import pytest

from chickface.errors import RejectedInputError
from chickface.geometry import KEYPOINT_NAMES, KeypointSet
from chickface.keypoints import (
    Heatmaps,
    KeypointModelConfig,
    StubKeypointModel,
    decode,
    predict_keypoints,
    render_targets,
    train_on_samples,
)

rng = np.random.default_rng(13)
CFG = KeypointModelConfig(input_size=(64, 64), stride=4, sigma=2.0)


def random_kps(lo=4.0, hi=60.0, visible=None, seed_rng=None):
    r = seed_rng or rng
    xy = r.uniform(lo, hi, size=(7, 2))
    return KeypointSet.from_arrays(xy, visible)


class TestRenderTargets:
    def test_peak_at_exact_cell_center(self):
        # cell (i, j) center in input px is ((j+0.5)*stride, (i+0.5)*stride)
        xy = np.tile([(5 + 0.5) * 4, (3 + 0.5) * 4], (7, 1))
        hm = render_targets(KeypointSet.from_arrays(xy), CFG)
        assert hm.data[0, 3, 5] == 1.0
        assert hm.data[0].max() == 1.0

    def test_invisible_keypoint_zero_channel(self):
        vis = [True] * 7
        vis[2] = False
        hm = render_targets(random_kps(visible=vis), CFG)
        assert np.all(hm.data[2] == 0)
        assert hm.data[0].max() > 0

    def test_bit_identical_renders(self):
        kps = random_kps()
        a = render_targets(kps, CFG)
        b = render_targets(kps, CFG)
        np.testing.assert_array_equal(a.data, b.data)

    def test_out_of_bounds_visible_rejected(self):
        xy = np.tile([100.0, 10.0], (7, 1))
        with pytest.raises(RejectedInputError):
            render_targets(KeypointSet.from_arrays(xy), CFG)

    def test_non_negative(self):
        hm = render_targets(random_kps(), CFG)
        assert hm.data.min() >= 0


class TestDecode:
    def test_single_cell_no_offset(self):
        maps = np.zeros((7, 16, 16), dtype=np.float32)
        for ch in range(7):
            maps[ch, 3, 5] = 1.0
        kps = decode(Heatmaps(data=maps, stride=4), (64, 64))
        for name in KEYPOINT_NAMES:
            assert kps[name].x == (5 + 0.5) * 4
            assert kps[name].y == (3 + 0.5) * 4

    def test_all_zero_channel_invisible(self):
        maps = np.zeros((7, 16, 16), dtype=np.float32)
        maps[0, 2, 2] = 1.0
        kps = decode(Heatmaps(data=maps, stride=4), (64, 64))
        assert kps.is_visible("upper_nose")
        assert not kps.is_visible("middle_nose")

    def test_below_floor_invisible(self):
        maps = np.full((7, 16, 16), 0.05, dtype=np.float32)
        kps = decode(Heatmaps(data=maps, stride=4), (64, 64))
        assert not any(kps.visible.values())

    def test_round_trip_error_bound(self):
        max_err = 0.0
        for trial in range(200):
            trng = np.random.default_rng(trial)
            kps = random_kps(seed_rng=trng)
            hm = render_targets(kps, CFG)
            back = decode(hm, (64, 64))
            err = np.abs(back.as_array() - kps.as_array()).max()
            max_err = max(max_err, err)
        assert max_err <= CFG.stride / 2

    def test_orig_size_scaling(self):
        kps = random_kps()
        hm = render_targets(kps, CFG)
        back = decode(hm, (128, 128))  # orig twice the model input
        np.testing.assert_allclose(back.as_array() / 2.0, decode(hm, (64, 64)).as_array(), atol=1e-9)

    def test_permutation_equivariance(self):
        kps = random_kps()
        hm = render_targets(kps, CFG)
        perm = list(rng.permutation(7))
        permuted = Heatmaps(data=hm.data[perm], stride=CFG.stride)
        base = decode(hm, (64, 64))
        out = decode(permuted, (64, 64))
        names = list(KEYPOINT_NAMES)
        for dst_idx, src_idx in enumerate(perm):
            assert out[names[dst_idx]] == base[names[src_idx]]


class TestTraining:
    def test_one_sample_overfit(self):
        trng = np.random.default_rng(0)
        img = trng.integers(0, 256, size=(80, 90, 3), dtype=np.uint8)
        kps = KeypointSet.from_arrays(trng.uniform(8, 70, size=(7, 2)))
        model, history = train_on_samples([(img, kps)], CFG, epochs=200, seed=0, lr=3e-3)
        assert history[-1] < 1e-3

    def test_zero_epochs(self):
        trng = np.random.default_rng(0)
        img = trng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
        model, history = train_on_samples([(img, random_kps())], CFG, epochs=0, seed=0)
        assert history == []
        assert model is not None

    def test_seeded_determinism(self):
        trng = np.random.default_rng(1)
        samples = [
            (trng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8), random_kps(seed_rng=trng))
            for _ in range(3)
        ]
        _, h1 = train_on_samples(samples, CFG, epochs=5, seed=7)
        _, h2 = train_on_samples(samples, CFG, epochs=5, seed=7)
        assert h1 == h2

    def test_empty_training_set(self):
        with pytest.raises(RejectedInputError):
            train_on_samples([], CFG, epochs=1)

    def test_loss_nonincreasing_with_jitter(self):
        trng = np.random.default_rng(2)
        img = trng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
        _, history = train_on_samples([(img, random_kps(seed_rng=trng))], CFG, epochs=60, seed=0, lr=1e-3)
        for prev, cur in zip(history, history[1:]):
            assert cur <= prev * 1.05  # 5% upticks tolerated


class TestPredict:
    def test_stub_round_trip(self):
        trng = np.random.default_rng(4)
        kps = random_kps(seed_rng=trng)
        maps = render_targets(kps, CFG).data
        stub = StubKeypointModel(maps)
        img = trng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
        out = predict_keypoints(img, stub, CFG)
        assert np.abs(out.as_array() - kps.as_array()).max() <= CFG.stride / 2

    def test_zero_stub_all_invisible(self):
        stub = StubKeypointModel(np.zeros((7, 16, 16), dtype=np.float32))
        img = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
        out = predict_keypoints(img, stub, CFG)
        assert not any(out.visible.values())

    def test_deterministic(self):
        kps = random_kps()
        stub = StubKeypointModel(render_targets(kps, CFG).data)
        img = rng.integers(0, 256, size=(96, 80, 3), dtype=np.uint8)
        a = predict_keypoints(img, stub, CFG)
        b = predict_keypoints(img, stub, CFG)
        np.testing.assert_array_equal(a.as_array(), b.as_array())

    def test_maps_back_to_face_coordinates(self):
        kps = random_kps()
        stub = StubKeypointModel(render_targets(kps, CFG).data)
        img = rng.integers(0, 256, size=(128, 128, 3), dtype=np.uint8)
        out = predict_keypoints(img, stub, CFG)  # face twice the model input
        assert np.abs(out.as_array() / 2 - kps.as_array()).max() <= CFG.stride / 2 + 1e-9


class TestConfigValidation:
    def test_stride_must_divide(self):
        with pytest.raises(RejectedInputError):
            KeypointModelConfig(input_size=(66, 64), stride=4)

    def test_sigma_positive(self):
        with pytest.raises(RejectedInputError):
            KeypointModelConfig(sigma=0.0)

    def test_heatmaps_must_be_non_negative(self):
        with pytest.raises(RejectedInputError):
            Heatmaps(data=np.full((7, 4, 4), -1.0, dtype=np.float32), stride=4)
