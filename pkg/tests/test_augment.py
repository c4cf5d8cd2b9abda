"""Channel-train construction, luminance arithmetic, and the feedback loop."""

import numpy as np
import pytest

from sparse4d.augment import (
    BASE_TAGS,
    STANDARD_WEIGHTS,
    AugmentConfig,
    ChannelTrain,
    augment_stream,
    build_channel_train,
    derived_rng,
    generate_augmented,
    luminance,
)
from sparse4d.errors import (
    DimensionMismatchError,
    NegativeWeightError,
    TrainTooSmallError,
)
from sparse4d.render import RasterImage


def _rasters(K=8, seed=0):
    rng = np.random.default_rng(seed)
    texture = RasterImage(rng.uniform(size=(K, K, 3)))
    depth = RasterImage(rng.uniform(size=(K, K)))
    depth_sharp = RasterImage(rng.uniform(size=(K, K)))
    return texture, depth, depth_sharp


class TestConfig:
    def test_rejects_bad_mode(self):
        with pytest.raises(ValueError):
            AugmentConfig(weight_mode="fancy")

    def test_rejects_small_capacity(self):
        with pytest.raises(ValueError):
            AugmentConfig(capacity=5)

    def test_rejects_negative_count(self):
        with pytest.raises(ValueError):
            AugmentConfig(count=-1)


class TestBuildChannelTrain:
    def test_order_and_length(self):
        train = build_channel_train(*_rasters())
        assert len(train) == 6
        assert tuple(train.tags) == BASE_TAGS

    def test_channels_match_texture_planes(self):
        texture, depth, depth_sharp = _rasters()
        train = build_channel_train(texture, depth, depth_sharp)
        for k in range(3):
            np.testing.assert_array_equal(train.channels[k].data, texture.data[..., k])
        np.testing.assert_array_equal(train.channels[4].data, depth.data)
        np.testing.assert_array_equal(train.channels[5].data, depth_sharp.data)

    def test_gray_equals_common_channel_exactly(self):
        rng = np.random.default_rng(1)
        plane = rng.uniform(size=(8, 8))
        texture = RasterImage(np.stack([plane] * 3, axis=-1))
        _, depth, depth_sharp = _rasters()
        train = build_channel_train(texture, depth, depth_sharp)
        np.testing.assert_array_equal(train.channels[3].data, plane)

    def test_pure_red_gray_is_standard_weight(self):
        texture = RasterImage(
            np.stack([np.ones((8, 8)), np.zeros((8, 8)), np.zeros((8, 8))], axis=-1)
        )
        _, depth, depth_sharp = _rasters()
        train = build_channel_train(texture, depth, depth_sharp)
        np.testing.assert_array_equal(train.channels[3].data, np.full((8, 8), 0.3))

    def test_dimension_mismatch(self):
        texture, depth, _ = _rasters(K=8)
        _, _, wrong = _rasters(K=16)
        with pytest.raises(DimensionMismatchError):
            build_channel_train(texture, depth, wrong)

    def test_rejects_single_channel_texture(self):
        _, depth, depth_sharp = _rasters()
        with pytest.raises(DimensionMismatchError):
            build_channel_train(depth, depth, depth_sharp)


class TestLuminance:
    def test_basis_weights_select_channel(self):
        texture, _, _ = _rasters(seed=2)
        out = luminance(texture, (1.0, 0.0, 0.0))
        np.testing.assert_array_equal(out.data, texture.data[..., 0])

    def test_equal_channels_pass_through(self):
        rng = np.random.default_rng(3)
        plane = rng.uniform(size=(8, 8))
        img = RasterImage(np.stack([plane] * 3, axis=-1))
        out = luminance(img, STANDARD_WEIGHTS)
        np.testing.assert_array_equal(out.data, plane)

    def test_constant_image_random_closed_weights(self):
        img = RasterImage(np.full((8, 8, 3), 0.5))
        rng = np.random.default_rng(4)
        for _ in range(20):
            u = rng.uniform(size=3)
            w1, w2 = u[0] / u.sum(), u[1] / u.sum()
            w3 = max(0.0, 1.0 - (w1 + w2))
            out = luminance(img, (w1, w2, w3))
            np.testing.assert_array_equal(out.data, np.full((8, 8), 0.5))

    def test_negative_weight_rejected(self):
        texture, _, _ = _rasters()
        with pytest.raises(NegativeWeightError):
            luminance(texture, (0.5, -0.1, 0.6))

    def test_all_zero_weights_rejected(self):
        texture, _, _ = _rasters()
        with pytest.raises(ValueError):
            luminance(texture, (0.0, 0.0, 0.0))

    def test_oversized_weights_clamped(self):
        img = RasterImage(np.full((8, 8, 3), 0.9))
        out = luminance(img, (1.0, 1.0, 1.0))
        assert np.all(out.data == 1.0)


class TestGenerateAugmented:
    def test_three_channel_train_is_permutation(self):
        texture, depth, depth_sharp = _rasters()
        planes = [depth.data, depth_sharp.data, texture.data[..., 0]]
        train = ChannelTrain(
            channels=[RasterImage(p) for p in planes],
            tags=["depth", "depth-sharp", "texture-R"],
            capacity=6,
        )
        img, chosen = generate_augmented(train, np.random.default_rng(0))
        assert sorted(chosen) == [0, 1, 2]
        for slot, idx in enumerate(chosen):
            np.testing.assert_array_equal(img.data[..., slot], planes[idx])

    def test_deterministic_under_seed(self):
        train = build_channel_train(*_rasters())
        a, ia = generate_augmented(train, np.random.default_rng(42))
        b, ib = generate_augmented(train, np.random.default_rng(42))
        assert ia == ib
        np.testing.assert_array_equal(a.data, b.data)

    def test_too_small_train(self):
        train = ChannelTrain(
            channels=[RasterImage(np.zeros((8, 8)))], tags=["depth"], capacity=6
        )
        with pytest.raises(TrainTooSmallError):
            generate_augmented(train, np.random.default_rng(0))

    def test_ordered_triples_uniform(self):
        # 10^4 draws over the 120 ordered triples of a 6-channel train;
        # every count must sit within 5 sigma of the binomial mean
        train = build_channel_train(*_rasters())
        rng = np.random.default_rng(2024)
        n = 10_000
        counts = {}
        for _ in range(n):
            _, chosen = generate_augmented(train, rng)
            counts[chosen] = counts.get(chosen, 0) + 1
        assert len(counts) == 120
        p = 1 / 120
        sigma = (n * p * (1 - p)) ** 0.5
        for c in counts.values():
            assert abs(c - n * p) < 5 * sigma


class TestAugmentStream:
    def test_count_zero_leaves_train_alone(self):
        texture, depth, depth_sharp = _rasters()
        train = build_channel_train(texture, depth, depth_sharp)
        out = augment_stream(
            texture, depth, depth_sharp, AugmentConfig(count=0), train=train
        )
        assert out == []
        assert len(train) == 6

    def test_emits_exact_count_in_range(self):
        texture, depth, depth_sharp = _rasters()
        for count in (1, 5, 12):
            out = augment_stream(
                texture, depth, depth_sharp, AugmentConfig(seed=7, count=count)
            )
            assert len(out) == count
            for img in out:
                assert img.channels == 3
                assert img.data.min() >= 0.0 and img.data.max() <= 1.0

    @pytest.mark.parametrize("mode", ["standard", "random"])
    def test_deterministic_rerun(self, mode):
        texture, depth, depth_sharp = _rasters(seed=5)
        cfg = AugmentConfig(seed=99, weight_mode=mode, count=5)
        a = augment_stream(texture, depth, depth_sharp, cfg)
        b = augment_stream(texture, depth, depth_sharp, cfg)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.data, y.data)

    def test_eviction_keeps_base_channels(self):
        texture, depth, depth_sharp = _rasters()
        train = build_channel_train(texture, depth, depth_sharp, capacity=10)
        augment_stream(
            texture, depth, depth_sharp, AugmentConfig(count=7, capacity=10), train=train
        )
        assert len(train) == 10  # 6 base + min(7, 4) generated
        assert tuple(train.tags[:6]) == BASE_TAGS
        assert train.tags[6:] == [f"luminance-generation-{g}" for g in (3, 4, 5, 6)]

    def test_eviction_is_fifo_over_generations(self):
        texture, depth, depth_sharp = _rasters()
        train = build_channel_train(texture, depth, depth_sharp, capacity=7)
        augment_stream(
            texture, depth, depth_sharp, AugmentConfig(count=3, capacity=7), train=train
        )
        assert train.tags[6:] == ["luminance-generation-2"]

    def test_train_never_exceeds_capacity(self):
        texture, depth, depth_sharp = _rasters()
        train = build_channel_train(texture, depth, depth_sharp, capacity=8)
        augment_stream(
            texture, depth, depth_sharp, AugmentConfig(count=25, capacity=8), train=train
        )
        assert len(train) == 8


class TestDerivedRng:
    def test_same_path_same_stream(self):
        a = derived_rng(11, 2, 3, 1).uniform(size=4)
        b = derived_rng(11, 2, 3, 1).uniform(size=4)
        np.testing.assert_array_equal(a, b)

    def test_paths_decorrelated(self):
        draws = {
            tuple(derived_rng(11, *path).uniform(size=4).round(12))
            for path in [(0, 0, 0), (0, 0, 1), (0, 1, 0), (1, 0, 0), (2, 5, 1)]
        }
        assert len(draws) == 5
