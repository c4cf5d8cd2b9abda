"""Feature extractor tests, including an independent scalar reference."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparse4d.errors import ImageTooSmallError, MalformedFileError
from sparse4d.feature_extractor import (
    ExtractorConfig,
    FeatureVector,
    block_features,
    extract,
    extract_sequence,
    read_feature_csv,
    write_feature_csv,
)
from sparse4d.render import RasterImage


def reference_features(gray, G, bins):
    """Plain-loop reimplementation of the block descriptor."""
    K = gray.shape[0]
    gx = np.zeros_like(gray)
    gy = np.zeros_like(gray)
    for r in range(K):
        for c in range(1, K - 1):
            gx[r, c] = (gray[r, c + 1] - gray[r, c - 1]) / 2
    for r in range(1, K - 1):
        for c in range(K):
            gy[r, c] = (gray[r + 1, c] - gray[r - 1, c]) / 2
    side = K // G
    rows = []
    for bi in range(G):
        for bj in range(G):
            hist = [0.0] * bins
            mean = 0.0
            for r in range(bi * side, (bi + 1) * side):
                for c in range(bj * side, (bj + 1) * side):
                    mean += gray[r, c]
                    m = np.hypot(gx[r, c], gy[r, c])
                    theta = np.arctan2(gy[r, c], gx[r, c]) % np.pi
                    b = min(int(theta / np.pi * bins), bins - 1)
                    hist[b] += m
            total = sum(hist)
            if total > 0:
                hist = [h / total for h in hist]
            rows.append([mean / side**2] + hist)
    return np.array(rows)


class TestConfig:
    def test_defaults_fill_pad_exactly(self):
        cfg = ExtractorConfig()
        assert cfg.grid**2 * (cfg.orientation_bins + 1) == cfg.pad_to == 512

    def test_validation(self):
        with pytest.raises(ValueError):
            ExtractorConfig(grid=1)
        with pytest.raises(ValueError):
            ExtractorConfig(orientation_bins=1)
        with pytest.raises(ValueError):
            ExtractorConfig(grid=4, orientation_bins=7, pad_to=100)


class TestExtract:
    def test_constant_image(self):
        cfg = ExtractorConfig(grid=4, orientation_bins=5, pad_to=128)
        out = extract(RasterImage(np.full((16, 16), 0.25)), cfg).values
        assert out.size == 128
        rows = out[: 16 * 6].reshape(16, 6)
        assert np.all(rows[:, 1:] == 0.0)  # flat image has no gradients
        nz = rows[:, 0]
        assert np.all(nz > 0) and np.allclose(nz, nz[0], atol=1e-12)
        assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-10)

    def test_all_zero_image_stays_zero(self):
        cfg = ExtractorConfig(grid=4, orientation_bins=5, pad_to=128)
        out = extract(RasterImage(np.zeros((16, 16))), cfg).values
        np.testing.assert_array_equal(out, np.zeros(128))

    def test_vertical_edge_hits_horizontal_bin(self):
        cfg = ExtractorConfig(grid=2, orientation_bins=6, pad_to=32)
        img = np.zeros((8, 8))
        img[:, 2:4] = 0.0
        img[:, 2] = 0.5  # vertical edge inside the top-left block
        img[:, 3] = 1.0
        rows = block_features(img, cfg)
        hist = rows[0, 1:]
        assert hist[0] == pytest.approx(1.0, abs=1e-12)

    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(0)
        gray = rng.uniform(size=(16, 16))
        cfg = ExtractorConfig(grid=2, orientation_bins=7, pad_to=32)
        np.testing.assert_allclose(
            block_features(gray, cfg), reference_features(gray, 2, 7), atol=1e-12
        )

    def test_three_channel_uses_gray(self):
        rng = np.random.default_rng(1)
        plane = rng.uniform(size=(16, 16))
        rgb = RasterImage(np.stack([plane] * 3, axis=-1))
        cfg = ExtractorConfig(grid=4, orientation_bins=5, pad_to=128)
        np.testing.assert_array_equal(
            extract(rgb, cfg).values, extract(RasterImage(plane), cfg).values
        )

    def test_too_small_image(self):
        with pytest.raises(ImageTooSmallError):
            extract(RasterImage(np.zeros((8, 8))), ExtractorConfig(grid=16, pad_to=2048))

    def test_truncates_remainder_pixels(self):
        # 10x10 with grid 4 uses only the leading 8x8 region
        rng = np.random.default_rng(2)
        base = rng.uniform(size=(10, 10))
        altered = base.copy()
        altered[9, 9] = 1.0 - altered[9, 9]
        cfg = ExtractorConfig(grid=4, orientation_bins=5, pad_to=128)
        np.testing.assert_array_equal(
            extract(RasterImage(base), cfg).values,
            extract(RasterImage(altered), cfg).values,
        )

    @settings(deadline=None, max_examples=30)
    @given(st.integers(0, 2**31 - 1))
    def test_norm_is_zero_or_one(self, seed):
        rng = np.random.default_rng(seed)
        cfg = ExtractorConfig(grid=4, orientation_bins=5, pad_to=140)
        out = extract(RasterImage(rng.uniform(size=(12, 12))), cfg).values
        assert out.size == 140
        n = np.linalg.norm(out)
        assert n == 0.0 or abs(n - 1.0) < 1e-10

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        img = RasterImage(rng.uniform(size=(16, 16)))
        cfg = ExtractorConfig(grid=4, orientation_bins=5, pad_to=128)
        np.testing.assert_array_equal(extract(img, cfg).values, extract(img, cfg).values)

    @settings(deadline=None, max_examples=30)
    @given(st.integers(0, 2**31 - 1), st.floats(0.01, 0.2))
    def test_intensity_shift_keeps_gradient_bins(self, seed, c):
        rng = np.random.default_rng(seed)
        gray = rng.uniform(0.0, 0.5, size=(12, 12))
        cfg = ExtractorConfig(grid=3, orientation_bins=6, pad_to=63)
        base = block_features(gray, cfg)
        shifted = block_features(gray + c, cfg)
        np.testing.assert_allclose(shifted[:, 1:], base[:, 1:], atol=1e-9)

    def test_feature_vector_validation(self):
        with pytest.raises(ValueError):
            FeatureVector(np.array([1.0, np.nan]))


class TestFeatureCsv:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(4)
        cfg = ExtractorConfig(grid=2, orientation_bins=3, pad_to=16)
        rows = extract_sequence(
            [RasterImage(rng.uniform(size=(8, 8))) for _ in range(3)], cfg
        )
        p = tmp_path / "x.csv"
        write_feature_csv(rows, p)
        np.testing.assert_array_equal(read_feature_csv(p), rows)
        assert p.read_text().splitlines()[0].startswith("x_0,x_1,")

    def test_bad_header(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("y_0,y_1\n0.0,0.0\n")
        with pytest.raises(MalformedFileError):
            read_feature_csv(p)
