import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from picr.data import (FG_RANGE, augment, depth_contrast, generate_sample, generate_to_dir, load_dataset,
                       read_entry, read_image, synthetic_dataset, write_sample)
from picr.errors import ConfigError, DatasetError


class TestGenerate:
    def test_deterministic(self):
        a, b = generate_sample(42), generate_sample(42)
        for x, y in ((a.rgb, b.rgb), (a.depth, b.depth), (a.gt, b.gt)):
            assert x.tobytes() == y.tobytes()

    def test_seeds_differ(self):
        assert not np.array_equal(generate_sample(1).gt, generate_sample(2).gt)

    def test_types_and_ranges(self):
        s = generate_sample(3, (48, 64))
        assert s.rgb.shape == (3, 48, 64) and s.depth.shape == (1, 48, 64) and s.gt.shape == (48, 64)
        assert s.rgb.dtype == s.depth.dtype == s.gt.dtype == np.float32
        assert set(np.unique(s.gt)) <= {0.0, 1.0}
        for a in (s.rgb, s.depth):
            assert a.min() >= 0 and a.max() <= 1

    @given(st.integers(0, 2 ** 32 - 1))
    def test_good_depth_contrast(self, seed):
        assert depth_contrast(generate_sample(seed)) >= 0.2

    def test_foreground_ratio_sweep(self):
        ratios = np.array([generate_sample(seed, (32, 32)).gt.mean() for seed in range(1000)])
        assert ratios.min() >= FG_RANGE[0] and ratios.max() <= FG_RANGE[1]

    def test_degraded_breaks_contrast_somewhere(self):
        contrasts = [depth_contrast(generate_sample(s, quality="degraded")) for s in range(20)]
        assert min(contrasts) < 0.2
        good = generate_sample(0)
        bad = generate_sample(0, quality="degraded")
        np.testing.assert_array_equal(good.gt, bad.gt)

    def test_too_small(self):
        with pytest.raises(ConfigError):
            generate_sample(0, (16, 64))

    def test_bad_quality(self):
        with pytest.raises(ConfigError):
            generate_sample(0, quality="poor")


class TestAugment:
    def test_same_transform_on_all_maps(self, rng):
        s = generate_sample(5)
        gt3 = np.repeat(s.gt[None], 3, 0)
        r, d, g = augment(gt3, s.gt[None], s.gt, rng)
        np.testing.assert_array_equal(r[0], g)
        np.testing.assert_array_equal(d[0], g)

    def test_is_flip_or_rotation(self, rng):
        x = np.arange(16.0).reshape(4, 4)
        variants = {np.rot90(a, k).tobytes() for a in (x, x[:, ::-1]) for k in range(4)}
        for _ in range(20):
            _, _, g = augment(x[None].repeat(3, 0), x[None], x, rng)
            assert g.tobytes() in variants


class TestDiskRoundTrip:
    @pytest.mark.parametrize("fmt", ["png", "pgm"])
    def test_within_quantisation(self, tmp_path, fmt):
        s = generate_sample(7)
        write_sample(tmp_path, s, fmt)
        [entry] = load_dataset(tmp_path)
        back = read_entry(entry)
        assert back.name == s.name
        for a, b in ((s.rgb, back.rgb), (s.depth, back.depth), (s.gt, back.gt)):
            assert np.abs(a - b).max() <= 1 / 255 / 2 + 1e-7

    def test_count_and_order(self, tmp_path):
        generate_to_dir(tmp_path, 5, seed=10)
        entries = load_dataset(tmp_path)
        assert [e.name for e in entries] == [f"synth_{i:06d}" for i in range(10, 15)]

    def test_orphan_is_named(self, tmp_path):
        generate_to_dir(tmp_path, 2)
        Image.new("RGB", (8, 8)).save(tmp_path / "rgb" / "lonely.png")
        with pytest.raises(DatasetError, match="lonely"):
            load_dataset(tmp_path)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(DatasetError):
            load_dataset(tmp_path / "nope")

    def test_gt_optional_for_inference_sets(self, tmp_path):
        s = generate_sample(1)
        write_sample(tmp_path, s)
        for p in (tmp_path / "gt").iterdir():
            p.unlink()
        (tmp_path / "gt").rmdir()
        [entry] = load_dataset(tmp_path, require_gt=False)
        assert entry.gt is None

    def test_three_channel_depth_is_averaged(self, tmp_path, caplog):
        arr = np.zeros((4, 4, 3), np.uint8)
        arr[..., 0], arr[..., 1], arr[..., 2] = 30, 60, 90
        Image.fromarray(arr, "RGB").save(tmp_path / "d.png")
        with caplog.at_level(logging.WARNING):
            d = read_image(tmp_path / "d.png", 1)
        assert d.shape == (4, 4)
        np.testing.assert_allclose(d, 60 / 255, rtol=1e-6)
        assert "averaging" in caplog.text

    def test_sixteen_bit_depth(self, tmp_path):
        Image.fromarray(np.full((4, 4), 65535, np.uint16)).save(tmp_path / "d.png")
        np.testing.assert_allclose(read_image(tmp_path / "d.png", 1), 1.0)

    def test_unreadable(self, tmp_path):
        (tmp_path / "x.png").write_bytes(b"not an image")
        with pytest.raises(OSError):
            read_image(tmp_path / "x.png", 3)


def test_synthetic_dataset_seeds():
    ds = synthetic_dataset(3, seed=4)
    assert [s.seed for s in ds] == [4, 5, 6]
