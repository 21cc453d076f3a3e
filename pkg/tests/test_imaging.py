import numpy as np
import pytest
from PIL import Image

from conftest import box_mask, rand_image
from detfill.imaging import (
    COLORMAP_LUT,
    compose_input,
    composite_output,
    export_colormap,
    load_image,
    load_mask,
    mask_to_tensor,
    save_image,
    save_mask,
    to_array,
    to_tensor,
    valuation_to_rgb,
)


class TestLoadImage:
    def test_identity_resize(self, tmp_path):
        rng = np.random.default_rng(11)
        raw = rng.integers(0, 256, size=(256, 256, 3), dtype=np.uint8)
        path = tmp_path / "img.png"
        Image.fromarray(raw).save(path)
        arr = load_image(path, 256)
        assert arr.shape == (256, 256, 3)
        np.testing.assert_array_equal(arr, raw.astype(np.float32) / 255.0)

    def test_all_black_is_exact_zero(self, tmp_path):
        path = tmp_path / "black.png"
        Image.fromarray(np.zeros((32, 32, 3), dtype=np.uint8)).save(path)
        arr = load_image(path, 32)
        assert np.all(arr == 0.0)

    def test_constant_gray_downsize(self, tmp_path):
        # bilinear resize of a constant image stays constant
        path = tmp_path / "gray.png"
        Image.fromarray(np.full((512, 512, 3), 128, dtype=np.uint8)).save(path)
        arr = load_image(path, 64)
        assert arr.shape == (64, 64, 3)
        np.testing.assert_allclose(arr, np.float32(128.0 / 255.0), rtol=0, atol=0)
        assert abs(float(arr[0, 0, 0]) - 0.5019607843137255) < 1e-7

    def test_grayscale_keeps_single_channel(self, tmp_path):
        path = tmp_path / "g.png"
        Image.fromarray(np.full((16, 16), 77, dtype=np.uint8), mode="L").save(path)
        arr = load_image(path)
        assert arr.shape == (16, 16, 1)

    def test_missing_file_is_io_error(self, tmp_path):
        with pytest.raises(OSError):
            load_image(tmp_path / "nope.png")

    def test_garbage_file_is_io_error(self, tmp_path):
        path = tmp_path / "garbage.png"
        path.write_bytes(b"this is not a png at all")
        with pytest.raises(OSError):
            load_image(path)

    def test_values_never_leave_unit_range(self, tmp_path):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            raw = rng.integers(0, 256, size=(20, 24, 3), dtype=np.uint8)
            path = tmp_path / f"r{seed}.png"
            Image.fromarray(raw).save(path)
            arr = load_image(path, 16)
            assert arr.min() >= 0.0 and arr.max() <= 1.0


class TestMaskIO:
    def test_threshold_at_128(self, tmp_path):
        raw = np.array([[0, 127], [128, 255]], dtype=np.uint8)
        path = tmp_path / "m.png"
        Image.fromarray(raw, mode="L").save(path)
        mask = load_mask(path)
        np.testing.assert_array_equal(mask, [[0.0, 0.0], [1.0, 1.0]])

    def test_save_load_round_trip(self, tmp_path):
        mask = box_mask(32, 32, 8, 8, 10, 12)
        path = tmp_path / "m.png"
        save_mask(mask, path)
        np.testing.assert_array_equal(load_mask(path), mask)

    def test_nearest_resize_stays_binary(self, tmp_path):
        mask = box_mask(64, 64, 10, 10, 21, 17)
        path = tmp_path / "m.png"
        save_mask(mask, path)
        small = load_mask(path, 32)
        assert set(np.unique(small)) <= {0.0, 1.0}


class TestComposeInput:
    def test_zero_mask_is_identity(self):
        gt = rand_image(16, 16, seed=1)
        np.testing.assert_array_equal(compose_input(gt, np.zeros((16, 16))), gt)

    def test_full_mask_is_all_ones(self):
        gt = rand_image(16, 16, seed=2)
        assert np.all(compose_input(gt, np.ones((16, 16))) == 1.0)

    def test_half_mask(self):
        gt = np.full((8, 8, 3), 0.4, dtype=np.float32)
        mask = np.zeros((8, 8), dtype=np.float32)
        mask[:, :4] = 1.0
        out = compose_input(gt, mask)
        assert np.all(out[:, :4] == 1.0)
        np.testing.assert_allclose(out[:, 4:], 0.4, atol=1e-7)

    def test_idempotent(self):
        for seed in range(4):
            gt = rand_image(12, 12, seed=seed)
            mask = (rand_image(12, 12, 1, seed=seed + 50)[:, :, 0] > 0.6).astype(np.float32)
            once = compose_input(gt, mask)
            np.testing.assert_array_equal(compose_input(once, mask), once)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            compose_input(rand_image(8, 8), np.zeros((9, 8)))


class TestCompositeOutput:
    def test_full_mask_returns_out(self):
        out, gt = rand_image(8, 8, seed=3), rand_image(8, 8, seed=4)
        np.testing.assert_array_equal(composite_output(out, gt, np.ones((8, 8))), out)

    def test_zero_mask_returns_gt(self):
        out, gt = rand_image(8, 8, seed=5), rand_image(8, 8, seed=6)
        np.testing.assert_array_equal(composite_output(out, gt, np.zeros((8, 8))), gt)

    def test_top_half(self):
        out = np.full((8, 8, 3), 0.2, dtype=np.float32)
        gt = np.full((8, 8, 3), 0.8, dtype=np.float32)
        mask = box_mask(8, 8, 0, 0, 4, 8)
        result = composite_output(out, gt, mask)
        np.testing.assert_allclose(result[:4], 0.2, atol=1e-7)
        np.testing.assert_allclose(result[4:], 0.8, atol=1e-7)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            composite_output(rand_image(8, 8), rand_image(8, 9), np.zeros((8, 8)))


class TestColormap:
    def test_endpoints(self):
        rgb = valuation_to_rgb(np.array([[0.0, 1.0]]))
        np.testing.assert_array_equal(rgb[0, 0], [0, 0, 128])  # blue end
        np.testing.assert_array_equal(rgb[0, 1], [128, 0, 0])  # red end

    def test_midpoint_matches_table(self):
        rgb = valuation_to_rgb(np.array([[0.5]]))
        np.testing.assert_array_equal(rgb[0, 0], COLORMAP_LUT[128])
        np.testing.assert_array_equal(rgb[0, 0], [130, 255, 126])

    def test_uniform_maps(self, tmp_path):
        for value, expected in ((0.0, (0, 0, 128)), (1.0, (128, 0, 0))):
            path = tmp_path / f"v{value}.png"
            export_colormap(np.full((6, 6), value), path)
            back = np.asarray(Image.open(path))
            assert np.all(back == np.array(expected, dtype=np.uint8))

    def test_deterministic_bytes(self, tmp_path):
        vmap = rand_image(16, 16, 1, seed=9)[:, :, 0]
        a, b = tmp_path / "a.png", tmp_path / "b.png"
        export_colormap(vmap, a)
        export_colormap(vmap, b)
        assert a.read_bytes() == b.read_bytes()

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            valuation_to_rgb(np.array([[1.5]]))

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(OSError):
            export_colormap(np.zeros((4, 4)), tmp_path / "no" / "such" / "dir.png")


class TestSaveImage:
    def test_round_trip_quantized(self, tmp_path):
        img = rand_image(16, 16, seed=12)
        path = tmp_path / "x.png"
        save_image(img, path)
        back = load_image(path, 16)
        assert np.abs(back - img).max() <= 0.5 / 255.0 + 1e-7

    def test_grayscale(self, tmp_path):
        img = rand_image(16, 16, 1, seed=13)
        path = tmp_path / "g.png"
        save_image(img, path)
        assert load_image(path).shape == (16, 16, 1)


class TestTensorBridge:
    def test_image_round_trip(self):
        img = rand_image(8, 10, seed=20)
        t = to_tensor(img)
        assert tuple(t.shape) == (1, 3, 8, 10)
        np.testing.assert_array_equal(to_array(t), img)

    def test_mask_shape(self):
        m = box_mask(8, 8, 2, 2, 3, 3)
        assert tuple(mask_to_tensor(m).shape) == (1, 1, 8, 8)
