import numpy as np
import pytest

from mmfusion.errors import ConfigError, DataError
from mmfusion.images import (
    AugmentConfig,
    ImageRecord,
    augment,
    bilinear_resize,
    center_zoom,
    load_and_resize,
    read_ppm,
    rotate,
    standardize,
    write_ppm,
)
from mmfusion.rng import keyed_rng


def make_ppm(tmp_path, name, arr_hw3, maxval=255, magic=b"P6", header_comment=False):
    h, w = arr_hw3.shape[:2]
    head = b"%s\n" % magic
    if header_comment:
        head += b"# a comment line\n"
    head += b"%d %d\n%d\n" % (w, h, maxval)
    p = tmp_path / name
    p.write_bytes(head + arr_hw3.astype(np.uint8).tobytes())
    return p


# ----------------------------------------------------------------------- io

def test_p6_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    arr = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
    p = make_ppm(tmp_path, "img.ppm", arr)
    rec = read_ppm(p)
    assert rec.pixels.shape == (3, 5, 7)
    assert rec.original_size == (5, 7)
    np.testing.assert_allclose(rec.pixels, np.transpose(arr, (2, 0, 1)) / 255.0,
                               atol=1e-7)
    out = tmp_path / "copy.ppm"
    write_ppm(out, rec.pixels)
    again = read_ppm(out)
    np.testing.assert_array_equal(again.pixels, rec.pixels)


def test_p5_replicates_gray(tmp_path):
    arr = np.arange(12, dtype=np.uint8).reshape(3, 4, 1)
    p = make_ppm(tmp_path, "gray.pgm", arr, magic=b"P5")
    rec = read_ppm(p)
    assert rec.pixels.shape == (3, 3, 4)
    np.testing.assert_array_equal(rec.pixels[0], rec.pixels[1])
    np.testing.assert_array_equal(rec.pixels[1], rec.pixels[2])


def test_header_comments_ok(tmp_path):
    arr = np.zeros((2, 2, 3), dtype=np.uint8)
    p = make_ppm(tmp_path, "c.ppm", arr, header_comment=True)
    assert read_ppm(p).pixels.shape == (3, 2, 2)


def test_small_maxval_scales(tmp_path):
    arr = np.full((1, 1, 3), 15, dtype=np.uint8)
    p = make_ppm(tmp_path, "m.ppm", arr, maxval=15)
    np.testing.assert_allclose(read_ppm(p).pixels, 1.0)


def test_missing_file_names_path(tmp_path):
    with pytest.raises(DataError, match="no_such"):
        read_ppm(tmp_path / "no_such.ppm")


def test_truncated_pixels(tmp_path):
    p = tmp_path / "short.ppm"
    p.write_bytes(b"P6\n4 4\n255\n" + b"\x00" * 10)
    with pytest.raises(DataError, match="short.ppm"):
        read_ppm(p)


def test_unsupported_magic(tmp_path):
    p = tmp_path / "ascii.ppm"
    p.write_bytes(b"P3\n1 1\n255\n0 0 0\n")
    with pytest.raises(DataError):
        read_ppm(p)


def test_record_validates_range():
    with pytest.raises(DataError):
        ImageRecord(np.full((3, 2, 2), 1.5, dtype=np.float32))


# ------------------------------------------------------------------- resize

def test_checkerboard_to_single_pixel():
    px = np.zeros((3, 2, 2), dtype=np.float32)
    px[:, 0, 0] = 1.0
    px[:, 1, 1] = 1.0
    out = bilinear_resize(px, 1, 1)
    np.testing.assert_allclose(out, np.full((3, 1, 1), 0.5), atol=1e-7)


def test_solid_color_any_scale():
    px = np.full((3, 5, 9), 0.3, dtype=np.float32)
    out = bilinear_resize(px, 4, 4)
    np.testing.assert_allclose(out, np.full((3, 4, 4), 0.3), atol=1e-6)


def test_resize_identity():
    rng = np.random.default_rng(1)
    px = rng.random((3, 6, 6), dtype=np.float32)
    out = bilinear_resize(px, 6, 6)
    np.testing.assert_allclose(out, px, atol=1e-6)


def test_load_and_resize(tmp_path):
    arr = np.random.default_rng(2).integers(0, 256, size=(9, 5, 3), dtype=np.uint8)
    p = make_ppm(tmp_path, "in.ppm", arr)
    rec = load_and_resize(p, 4)
    assert rec.pixels.shape == (3, 4, 4)
    assert rec.original_size == (9, 5)
    assert rec.pixels.min() >= 0.0 and rec.pixels.max() <= 1.0


# -------------------------------------------------------------- standardize

def test_standardize_identity():
    px = np.random.default_rng(3).random((3, 2, 2), dtype=np.float32)
    out = standardize(ImageRecord(px), mean=(0, 0, 0), std=(1, 1, 1))
    np.testing.assert_array_equal(out, px)


def test_standardize_constant_at_mean():
    px = np.full((3, 2, 2), 0.5, dtype=np.float32)
    out = standardize(ImageRecord(px))
    np.testing.assert_allclose(out, 0.0)


def test_standardize_arithmetic():
    px = np.full((3, 1, 1), 0.8, dtype=np.float32)
    out = standardize(px, mean=(0.5, 0.5, 0.5), std=(0.25, 0.25, 0.25))
    np.testing.assert_allclose(out, 1.2, atol=1e-6)


def test_standardize_rejects_zero_std():
    with pytest.raises(ConfigError):
        standardize(np.zeros((3, 1, 1)), std=(0.5, 0.0, 0.5))


# ------------------------------------------------------------- augmentation

def blob_image(n=24):
    # smooth gaussian bump centered in frame; borders near zero so the
    # rotation round trip only loses interpolation mass, not content
    yy, xx = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    c = (n - 1) / 2
    g = np.exp(-(((yy - c) ** 2 + (xx - c) ** 2) / (2 * (n / 8) ** 2)))
    return np.repeat(g[None].astype(np.float32), 3, axis=0)


def test_augment_disabled_is_identity():
    rec = ImageRecord(blob_image())
    out = augment(rec, AugmentConfig(enabled=False), keyed_rng(0))
    assert out is rec


def test_augment_neutral_params_identity():
    cfg = AugmentConfig(horizontal_flip_prob=0.0, rotation_degrees=0.0,
                        zoom_range=(1.0, 1.0))
    rec = ImageRecord(blob_image())
    out = augment(rec, cfg, keyed_rng(1))
    np.testing.assert_allclose(out.pixels, rec.pixels, atol=1e-6)


def test_flip_involution():
    cfg = AugmentConfig(horizontal_flip_prob=1.0, rotation_degrees=0.0,
                        zoom_range=(1.0, 1.0))
    rec = ImageRecord(np.random.default_rng(4).random((3, 6, 6), dtype=np.float32))
    once = augment(rec, cfg, keyed_rng(0))
    twice = augment(once, cfg, keyed_rng(0))
    np.testing.assert_allclose(twice.pixels, rec.pixels, atol=1e-6)


def test_rotation_round_trip_on_smooth_image():
    px = blob_image()
    back = rotate(rotate(px, 15.0), -15.0)
    assert np.abs(back - px).mean() < 0.02


def test_zoom_bounds_and_shape():
    px = blob_image()
    for f in (0.8, 1.2):
        out = center_zoom(px, f)
        assert out.shape == px.shape
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_augment_outputs_stay_in_unit_range():
    cfg = AugmentConfig()
    rec = ImageRecord(np.random.default_rng(5).random((3, 12, 12), dtype=np.float32))
    for i in range(10):
        out = augment(rec, cfg, keyed_rng(7, "aug", i))
        assert out.pixels.min() >= 0.0
        assert out.pixels.max() <= 1.0
        assert out.pixels.shape == rec.pixels.shape


def test_augment_keyed_reproducible():
    cfg = AugmentConfig()
    rec = ImageRecord(blob_image())
    a = augment(rec, cfg, keyed_rng(3, "sample", 11, "epoch", 2))
    b = augment(rec, cfg, keyed_rng(3, "sample", 11, "epoch", 2))
    np.testing.assert_array_equal(a.pixels, b.pixels)
    c = augment(rec, cfg, keyed_rng(3, "sample", 11, "epoch", 3))
    assert not np.array_equal(a.pixels, c.pixels)


def test_bad_augment_config():
    with pytest.raises(ConfigError):
        AugmentConfig(horizontal_flip_prob=1.5)
    with pytest.raises(ConfigError):
        AugmentConfig(zoom_range=(1.2, 0.8))
    with pytest.raises(ConfigError):
        AugmentConfig(zoom_range=(0.0, 1.0))
