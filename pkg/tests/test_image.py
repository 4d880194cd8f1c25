import io
import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from photostyle.errors import PngDecodeError, UnsupportedPngError
from photostyle.image import (
    decode_png,
    encode_png,
    flatten_channel,
    image_to_planes,
    load_png,
    planes_to_image,
    save_png,
    unflatten_channel,
)


def _write_png_16bit_rgb(values):
    """Hand-rolled 16-bit RGB PNG encoder, independent of the package codec."""
    arr = np.asarray(values, dtype=">u2")
    h, w, _ = arr.shape
    raw = b"".join(b"\x00" + arr[y].tobytes() for y in range(h))

    def chunk(ctype, body):
        return (
            struct.pack(">I", len(body))
            + ctype
            + body
            + struct.pack(">I", zlib.crc32(ctype + body) & 0xFFFFFFFF)
        )

    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 16, 2, 0, 0, 0))
        + chunk(b"IDAT", zlib.compress(raw))
        + chunk(b"IEND", b"")
    )


def test_load_saturated_red(tmp_path):
    arr = np.zeros((2, 2, 3), dtype=np.uint8)
    arr[:, :, 0] = 255
    path = tmp_path / "red.png"
    Image.fromarray(arr).save(path)
    img = load_png(path)
    assert img.shape == (2, 2, 3)
    np.testing.assert_array_equal(img, np.tile([1.0, 0.0, 0.0], (2, 2, 1)))


def test_load_midgray_scaling(tmp_path):
    arr = np.full((1, 1, 3), 128, dtype=np.uint8)
    path = tmp_path / "gray.png"
    Image.fromarray(arr).save(path)
    img = load_png(path)
    np.testing.assert_allclose(img, 128.0 / 255.0)


def test_save_clamps_and_rounds(tmp_path):
    img = np.array([[[1.2, 0.5, -0.1]]])
    path = tmp_path / "clamp.png"
    save_png(img, path)
    back = np.asarray(Image.open(path))
    assert back.reshape(-1).tolist() == [255, 128, 0]


def test_save_load_roundtrip_bytes_identical(tmp_path):
    rng = np.random.default_rng(7)
    img = np.floor(rng.uniform(0, 256, size=(9, 5, 3))) / 255.0
    first = encode_png(img)
    path = tmp_path / "rt.png"
    path.write_bytes(first)
    again = encode_png(load_png(path))
    assert first == again


def test_decode_matches_pillow_on_filtered_files(tmp_path):
    # Pillow picks its own scanline filters; exercise the unfilter paths.
    rng = np.random.default_rng(3)
    for i, shape in enumerate([(1, 1), (4, 7), (16, 16), (31, 2)]):
        arr = rng.integers(0, 256, size=shape + (3,), dtype=np.uint8)
        # smooth gradient images push Pillow towards Sub/Up/Average/Paeth
        if i % 2:
            arr = np.cumsum(arr, axis=1).astype(np.uint8)
        path = tmp_path / f"p{i}.png"
        Image.fromarray(arr).save(path, optimize=True)
        img = load_png(path)
        np.testing.assert_array_equal(
            np.floor(img * 255.0 + 0.5).astype(np.uint8), arr
        )


def test_load_16bit_full_precision(tmp_path):
    vals = np.array(
        [[[1000, 40000, 65535], [0, 1, 2]], [[300, 400, 500], [60000, 30000, 15000]]],
        dtype=np.uint16,
    )
    path = tmp_path / "deep.png"
    path.write_bytes(_write_png_16bit_rgb(vals))
    img = load_png(path)
    np.testing.assert_allclose(img, vals.astype(np.float64) / 65535.0, rtol=0, atol=0)


def test_alpha_discarded_with_warning(tmp_path, caplog):
    arr = np.zeros((2, 3, 4), dtype=np.uint8)
    arr[:, :, 1] = 77
    arr[:, :, 3] = 10
    path = tmp_path / "rgba.png"
    Image.fromarray(arr, mode="RGBA").save(path)
    with caplog.at_level("WARNING"):
        img = load_png(path)
    assert img.shape == (2, 3, 3)
    assert any("alpha" in rec.message for rec in caplog.records)
    np.testing.assert_allclose(img[:, :, 1], 77.0 / 255.0)


def test_unsupported_color_types(tmp_path):
    gray = Image.fromarray(np.zeros((2, 2), dtype=np.uint8), mode="L")
    gray_path = tmp_path / "gray.png"
    gray.save(gray_path)
    with pytest.raises(UnsupportedPngError):
        load_png(gray_path)

    pal = Image.fromarray(np.zeros((2, 2), dtype=np.uint8), mode="P")
    pal_path = tmp_path / "pal.png"
    pal.save(pal_path)
    with pytest.raises(UnsupportedPngError):
        load_png(pal_path)


def test_decode_errors_are_distinct(tmp_path):
    with pytest.raises(PngDecodeError):
        decode_png(b"definitely not a png")
    good = encode_png(np.zeros((3, 3, 3)))
    corrupted = bytearray(good)
    corrupted[40] ^= 0xFF
    with pytest.raises(PngDecodeError):
        decode_png(bytes(corrupted))
    with pytest.raises(PngDecodeError):
        decode_png(good[: len(good) // 2])


def test_flatten_channel_row_major():
    img = np.zeros((2, 2, 3))
    img[:, :, 0] = [[1.0, 2.0], [3.0, 4.0]]
    np.testing.assert_array_equal(flatten_channel(img, 0), [1.0, 2.0, 3.0, 4.0])
    assert flatten_channel(np.full((1, 1, 3), 0.25), 2).shape == (1,)
    with pytest.raises(ValueError):
        flatten_channel(img, 3)


@settings(max_examples=25, deadline=None)
@given(
    st.integers(min_value=1, max_value=8),
    st.integers(min_value=1, max_value=8),
    st.integers(min_value=0, max_value=2),
    st.integers(min_value=0, max_value=2**32 - 1),
)
def test_flatten_unflatten_inverse(h, w, c, seed):
    img = np.random.default_rng(seed).uniform(size=(h, w, 3))
    vec = flatten_channel(img, c)
    np.testing.assert_array_equal(unflatten_channel(vec, h, w), img[:, :, c])


def test_planes_roundtrip():
    img = np.random.default_rng(0).uniform(size=(4, 5, 3))
    np.testing.assert_array_equal(planes_to_image(image_to_planes(img)), img)
