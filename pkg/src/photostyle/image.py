"""Image containers, deterministic arithmetic conventions, and PNG I/O.

Conventions used everywhere in the package:

* an RGB image is a float64 array of shape (H, W, 3), row-major with the
  origin at the top-left (PNG scanline order), values nominally in [0, 1]
  (intermediate optimization images may leave the interval but must stay
  finite);
* a channel vector is the 1-D row-major flattening of one channel
  (length H*W);
* an activation volume is channel-major, shape (C, H, W).

The PNG codec is self-contained (zlib + struct) so that 16-bit samples
are read at full precision and unsupported inputs fail with distinct
error types instead of being silently converted.
"""

from __future__ import annotations

import logging
import struct
import zlib

import numpy as np

from .errors import PngDecodeError, UnsupportedPngError

log = logging.getLogger(__name__)

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"

# PNG color types we know how to read.
_COLOR_RGB = 2
_COLOR_PALETTE = 3
_COLOR_RGBA = 6


def require_image(arr: np.ndarray, name: str = "image") -> np.ndarray:
    """Check the (H, W, 3) float image convention and return the array."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def flatten_channel(image: np.ndarray, c: int) -> np.ndarray:
    """Row-major vectorization of channel c, the V_c view used by the
    photorealism penalty."""
    image = np.asarray(image)
    if not 0 <= c < 3:
        raise ValueError(f"channel index {c} out of range [0, 3)")
    return image[:, :, c].reshape(-1).astype(np.float64, copy=True)

def unflatten_channel(vec: np.ndarray, height: int, width: int) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.size != height * width:
        raise ValueError(
            f"vector length {vec.size} does not match {height}x{width}"
        )
    return vec.reshape(height, width).copy()


def image_to_planes(image: np.ndarray) -> np.ndarray:
    """(H, W, 3) -> channel-major (3, H, W) activation volume."""
    return np.ascontiguousarray(np.moveaxis(np.asarray(image, dtype=np.float64), 2, 0))


def planes_to_image(planes: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(np.asarray(planes, dtype=np.float64), 0, 2))


# ---------------------------------------------------------------------------
# PNG decoding


def _read_chunks(data: bytes):
    if data[:8] != PNG_SIGNATURE:
        raise PngDecodeError("not a PNG file (bad signature)")
    pos = 8
    while pos < len(data):
        if pos + 8 > len(data):
            raise PngDecodeError("truncated chunk header")
        (length,) = struct.unpack_from(">I", data, pos)
        ctype = data[pos + 4 : pos + 8]
        body = data[pos + 8 : pos + 8 + length]
        if len(body) != length or pos + 12 + length > len(data):
            raise PngDecodeError(f"truncated {ctype!r} chunk")
        (crc,) = struct.unpack_from(">I", data, pos + 8 + length)
        if zlib.crc32(ctype + body) & 0xFFFFFFFF != crc:
            raise PngDecodeError(f"CRC mismatch in {ctype!r} chunk")
        yield ctype, body
        pos += 12 + length
        if ctype == b"IEND":
            return
    raise PngDecodeError("missing IEND chunk")


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _unfilter(raw: bytes, height: int, stride: int, bpp: int) -> np.ndarray:
    """Undo per-scanline PNG filtering; returns (height, stride) uint8."""
    if len(raw) != height * (stride + 1):
        raise PngDecodeError(
            f"decompressed data has {len(raw)} bytes, expected {height * (stride + 1)}"
        )
    out = np.zeros((height, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.uint8)
    pos = 0
    for y in range(height):
        ftype = raw[pos]
        pos += 1
        cur = np.frombuffer(raw, dtype=np.uint8, count=stride, offset=pos).copy()
        pos += stride
        if ftype == 0:
            pass
        elif ftype == 1:  # Sub
            for i in range(bpp, stride):
                cur[i] = (int(cur[i]) + int(cur[i - bpp])) & 0xFF
        elif ftype == 2:  # Up
            cur += prev
        elif ftype == 3:  # Average
            for i in range(stride):
                left = int(cur[i - bpp]) if i >= bpp else 0
                cur[i] = (int(cur[i]) + ((left + int(prev[i])) >> 1)) & 0xFF
        elif ftype == 4:  # Paeth
            for i in range(stride):
                left = int(cur[i - bpp]) if i >= bpp else 0
                upleft = int(prev[i - bpp]) if i >= bpp else 0
                cur[i] = (int(cur[i]) + _paeth(left, int(prev[i]), upleft)) & 0xFF
        else:
            raise PngDecodeError(f"unknown filter type {ftype} on scanline {y}")
        out[y] = cur
        prev = cur
    return out


def _unpack_indices(rows: np.ndarray, bit_depth: int, width: int) -> np.ndarray:
    """Expand sub-byte palette indices to one index per pixel."""
    if bit_depth == 8:
        return rows[:, :width]
    bits = np.unpackbits(rows, axis=1)
    per = bits.reshape(rows.shape[0], -1, bit_depth)
    weights = 1 << np.arange(bit_depth - 1, -1, -1)
    idx = (per * weights).sum(axis=2)
    return idx[:, :width]


def decode_png(data: bytes, allow_palette: bool = False) -> tuple[np.ndarray, int]:
    """Decode PNG bytes into an integer pixel array.

    Returns (pixels, bit_depth) where pixels has shape (H, W, C) with C in
    {3, 4} and dtype uint8 or uint16. Palette images (only allowed when
    allow_palette is set) are expanded to 8-bit RGB.
    """
    header = None
    palette = None
    idat = bytearray()
    for ctype, body in _read_chunks(data):
        if ctype == b"IHDR":
            header = struct.unpack(">IIBBBBB", body)
        elif ctype == b"PLTE":
            if len(body) % 3 != 0:
                raise PngDecodeError("PLTE length not a multiple of 3")
            palette = np.frombuffer(body, dtype=np.uint8).reshape(-1, 3)
        elif ctype == b"IDAT":
            idat.extend(body)
    if header is None:
        raise PngDecodeError("missing IHDR chunk")
    width, height, bit_depth, color_type, compression, filt, interlace = header
    if width == 0 or height == 0:
        raise PngDecodeError("zero-sized image")
    if compression != 0 or filt != 0:
        raise PngDecodeError("unknown compression/filter method")
    if interlace != 0:
        raise UnsupportedPngError("interlaced PNG is not supported")
    if color_type == _COLOR_PALETTE:
        if not allow_palette:
            raise UnsupportedPngError(
                "palette PNG not supported here (expected 8/16-bit RGB or RGBA)"
            )
        if bit_depth not in (1, 2, 4, 8):
            raise PngDecodeError(f"invalid palette bit depth {bit_depth}")
        if palette is None:
            raise PngDecodeError("palette image without PLTE chunk")
        channels, sample_bytes = 1, 1
    elif color_type in (_COLOR_RGB, _COLOR_RGBA):
        if bit_depth not in (8, 16):
            raise UnsupportedPngError(f"bit depth {bit_depth} not supported")
        channels = 3 if color_type == _COLOR_RGB else 4
        sample_bytes = bit_depth // 8
    else:
        raise UnsupportedPngError(
            f"color type {color_type} not supported (expected RGB, RGBA or palette)"
        )
    if not idat:
        raise PngDecodeError("missing IDAT data")
    try:
        raw = zlib.decompress(bytes(idat))
    except zlib.error as exc:
        raise PngDecodeError(f"IDAT decompression failed: {exc}") from None

    if color_type == _COLOR_PALETTE:
        stride = (width * bit_depth + 7) // 8
        rows = _unfilter(raw, height, stride, 1)
        idx = _unpack_indices(rows, bit_depth, width)
        if idx.max(initial=0) >= len(palette):
            raise PngDecodeError("palette index out of range")
        return palette[idx], 8

    stride = width * channels * sample_bytes
    rows = _unfilter(raw, height, stride, channels * sample_bytes)
    if bit_depth == 8:
        pixels = rows.reshape(height, width, channels)
    else:
        pixels = (
            rows.view(">u2").astype(np.uint16).reshape(height, width, channels)
        )
    return pixels, bit_depth


def load_png(path) -> np.ndarray:
    """Load an 8- or 16-bit RGB/RGBA PNG as a float64 (H, W, 3) image in [0, 1].

    Alpha channels are discarded with a logged warning; palette, grayscale
    and interlaced files raise UnsupportedPngError, corrupt files raise
    PngDecodeError.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    pixels, bit_depth = decode_png(data, allow_palette=False)
    if pixels.shape[2] == 4:
        log.warning("discarding alpha channel of %s", path)
        pixels = pixels[:, :, :3]
    scale = float(2**bit_depth - 1)
    return pixels.astype(np.float64) / scale


def encode_png(image: np.ndarray) -> bytes:
    """Encode a float image as deterministic 8-bit RGB PNG bytes.

    Values are clamped to [0, 1] and quantized with round-half-up to
    round(v * 255).
    """
    image = require_image(image)
    quant = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    height, width, _ = quant.shape
    raw = bytearray()
    for y in range(height):
        raw.append(0)  # filter type None
        raw.extend(quant[y].tobytes())

    def chunk(ctype: bytes, body: bytes) -> bytes:
        return (
            struct.pack(">I", len(body))
            + ctype
            + body
            + struct.pack(">I", zlib.crc32(ctype + body) & 0xFFFFFFFF)
        )

    ihdr = struct.pack(">IIBBBBB", width, height, 8, _COLOR_RGB, 0, 0, 0)
    return (
        PNG_SIGNATURE
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", zlib.compress(bytes(raw), 6))
        + chunk(b"IEND", b"")
    )


def save_png(image: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_png(image))
