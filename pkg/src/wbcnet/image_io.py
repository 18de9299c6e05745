"""Image decoding, encoding, bilinear resize, and lossless rotation.

BMP support (uncompressed 24-bit) is implemented directly so the byte layout
is under our control and testable against hand-built fixtures; JPEG decoding
delegates to Pillow. Decoded images are channels-first float arrays
``[3, H, W]`` with values in [0, 1].
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, FormatError

_BMP_FILE_HEADER = struct.Struct("<2sIHHI")
_BMP_INFO_HEADER = struct.Struct("<IiiHHIIiiII")


def decode_bmp(data: bytes) -> np.ndarray:
    """Decode an uncompressed 24-bit BMP into an ``[H, W, 3]`` uint8 RGB array."""
    if data[:2] != b"BM":
        raise FormatError("not a BMP file (missing 'BM' magic)")
    if len(data) < _BMP_FILE_HEADER.size + _BMP_INFO_HEADER.size:
        raise DecodeError("BMP truncated before headers")
    _, _, _, _, pixel_offset = _BMP_FILE_HEADER.unpack_from(data, 0)
    (header_size, width, height, planes, bpp, compression,
     _, _, _, _, _) = _BMP_INFO_HEADER.unpack_from(data, _BMP_FILE_HEADER.size)
    if header_size < 40:
        raise FormatError(f"unsupported BMP header size {header_size}")
    if planes != 1 or bpp != 24 or compression != 0:
        raise FormatError(f"only uncompressed 24-bit BMP is supported "
                          f"(planes={planes}, bpp={bpp}, compression={compression})")
    if width < 1 or height == 0:
        raise DecodeError(f"invalid BMP dimensions {width}x{height}")
    bottom_up = height > 0
    height = abs(height)
    row_size = (3 * width + 3) // 4 * 4
    end = pixel_offset + row_size * height
    if pixel_offset < _BMP_FILE_HEADER.size + header_size or end > len(data):
        raise DecodeError("BMP pixel data truncated")
    rows = np.frombuffer(data, dtype=np.uint8, count=row_size * height,
                         offset=pixel_offset).reshape(height, row_size)
    bgr = rows[:, :3 * width].reshape(height, width, 3)
    rgb = bgr[:, :, ::-1]
    if bottom_up:
        rgb = rgb[::-1]
    return np.ascontiguousarray(rgb)


def encode_bmp(pixels: np.ndarray) -> bytes:
    """Encode an ``[H, W, 3]`` uint8 RGB array as an uncompressed 24-bit BMP."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
        raise ValueError(f"expected [H, W, 3] uint8 pixels, got {pixels.shape} {pixels.dtype}")
    h, w, _ = pixels.shape
    row_size = (3 * w + 3) // 4 * 4
    rows = np.zeros((h, row_size), dtype=np.uint8)
    rows[:, :3 * w] = pixels[::-1, :, ::-1].reshape(h, 3 * w)  # bottom-up, BGR
    pixel_offset = _BMP_FILE_HEADER.size + _BMP_INFO_HEADER.size
    file_size = pixel_offset + rows.size
    header = _BMP_FILE_HEADER.pack(b"BM", file_size, 0, 0, pixel_offset)
    info = _BMP_INFO_HEADER.pack(40, w, h, 1, 24, 0, rows.size, 2835, 2835, 0, 0)
    return header + info + rows.tobytes()


def decode_jpeg(data: bytes) -> np.ndarray:
    """Decode a JPEG into an ``[H, W, 3]`` uint8 RGB array via Pillow."""
    if data[:2] != b"\xff\xd8":
        raise FormatError("not a JPEG file (missing SOI marker)")
    try:
        with Image.open(io.BytesIO(data)) as img:
            img.load()
            rgb = img.convert("RGB")
            return np.asarray(rgb, dtype=np.uint8)
    except (OSError, UnidentifiedImageError, SyntaxError) as exc:
        raise DecodeError(f"JPEG decode failed: {exc}") from exc


def load_image(path) -> np.ndarray:
    """Read a JPEG or BMP file into a ``[3, H, W]`` float32 array in [0, 1]."""
    data = Path(path).read_bytes()
    if data[:2] == b"BM":
        hwc = decode_bmp(data)
    elif data[:2] == b"\xff\xd8":
        hwc = decode_jpeg(data)
    else:
        raise FormatError(f"unsupported image format in {path} "
                          f"(expected BMP or JPEG magic bytes)")
    return np.ascontiguousarray(hwc.transpose(2, 0, 1)).astype(np.float32) / np.float32(255.0)


def save_image(path, pixels: np.ndarray, *, jpeg_quality: int = 95) -> None:
    """Write a ``[3, H, W]`` float image in [0, 1] as BMP or JPEG by extension."""
    path = Path(path)
    hwc = np.rint(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    suffix = path.suffix.lower()
    if suffix == ".bmp":
        path.write_bytes(encode_bmp(hwc))
    elif suffix in (".jpg", ".jpeg"):
        Image.fromarray(hwc).save(path, format="JPEG", quality=jpeg_quality)
    else:
        raise FormatError(f"unsupported output extension {suffix!r} (use .bmp, .jpg, .jpeg)")


def _axis_coords(n_src: int, n_dst: int) -> np.ndarray:
    if n_dst == 1:
        return np.array([(n_src - 1) / 2.0])
    return np.arange(n_dst) * ((n_src - 1) / (n_dst - 1))


def resize_bilinear(image: np.ndarray, target_h: int = 100, target_w: int = 100) -> np.ndarray:
    """Bilinear resize of a ``[C, H, W]`` image; endpoints map to endpoints.

    A size-preserving call returns the pixels unchanged, and output values
    stay inside [0, 1] for inputs in [0, 1].
    """
    image = np.asarray(image)
    if image.ndim != 3:
        raise ValueError(f"expected [C, H, W] image, got shape {image.shape}")
    if target_h < 1 or target_w < 1:
        raise ValueError("target size must be >= 1x1")
    _, h, w = image.shape
    rr = _axis_coords(h, target_h)
    cc = _axis_coords(w, target_w)
    r0 = np.floor(rr).astype(np.intp)
    c0 = np.floor(cc).astype(np.intp)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    tr = (rr - r0).astype(image.dtype)[:, None]
    tc = (cc - c0).astype(image.dtype)[None, :]
    top = image[:, r0[:, None], c0[None, :]] * (1 - tc) + image[:, r0[:, None], c1[None, :]] * tc
    bot = image[:, r1[:, None], c0[None, :]] * (1 - tc) + image[:, r1[:, None], c1[None, :]] * tc
    out = top * (1 - tr) + bot * tr
    return np.clip(out, 0.0, 1.0, out=out)


def rotate(image: np.ndarray, degrees: int) -> np.ndarray:
    """Rotate a ``[C, H, W]`` image clockwise by 90, 180, or 270 degrees.

    Pure pixel permutation: rotating by 90 sends (row r, col c) to
    (row c, col H-1-r). Other angles raise ``ValueError``.
    """
    image = np.asarray(image)
    if image.ndim != 3:
        raise ValueError(f"expected [C, H, W] image, got shape {image.shape}")
    turns = {90: -1, 180: 2, 270: 1}
    if degrees not in turns:
        raise ValueError(f"unsupported rotation angle {degrees}, expected 90, 180, or 270")
    return np.ascontiguousarray(np.rot90(image, k=turns[degrees], axes=(1, 2)))
