"""File formats: 8-bit RGB PNG, binary PPM (P6), FMAP feature dumps."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .core import Image

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1

IMAGE_EXTENSIONS = (".png", ".ppm")


def read_image(path) -> Image:
    """Read an RGB image from PNG or PPM (by extension)."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".ppm":
        return read_ppm(path)
    if suffix == ".png":
        with PILImage.open(path) as im:
            if im.mode != "RGB":
                raise ValueError(f"{path}: expected 8-bit RGB PNG, got mode {im.mode}")
            return Image(np.asarray(im, dtype=np.uint8))
    raise ValueError(f"{path}: unsupported image extension {suffix!r}")


def write_image(path, image: Image) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".ppm":
        write_ppm(path, image)
    elif suffix == ".png":
        PILImage.fromarray(image.pixels, mode="RGB").save(path, format="PNG")
    else:
        raise ValueError(f"{path}: unsupported image extension {suffix!r}")


def _ppm_tokens(data: bytes, count: int, start: int) -> tuple[list[bytes], int]:
    """Read `count` whitespace-separated tokens, skipping # comments."""
    tokens = []
    i = start
    while len(tokens) < count:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i < len(data) and data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        if j == i:
            raise ValueError("truncated PPM header")
        tokens.append(data[i:j])
        i = j
    return tokens, i


def read_ppm(path) -> Image:
    data = Path(path).read_bytes()
    if data[:2] != b"P6":
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    try:
        (w_tok, h_tok, max_tok), pos = _ppm_tokens(data, 3, 2)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    width, height, maxval = int(w_tok), int(h_tok), int(max_tok)
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
    pos += 1  # exactly one whitespace byte after maxval
    expected = width * height * 3
    payload = data[pos : pos + expected]
    if len(payload) < expected:
        raise ValueError(f"{path}: truncated pixel data, expected {expected} bytes, got {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return Image(pixels)


def write_ppm(path, image: Image) -> None:
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + image.pixels.tobytes())


def read_fmap(path) -> np.ndarray:
    """Read an FMAP file into a CxHxW float32 array.

    Layout: magic 'FMAP', then little-endian u32 version=1, C, H, W, then
    C*H*W IEEE-754 float32 LE, channel-major, row-major within channel.
    """
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != FMAP_MAGIC:
        raise ValueError(f"{path}: bad magic at byte 0, expected 46 4D 41 50 ('FMAP')")
    if len(data) < 20:
        raise ValueError(f"{path}: truncated header, {len(data)} bytes < 20")
    version, c, h, w = struct.unpack_from("<4I", data, 4)
    if version != FMAP_VERSION:
        raise ValueError(f"{path}: unsupported version field {version} at byte 4")
    for name, offset, val in (("C", 8, c), ("H", 12, h), ("W", 16, w)):
        if val == 0:
            raise ValueError(f"{path}: zero dimension {name} at byte {offset}")
    count = c * h * w
    payload = data[20:]
    if len(payload) < 4 * count:
        raise ValueError(
            f"{path}: truncated payload at byte 20, expected {count} floats, got {len(payload) // 4}"
        )
    values = np.frombuffer(payload[: 4 * count], dtype="<f4").reshape(c, h, w)
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values.ravel()))[0])
        raise ValueError(f"{path}: non-finite value in payload at float index {bad} (byte {20 + 4 * bad})")
    return values.copy()


def write_fmap(path, values: np.ndarray) -> None:
    values = np.ascontiguousarray(values, dtype=np.float32)
    if values.ndim != 3:
        raise ValueError(f"FMAP payload must be CxHxW, got shape {values.shape}")
    c, h, w = values.shape
    header = FMAP_MAGIC + struct.pack("<4I", FMAP_VERSION, c, h, w)
    Path(path).write_bytes(header + values.astype("<f4").tobytes())


def read_label_png(path) -> np.ndarray:
    """Read an 8-bit grayscale PNG where each pixel value is a class id."""
    with PILImage.open(path) as im:
        if im.mode != "L":
            raise ValueError(f"{path}: label maps must be 8-bit grayscale PNG, got mode {im.mode}")
        return np.asarray(im, dtype=np.uint8).copy()
