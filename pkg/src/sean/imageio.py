"""Binary PPM (P6) images and PGM (P5) label maps.

Images live in [-1, 1] inside the library and are quantized to 8 bits only
when written. Masks are stored as raw label bytes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    pass


def quantize(image: np.ndarray) -> np.ndarray:
    """[-1, 1] floats to uint8 by ``round((x + 1) * 127.5)``, clipped."""
    q = np.rint((np.asarray(image, dtype=np.float64) + 1.0) * 127.5)
    return np.clip(q, 0, 255).astype(np.uint8)


def dequantize(q: np.ndarray) -> np.ndarray:
    return np.asarray(q, dtype=np.float64) / 127.5 - 1.0


def _read_header(data: bytes, magic: bytes) -> tuple[int, int, int, int]:
    """Returns ``(width, height, maxval, offset of pixel data)``."""
    if data[:2] != magic:
        raise ImageFormatError(f"expected {magic.decode()} header, found {data[:2]!r}")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ImageFormatError("malformed header")
        fields.append(int(data[start:pos]))
    width, height, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"only 8-bit files are supported (maxval {maxval})")
    return width, height, maxval, pos + 1


def write_ppm(path, image: np.ndarray) -> Path:
    """Write a ``[3, H, W]`` image in [-1, 1] as binary PPM."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ImageFormatError(f"PPM needs a [3,H,W] image, got {image.shape}")
    _, h, w = image.shape
    path = Path(path)
    path.write_bytes(f"P6\n{w} {h}\n255\n".encode() + quantize(image).transpose(1, 2, 0).tobytes())
    return path


def read_ppm_bytes(path) -> np.ndarray:
    """Raw ``[3, H, W]`` uint8 pixels."""
    data = Path(path).read_bytes()
    w, h, _, off = _read_header(data, b"P6")
    if len(data) - off < 3 * w * h:
        raise ImageFormatError(f"{path}: truncated pixel data")
    return np.frombuffer(data, np.uint8, 3 * w * h, off).reshape(h, w, 3).transpose(2, 0, 1).copy()


def read_ppm(path) -> np.ndarray:
    """``[3, H, W]`` float image in [-1, 1]."""
    return dequantize(read_ppm_bytes(path))


def write_pgm(path, labels: np.ndarray) -> Path:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ImageFormatError(f"PGM needs an [H,W] label map, got {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise ImageFormatError("labels must fit in one byte")
    h, w = labels.shape
    path = Path(path)
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode() + labels.astype(np.uint8).tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    """``[H, W]`` int64 label map."""
    data = Path(path).read_bytes()
    w, h, _, off = _read_header(data, b"P5")
    if len(data) - off < w * h:
        raise ImageFormatError(f"{path}: truncated pixel data")
    return np.frombuffer(data, np.uint8, w * h, off).reshape(h, w).astype(np.int64)
