"""Binary PPM (P6) reading and writing, plus the tiny raster drawing used
for lane overlays. No imaging dependency on purpose: outputs are bit-exact.
"""

from __future__ import annotations

import os

import numpy as np

from lanekeeper.errors import InvalidInputError


def _tokens(data: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise InvalidInputError("truncated PPM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, offset = _tokens(data, 4)
    if tokens[0] != b"P6":
        raise InvalidInputError(f"{path}: not a binary PPM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise InvalidInputError(f"{path}: only 8-bit PPM supported (maxval {maxval})")
    size = width * height * 3
    raster = data[offset : offset + size]
    if len(raster) != size:
        raise InvalidInputError(f"{path}: raster truncated, {len(raster)} of {size} bytes")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3).copy()


def encode_ppm(image: np.ndarray) -> bytes:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise InvalidInputError(f"expected HxWx3 uint8 image, got {img.shape} {img.dtype}")
    height, width = img.shape[:2]
    return b"P6\n%d %d\n255\n" % (width, height) + np.ascontiguousarray(img).tobytes()


def write_ppm(path: str | os.PathLike, image: np.ndarray) -> None:
    payload = encode_ppm(image)
    with open(path, "wb") as fh:
        fh.write(payload)


def draw_disc(image: np.ndarray, x: float, y: float, radius: int, color) -> None:
    h, w = image.shape[:2]
    cx, cy = int(round(x)), int(round(y))
    y0, y1 = max(cy - radius, 0), min(cy + radius + 1, h)
    x0, x1 = max(cx - radius, 0), min(cx + radius + 1, w)
    if y0 >= y1 or x0 >= x1:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius
    image[y0:y1, x0:x1][mask] = color


def draw_hline(image: np.ndarray, y: float, color, x0: int = 0, x1: int | None = None) -> None:
    h, w = image.shape[:2]
    row = int(round(y))
    if 0 <= row < h:
        image[row, max(x0, 0) : (w if x1 is None else min(x1, w))] = color


def draw_vline(image: np.ndarray, x: float, color, y0: int = 0, y1: int | None = None) -> None:
    h, w = image.shape[:2]
    col = int(round(x))
    if 0 <= col < w:
        image[max(y0, 0) : (h if y1 is None else min(y1, h)), col] = color
