"""YUV4MPEG2 stream reading and writing.

Only 8-bit 4:2:0 (any siting variant) and 4:4:4 chroma are accepted.
Conversion to RGB uses BT.601 full-range coefficients; 4:2:0 chroma is
upsampled by sample replication.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import BinaryIO, Iterator, Tuple

import numpy as np

from lanekeeper.errors import Y4MError

MAGIC = b"YUV4MPEG2"
_CHROMA_420 = ("420", "420jpeg", "420paldv", "420mpeg2")
_CHROMA_444 = ("444",)


@dataclass(frozen=True)
class Y4MHeader:
    width: int
    height: int
    fps_num: int = 30
    fps_den: int = 1
    chroma: str = "420jpeg"

    @property
    def subsampled(self) -> bool:
        return self.chroma in _CHROMA_420

    @property
    def chroma_shape(self) -> Tuple[int, int]:
        if self.subsampled:
            return ((self.height + 1) // 2, (self.width + 1) // 2)
        return (self.height, self.width)

    @property
    def frame_size(self) -> int:
        ch, cw = self.chroma_shape
        return self.width * self.height + 2 * ch * cw

    @property
    def fps(self) -> float:
        return self.fps_num / self.fps_den

    def encode(self) -> bytes:
        return b"%s W%d H%d F%d:%d Ip A1:1 C%s\n" % (
            MAGIC, self.width, self.height, self.fps_num, self.fps_den, self.chroma.encode()
        )


def parse_header(line: bytes) -> Y4MHeader:
    fields = line.rstrip(b"\n").split(b" ")
    if fields[0] != MAGIC:
        raise Y4MError(f"bad magic {fields[0][:16]!r}", 0)
    width = height = None
    fps_num, fps_den, chroma = 30, 1, "420jpeg"
    offset = len(MAGIC) + 1
    for tag in fields[1:]:
        if not tag:
            offset += 1
            continue
        key, value = chr(tag[0]), tag[1:].decode("ascii", "replace")
        try:
            if key == "W":
                width = int(value)
            elif key == "H":
                height = int(value)
            elif key == "F":
                num, den = value.split(":")
                fps_num, fps_den = int(num), int(den)
            elif key == "C":
                chroma = value
        except ValueError:
            raise Y4MError(f"malformed header tag {tag!r}", offset) from None
        offset += len(tag) + 1
    if width is None or height is None or width < 1 or height < 1:
        raise Y4MError("header lacks positive W and H", 0)
    if chroma not in _CHROMA_420 + _CHROMA_444:
        raise Y4MError(f"unsupported chroma C{chroma}; need C420* or C444", 0)
    if fps_num <= 0 or fps_den <= 0:
        raise Y4MError("frame rate must be positive", 0)
    return Y4MHeader(width, height, fps_num, fps_den, chroma)


def yuv_to_rgb(y: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """BT.601 full-range YCbCr planes (same shape) to an HxWx3 uint8 image."""
    yf = y.astype(np.float64)
    cb = u.astype(np.float64) - 128.0
    cr = v.astype(np.float64) - 128.0
    r = yf + 1.402 * cr
    g = yf - 0.344136 * cb - 0.714136 * cr
    b = yf + 1.772 * cb
    rgb = np.stack([r, g, b], axis=-1)
    return np.clip(np.floor(rgb + 0.5), 0, 255).astype(np.uint8)


def rgb_to_yuv(rgb: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of :func:`yuv_to_rgb` up to rounding, full resolution planes."""
    f = rgb.astype(np.float64)
    r, g, b = f[..., 0], f[..., 1], f[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    u = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    v = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b

    def q(p):
        return np.clip(np.floor(p + 0.5), 0, 255).astype(np.uint8)

    return q(y), q(u), q(v)


class Y4MReader:
    """Sequential frame reader over an open binary stream.

    Iterating yields ``(index, rgb)``. A truncated frame or bad frame
    marker raises :class:`Y4MError` carrying the byte offset; frames read
    before the failure have already been yielded.
    """

    def __init__(self, stream: BinaryIO):
        self._fh = stream
        line = stream.readline(4096)
        if not line.endswith(b"\n"):
            raise Y4MError("unterminated stream header", len(line))
        self.header = parse_header(line)
        self._offset = len(line)
        self._index = 0

    @classmethod
    def open(cls, path: str | os.PathLike) -> "Y4MReader":
        fh = open(path, "rb")
        try:
            return cls(fh)
        except Exception:
            fh.close()
            raise

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def read_planes(self):
        """Next frame as raw ``(y, u, v)`` planes, or ``None`` at clean EOF."""
        start = self._offset
        marker = self._fh.readline(1024)
        if not marker:
            return None
        if not marker.startswith(b"FRAME") or not marker.endswith(b"\n"):
            raise Y4MError(f"expected FRAME marker for frame {self._index}", start)
        hdr = self.header
        raw = self._fh.read(hdr.frame_size)
        if len(raw) != hdr.frame_size:
            raise Y4MError(
                f"frame {self._index} truncated: {len(raw)} of {hdr.frame_size} bytes",
                start + len(marker) + len(raw),
            )
        self._offset = start + len(marker) + len(raw)
        self._index += 1
        luma = hdr.width * hdr.height
        ch, cw = hdr.chroma_shape
        csize = ch * cw
        buf = np.frombuffer(raw, dtype=np.uint8)
        y = buf[:luma].reshape(hdr.height, hdr.width)
        u = buf[luma : luma + csize].reshape(ch, cw)
        v = buf[luma + csize :].reshape(ch, cw)
        return y, u, v

    def read_rgb(self):
        planes = self.read_planes()
        if planes is None:
            return None
        y, u, v = planes
        if self.header.subsampled:
            h, w = y.shape
            u = u.repeat(2, axis=0).repeat(2, axis=1)[:h, :w]
            v = v.repeat(2, axis=0).repeat(2, axis=1)[:h, :w]
        return yuv_to_rgb(y, u, v)

    def __iter__(self) -> Iterator[Tuple[int, np.ndarray]]:
        while True:
            index = self._index
            rgb = self.read_rgb()
            if rgb is None:
                return
            yield index, rgb


def write_y4m(path: str | os.PathLike, frames, header: Y4MHeader) -> None:
    """Write ``frames`` given as ``(y, u, v)`` plane tuples at native chroma size."""
    ch, cw = header.chroma_shape
    with open(path, "wb") as fh:
        fh.write(header.encode())
        for y, u, v in frames:
            if y.shape != (header.height, header.width) or u.shape != (ch, cw) or v.shape != (ch, cw):
                raise ValueError("plane shapes do not match the header")
            fh.write(b"FRAME\n")
            for plane in (y, u, v):
                fh.write(np.ascontiguousarray(plane, dtype=np.uint8).tobytes())
