"""Frame sources and the freshness machinery between acquisition and inference.

The camera side produces faster than inference consumes. Instead of a
queue (which ages every frame it holds), frames pass through a
:class:`LatestMailbox` of capacity one: a new frame evicts the unconsumed
one, so the consumer always sees the newest image. A :class:`Governor`
independently paces consumption to a target rate.
"""

from __future__ import annotations

import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from lanekeeper import ppm
from lanekeeper.errors import ConfigError, LaneKeeperError, OrderingError, SourceOpenError, Y4MError
from lanekeeper.lanecore import load_model_config
from lanekeeper.scene import DEFAULT_SCENE, load_scene, render_scene
from lanekeeper.y4m import Y4MReader

log = logging.getLogger(__name__)

_NUMBERED = re.compile(r"^(?P<stem>.*?)(?P<num>\d+)\.(?P<ext>ppm|png|jpe?g|bmp)$", re.IGNORECASE)


@dataclass(frozen=True)
class FrameBuffer:
    pixels: np.ndarray  # HxWx3 uint8
    seq: int
    captured_at: float = field(default_factory=time.monotonic)
    frame_id: str = ""

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise LaneKeeperError(f"frame must be HxWx3 uint8, got {px.shape} {px.dtype}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise LaneKeeperError("frame must be at least 1x1")
        if not self.frame_id:
            object.__setattr__(self, "frame_id", str(self.seq))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


class LatestMailbox:
    """Single-slot, latest-value handoff between one producer and one consumer.

    ``put`` never blocks and replaces any frame the consumer has not taken
    yet; ``take`` never blocks and empties the slot.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._slot: Optional[FrameBuffer] = None
        self._last_seq: Optional[int] = None
        self.puts = 0
        self.takes = 0
        self.dropped = 0
        self.last_staleness_ms: Optional[float] = None
        self.max_staleness_ms = 0.0

    def put(self, frame: FrameBuffer) -> bool:
        with self._lock:
            if self._last_seq is not None and frame.seq <= self._last_seq:
                raise OrderingError(f"frame seq {frame.seq} not after {self._last_seq}")
            self._last_seq = frame.seq
            replaced = self._slot is not None
            self._slot = frame
            self.puts += 1
            if replaced:
                self.dropped += 1
            return replaced

    def take(self) -> Optional[FrameBuffer]:
        with self._lock:
            frame, self._slot = self._slot, None
            if frame is None:
                return None
            self.takes += 1
            staleness = (time.monotonic() - frame.captured_at) * 1000.0
            self.last_staleness_ms = staleness
            self.max_staleness_ms = max(self.max_staleness_ms, staleness)
            return frame

    @property
    def occupied(self) -> int:
        with self._lock:
            return 0 if self._slot is None else 1

    def __len__(self) -> int:
        return self.occupied


def mailbox_put(mailbox: LatestMailbox, frame: FrameBuffer) -> bool:
    return mailbox.put(frame)


def mailbox_take(mailbox: LatestMailbox) -> Optional[FrameBuffer]:
    return mailbox.take()


class Governor:
    """Rate limiter: consecutive ticks are at least ``1 / target_fps`` apart.

    ``target_fps`` of ``None`` or ``0`` disables pacing.
    """

    def __init__(self, target_fps: Optional[float] = None, clock=time.monotonic, sleep=time.sleep):
        if target_fps is not None and target_fps < 0:
            raise ConfigError(f"target fps must be >= 0, got {target_fps}")
        self.target_fps = target_fps or None
        self.period = 1.0 / self.target_fps if self.target_fps else 0.0
        self._clock = clock
        self._sleep = sleep
        self._last: Optional[float] = None

    @property
    def enabled(self) -> bool:
        return self.target_fps is not None

    def tick(self) -> float:
        now = self._clock()
        if self.enabled and self._last is not None:
            due = self._last + self.period
            while now < due:
                self._sleep(due - now)
                now = self._clock()
        self._last = now
        return now


def pace(governor: Governor) -> float:
    return governor.tick()


class FrameSource:
    """Iterator of :class:`FrameBuffer` with strictly increasing ``seq``."""

    nominal_fps: Optional[float] = None

    def __iter__(self) -> Iterator[FrameBuffer]:
        raise NotImplementedError

    def close(self) -> None:
        pass


class DirectorySource(FrameSource):
    def __init__(self, path: str):
        if not os.path.isdir(path):
            raise SourceOpenError(f"image directory not found: {path}")
        entries = []
        for name in os.listdir(path):
            m = _NUMBERED.match(name)
            if m:
                entries.append((int(m.group("num")), name))
        if not entries:
            raise SourceOpenError(f"no numbered image files in {path}")
        entries.sort()
        self.path = path
        self.files = [os.path.join(path, name) for _, name in entries]

    def __len__(self):
        return len(self.files)

    def __iter__(self) -> Iterator[FrameBuffer]:
        for seq, file in enumerate(self.files):
            yield FrameBuffer(_load_image(file), seq, time.monotonic(), os.path.splitext(os.path.basename(file))[0])


def _load_image(path: str) -> np.ndarray:
    if path.lower().endswith(".ppm"):
        try:
            return ppm.read_ppm(path)
        except (OSError, LaneKeeperError) as exc:
            raise SourceOpenError(f"cannot read {path}: {exc}") from exc
    try:
        from PIL import Image
    except ImportError:
        raise SourceOpenError(f"{path}: non-PPM images need Pillow installed") from None
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except OSError as exc:
        raise SourceOpenError(f"cannot read {path}: {exc}") from exc


class Y4MSource(FrameSource):
    def __init__(self, path: str):
        try:
            self._reader = Y4MReader.open(path)
        except OSError as exc:
            raise SourceOpenError(f"cannot open {path}: {exc}") from exc
        except Y4MError as exc:
            raise SourceOpenError(f"{path}: {exc}") from exc
        self.path = path
        self.header = self._reader.header
        self.nominal_fps = self.header.fps

    def __iter__(self) -> Iterator[FrameBuffer]:
        for index, rgb in self._reader:
            yield FrameBuffer(rgb, index, time.monotonic(), f"frame_{index:06d}")

    def close(self) -> None:
        self._reader.close()


class SyntheticSource(FrameSource):
    """Renders a lane scene once and yields copies of it.

    Spec string: ``synthetic[:<scene-file>][,frames=N][,width=W][,height=H]``.
    Without ``frames`` the source is endless.
    """

    def __init__(self, scene=None, config=None, frames: Optional[int] = None,
                 width: Optional[int] = None, height: Optional[int] = None):
        self.config = config or load_model_config("tusimple")
        self.scene = list(DEFAULT_SCENE if scene is None else scene)
        self.frames = frames
        w = width or self.config.input_width
        h = height or self.config.input_height
        self.image = render_scene(self.scene, self.config, w, h)
        self.image.setflags(write=False)

    def __iter__(self) -> Iterator[FrameBuffer]:
        seq = 0
        while self.frames is None or seq < self.frames:
            yield FrameBuffer(self.image, seq, time.monotonic())
            seq += 1


def _split_options(rest: str):
    path, options = None, {}
    for item in filter(None, rest.split(",")):
        if "=" in item:
            key, _, value = item.partition("=")
            options[key.strip()] = value.strip()
        elif path is None:
            path = item
        else:
            raise ConfigError(f"unexpected item {item!r} in spec")
    return path, options


def open_source(spec: str, config=None) -> FrameSource:
    """Open a directory of numbered images, a ``.y4m`` file or ``synthetic:...``."""
    if spec == "synthetic" or spec.startswith("synthetic:"):
        path, options = _split_options(spec.partition(":")[2])
        unknown = set(options) - {"frames", "width", "height"}
        if unknown:
            raise SourceOpenError(f"unknown synthetic source option(s): {', '.join(sorted(unknown))}")
        try:
            scene = load_scene(path) if path else None
            ints = {k: int(v) for k, v in options.items()}
        except (LaneKeeperError, ValueError) as exc:
            raise SourceOpenError(f"bad synthetic source spec {spec!r}: {exc}") from exc
        return SyntheticSource(scene, config, **ints)
    if os.path.isdir(spec):
        return DirectorySource(spec)
    if not os.path.exists(spec):
        raise SourceOpenError(f"source not found: {spec}")
    with open(spec, "rb") as fh:
        magic = fh.read(9)
    if magic == b"YUV4MPEG2":
        return Y4MSource(spec)
    raise SourceOpenError(f"{spec}: not a directory, Y4M stream or synthetic spec")
