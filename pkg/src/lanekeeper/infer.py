"""Inference backends: a frame tensor goes in, a :class:`LaneGrid` comes out.

Two peers implement :class:`Backend`: :class:`OnnxBackend` wraps an
ONNX-format model through onnxruntime (optional dependency), and
:class:`SyntheticBackend` emits a saturated grid for a ground-truth scene
after an optional artificial delay. Everything downstream runs without any
ML runtime installed.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from lanekeeper.capture import FrameBuffer
from lanekeeper.errors import BackendError, ConfigError, InvalidInputError, LaneKeeperError
from lanekeeper.lanecore import LaneGrid, ModelConfig
from lanekeeper.scene import DEFAULT_SCENE, SceneLane, load_scene, saturated_logits, scene_positions

log = logging.getLogger(__name__)

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406])
IMAGENET_STD = np.array([0.229, 0.224, 0.225])


@dataclass(frozen=True)
class FrameTensor:
    data: np.ndarray  # 3 x H x W float32, RGB
    source_seq: int


@dataclass(frozen=True)
class TimedInference:
    grid: LaneGrid
    latency: float  # ms


def resize_nearest(pixels: np.ndarray, width: int, height: int) -> np.ndarray:
    h, w = pixels.shape[:2]
    if (w, h) == (width, height):
        return pixels
    rows = (np.arange(height) * h) // height
    cols = (np.arange(width) * w) // width
    return pixels[rows[:, None], cols[None, :]]


def preprocess(frame: FrameBuffer, config: ModelConfig) -> FrameTensor:
    px = frame.pixels
    if px.size == 0:
        raise InvalidInputError("empty frame")
    resized = resize_nearest(px, config.input_width, config.input_height)
    scaled = resized.astype(np.float32) / np.float32(255.0)
    norm = (scaled - IMAGENET_MEAN.astype(np.float32)) / IMAGENET_STD.astype(np.float32)
    return FrameTensor(np.ascontiguousarray(norm.transpose(2, 0, 1)), frame.seq)


def denormalize(tensor: FrameTensor) -> np.ndarray:
    """Back to an HxWx3 uint8 image; exact inverse of :func:`preprocess` up to rounding."""
    chw = tensor.data.astype(np.float64)
    hwc = chw.transpose(1, 2, 0) * IMAGENET_STD + IMAGENET_MEAN
    return np.clip(np.round(hwc * 255.0), 0, 255).astype(np.uint8)


class Backend:
    """Tensor in, grid out. One instance is used by one thread at a time."""

    name = "backend"

    def __init__(self, config: ModelConfig):
        self.config = config

    def infer(self, data: np.ndarray) -> LaneGrid:
        raise NotImplementedError

    def close(self) -> None:
        pass


class SyntheticBackend(Backend):
    def __init__(self, scene: Sequence[SceneLane], config: ModelConfig, delay_ms: float = 0.0):
        super().__init__(config)
        if delay_ms < 0:
            raise ConfigError(f"delay must be >= 0 ms, got {delay_ms}")
        self.scene = tuple(scene)
        self.delay_ms = float(delay_ms)
        self.grid = LaneGrid(saturated_logits(config, scene_positions(self.scene, config)), config)
        self.name = f"synthetic(delay={self.delay_ms:g}ms)"

    def infer(self, data: np.ndarray) -> LaneGrid:
        if self.delay_ms:
            time.sleep(self.delay_ms / 1000.0)
        return self.grid


def make_synthetic_backend(scene: Sequence[SceneLane], config: ModelConfig, delay: float = 0.0) -> SyntheticBackend:
    return SyntheticBackend(scene, config, delay)


class OnnxBackend(Backend):
    def __init__(self, path: str, config: ModelConfig, providers: Optional[Sequence[str]] = None):
        super().__init__(config)
        try:
            import onnxruntime as ort
        except ImportError:
            raise BackendError("ONNX backend needs onnxruntime (pip install 'artifact[onnx]')") from None
        if not os.path.isfile(path):
            raise BackendError(f"model file not found: {path}")
        try:
            self.session = ort.InferenceSession(path, providers=list(providers or ["CPUExecutionProvider"]))
        except Exception as exc:
            raise BackendError(f"cannot load {path}: {exc}") from exc
        self.input_name = self.session.get_inputs()[0].name
        self.name = f"onnx({os.path.basename(path)})"

    def infer(self, data: np.ndarray) -> LaneGrid:
        out = self.session.run(None, {self.input_name: data[None].astype(np.float32)})[0]
        out = np.asarray(out)
        if out.ndim == 4 and out.shape[0] == 1:
            out = out[0]
        if out.shape != self.config.grid_shape:
            raise BackendError(f"model output {out.shape} does not match config {self.config.grid_shape}")
        return LaneGrid(out, self.config)


def infer_timed(backend: Backend, tensor: FrameTensor) -> TimedInference:
    cfg = backend.config
    expected = (3, cfg.input_height, cfg.input_width)
    if tensor.data.shape != expected:
        raise InvalidInputError(f"tensor shape {tensor.data.shape}, backend expects {expected}")
    start = time.perf_counter()
    try:
        grid = backend.infer(tensor.data)
    except LaneKeeperError:
        raise
    except Exception as exc:
        raise BackendError(f"{backend.name} failed: {exc}") from exc
    latency = (time.perf_counter() - start) * 1000.0
    return TimedInference(grid, latency)


def open_backend(spec: str, config: ModelConfig) -> Backend:
    """Build a backend from ``onnx:<path>``, ``synthetic:<scene-file>``,
    ``synthetic:delay=<ms>`` or ``synthetic:<scene-file>,delay=<ms>``.
    """
    kind, _, rest = spec.partition(":")
    if kind == "onnx":
        if not rest:
            raise ConfigError("onnx backend needs a model path: onnx:<path>")
        return OnnxBackend(rest, config)
    if kind == "synthetic":
        scene_path, delay = None, 0.0
        for item in filter(None, rest.split(",")):
            key, eq, value = item.partition("=")
            if not eq:
                scene_path = item
            elif key == "delay":
                try:
                    delay = float(value)
                except ValueError:
                    raise ConfigError(f"bad delay {value!r} in backend spec") from None
            elif key == "scene":
                scene_path = value
            else:
                raise ConfigError(f"unknown synthetic backend option {key!r}")
        scene = load_scene(scene_path) if scene_path else DEFAULT_SCENE
        return SyntheticBackend(scene, config, delay)
    raise ConfigError(f"unknown backend spec {spec!r}; expected onnx:<path> or synthetic:...")
