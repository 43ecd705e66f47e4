"""Ground-truth lane scenes for the synthetic backend and synthetic source.

Scene files hold one lane per line::

    const  <x_norm> <first_anchor> <last_anchor>
    linear <x0> <x1> <first_anchor> <last_anchor>

``x_norm`` is a fraction of the image width. ``linear`` lanes interpolate
from ``x0`` at the top of the model input (``y_norm = 0``) to ``x1`` at the
bottom (``y_norm = 1``), where ``y_norm = anchor_row / input_height``.
Anchor indices are inclusive; ``last_anchor`` may be ``-1`` for the final
anchor.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from lanekeeper.errors import InvalidSceneError
from lanekeeper.lanecore import ModelConfig

SATURATION = 20.0


@dataclass(frozen=True)
class SceneLane:
    x_of_y: Callable[[float], float]
    first_anchor: int = 0
    last_anchor: int = -1
    description: str = ""

    @classmethod
    def const(cls, x_norm: float, first: int = 0, last: int = -1) -> "SceneLane":
        return cls(lambda _y: x_norm, first, last, f"const {x_norm} {first} {last}")

    @classmethod
    def linear(cls, x0: float, x1: float, first: int = 0, last: int = -1) -> "SceneLane":
        return cls(lambda y: x0 + (x1 - x0) * y, first, last, f"linear {x0} {x1} {first} {last}")

    def span(self, config: ModelConfig) -> range:
        last = self.last_anchor if self.last_anchor >= 0 else config.num_anchors + self.last_anchor
        if not (0 <= self.first_anchor <= last < config.num_anchors):
            raise InvalidSceneError(
                f"anchor span {self.first_anchor}..{self.last_anchor} invalid for "
                f"{config.num_anchors} anchors"
            )
        return range(self.first_anchor, last + 1)


DEFAULT_SCENE = (SceneLane.linear(0.42, 0.2), SceneLane.linear(0.58, 0.8))


def parse_scene(text: str, origin: str = "<scene>") -> List[SceneLane]:
    lanes = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kind, *args = line.split()
        try:
            if kind == "const" and len(args) == 3:
                lanes.append(SceneLane.const(float(args[0]), int(args[1]), int(args[2])))
            elif kind == "linear" and len(args) == 4:
                lanes.append(SceneLane.linear(float(args[0]), float(args[1]), int(args[2]), int(args[3])))
            else:
                raise InvalidSceneError(f"{origin}:{lineno}: cannot parse {raw!r}")
        except ValueError:
            raise InvalidSceneError(f"{origin}:{lineno}: bad number in {raw!r}") from None
    return lanes


def load_scene(path: str | os.PathLike) -> List[SceneLane]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_scene(fh.read(), origin=str(path))
    except OSError as exc:
        raise InvalidSceneError(f"cannot read scene {path}: {exc}") from exc


def anchor_y_norm(config: ModelConfig) -> np.ndarray:
    return np.asarray(config.anchor_rows, dtype=np.float64) / config.input_height


def nearest_cell(x_norm: float, num_cells: int) -> int:
    return int(np.floor(x_norm * (num_cells - 1) + 0.5))


def saturated_logits(config: ModelConfig, lane_positions: Sequence[Sequence[Optional[float]]]) -> np.ndarray:
    """Build a grid from per-slot, per-anchor normalized x (``None`` = absent).

    Present anchors get ``+20`` on the nearest cell; absent ones ``+20`` on
    the background class; every other entry is 0.
    """
    background = config.num_cells
    if len(lane_positions) > config.num_lanes:
        raise InvalidSceneError(
            f"scene has {len(lane_positions)} lanes, model has {config.num_lanes} slots"
        )
    logits = np.zeros(config.grid_shape)
    logits[background] = SATURATION
    for slot, xs in enumerate(lane_positions):
        for anchor, x in enumerate(xs):
            if x is None:
                continue
            logits[background, anchor, slot] = 0.0
            logits[nearest_cell(x, config.num_cells), anchor, slot] = SATURATION
    return logits


def scene_positions(scene: Sequence[SceneLane], config: ModelConfig) -> List[List[Optional[float]]]:
    ys = anchor_y_norm(config)
    positions = []
    for lane in scene:
        span = lane.span(config)
        xs: List[Optional[float]] = [None] * config.num_anchors
        for anchor in span:
            x = float(lane.x_of_y(ys[anchor]))
            if not (0.0 <= x <= 1.0) or not np.isfinite(x):
                raise InvalidSceneError(
                    f"lane '{lane.description}' has x_norm {x:.4f} outside [0, 1] at anchor {anchor}"
                )
            xs[anchor] = x
        positions.append(xs)
    return positions


def render_scene(scene: Sequence[SceneLane], config: ModelConfig, width: int, height: int) -> np.ndarray:
    """Draw the scene as bright lane strokes on a dark road, HxWx3 uint8."""
    image = np.full((height, width, 3), 48, dtype=np.uint8)
    ys = anchor_y_norm(config)
    for lane in scene:
        span = lane.span(config)
        top, bottom = ys[span[0]], ys[span[-1]]
        for row in range(height):
            y_norm = row / height
            if y_norm < top or y_norm > bottom:
                continue
            x = lane.x_of_y(y_norm) * (width - 1)
            c0 = int(round(x)) - 2
            image[row, max(c0, 0) : max(c0 + 5, 0)] = 230
    return image
