"""Row-anchor grid decoding: network logits to image-space lane polylines.

The network output is a ``(C + 1, A, L)`` logit tensor: ``C`` gridding cells
plus a trailing background class, for each of ``A`` row anchors and ``L``
lane slots. At each anchor a lane is present when the argmax over all
``C + 1`` entries is a cell; its sub-cell position is the softmax
expectation over the first ``C`` entries.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import List, Optional, Sequence, Tuple

import numpy as np

from lanekeeper.errors import ConfigError, InsufficientPointsError, InvalidInputError
from lanekeeper.kvconfig import as_int, as_int_list, check_keys, dump_kv, load_kv, parse_kv

MODEL_KEYS = ("num_cells", "num_anchors", "num_lanes", "input_width", "input_height", "anchor_rows")
BUILTIN_MODELS = ("tusimple", "culane")


@dataclass(frozen=True)
class ModelConfig:
    num_cells: int
    num_anchors: int
    num_lanes: int
    input_width: int
    input_height: int
    anchor_rows: Tuple[int, ...]
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "anchor_rows", tuple(int(r) for r in self.anchor_rows))
        if self.num_cells < 2 or self.num_anchors < 2 or self.num_lanes < 1:
            raise ConfigError(
                f"need num_cells >= 2, num_anchors >= 2, num_lanes >= 1; got "
                f"{self.num_cells}, {self.num_anchors}, {self.num_lanes}"
            )
        if self.input_width < 1 or self.input_height < 1:
            raise ConfigError("input_width and input_height must be positive")
        rows = self.anchor_rows
        if len(rows) != self.num_anchors:
            raise ConfigError(f"anchor_rows has {len(rows)} entries, num_anchors is {self.num_anchors}")
        if any(b <= a for a, b in zip(rows, rows[1:])):
            raise ConfigError("anchor_rows must be strictly increasing")
        if rows[0] < 0 or rows[-1] >= self.input_height:
            raise ConfigError(f"anchor_rows must lie in [0, {self.input_height})")

    @property
    def grid_shape(self) -> Tuple[int, int, int]:
        return (self.num_cells + 1, self.num_anchors, self.num_lanes)

    def cell_width(self, frame_width: int) -> float:
        """Pixel distance between adjacent cell centers in a frame."""
        return (frame_width - 1) / (self.num_cells - 1)

    def to_kv(self) -> str:
        return dump_kv({k: getattr(self, k) for k in MODEL_KEYS})


def model_config_from_kv(values, name: str = "custom") -> ModelConfig:
    check_keys(values, MODEL_KEYS, origin=name)
    if "anchor_rows" not in values:
        raise ConfigError("missing key 'anchor_rows'")
    return ModelConfig(
        num_cells=as_int(values, "num_cells"),
        num_anchors=as_int(values, "num_anchors"),
        num_lanes=as_int(values, "num_lanes"),
        input_width=as_int(values, "input_width"),
        input_height=as_int(values, "input_height"),
        anchor_rows=as_int_list(values["anchor_rows"], "anchor_rows"),
        name=name,
    )


def load_model_config(name_or_path: str | os.PathLike) -> ModelConfig:
    """Load ``"tusimple"``, ``"culane"`` or a flat key/value file."""
    key = str(name_or_path)
    if key in BUILTIN_MODELS:
        text = resources.files("lanekeeper.data").joinpath(f"{key}.cfg").read_text()
        return model_config_from_kv(parse_kv(text, origin=key), name=key)
    return model_config_from_kv(load_kv(key), name=os.path.basename(key))


@dataclass(frozen=True)
class LaneGrid:
    logits: np.ndarray
    config: ModelConfig

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=np.float64)
        if logits.shape != self.config.grid_shape:
            raise InvalidInputError(
                f"grid shape {logits.shape} does not match config {self.config.grid_shape}"
            )
        if not np.all(np.isfinite(logits)):
            raise InvalidInputError("grid contains non-finite logits")
        logits.setflags(write=False)
        object.__setattr__(self, "logits", logits)


@dataclass(frozen=True)
class LanePolyline:
    lane_index: int
    points: Tuple[Tuple[float, float], ...]
    direction_deg: float

    @classmethod
    def from_points(cls, lane_index: int, points: Sequence[Tuple[float, float]]) -> "LanePolyline":
        pts = tuple((float(x), float(y)) for x, y in points)
        return cls(lane_index, pts, fit_direction(pts))

    @property
    def xs(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def ys(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    def x_at(self, y: float) -> float:
        """Lane x at row ``y``; linear in the end segments outside the span."""
        xs, ys = self.xs, self.ys
        if len(xs) == 1:
            return float(xs[0])
        if y <= ys[0]:
            i, j = 0, 1
        elif y >= ys[-1]:
            i, j = -2, -1
        else:
            return float(np.interp(y, ys, xs))
        return float(xs[i] + (xs[j] - xs[i]) * (y - ys[i]) / (ys[j] - ys[i]))

    def to_json(self) -> dict:
        return {
            "lane_index": self.lane_index,
            "points": [[x, y] for x, y in self.points],
            "direction_deg": self.direction_deg,
        }


def _check_finite(values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        raise InvalidInputError("non-finite logits")


def softmax_expectation(logits) -> Tuple[np.ndarray, float]:
    """Return ``(probs, sum_i i * probs[i])`` for a vector of cell logits."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size < 2:
        raise InvalidInputError(f"need a vector of at least 2 logits, got shape {z.shape}")
    _check_finite(z)
    e = np.exp(z - z.max())
    probs = e / e.sum()
    expectation = float(np.dot(np.arange(z.size), probs))
    return probs, min(max(expectation, 0.0), z.size - 1.0)


def decode_anchor(column, config: ModelConfig, frame_width: int) -> Optional[float]:
    col = np.asarray(column, dtype=np.float64)
    c = config.num_cells
    if col.shape != (c + 1,):
        raise InvalidInputError(f"anchor column must have {c + 1} entries, got {col.shape}")
    _check_finite(col)
    if int(np.argmax(col)) == c:
        return None
    _, expectation = softmax_expectation(col[:c])
    return expectation / (c - 1) * (frame_width - 1)


def decode_grid(grid: LaneGrid, frame_width: int, frame_height: int) -> List[LanePolyline]:
    """Decode every lane slot with at least two present anchors.

    Vectorized over anchors and slots; agrees with per-column
    :func:`decode_anchor` to floating-point rounding.
    """
    if not isinstance(grid, LaneGrid):
        raise InvalidInputError("decode_grid expects a LaneGrid")
    if frame_width < 1 or frame_height < 1:
        raise InvalidInputError("frame dimensions must be positive")
    cfg = grid.config
    c = cfg.num_cells
    logits = grid.logits
    present = np.argmax(logits, axis=0) != c  # (A, L)
    cells = logits[:c]
    e = np.exp(cells - cells.max(axis=0, keepdims=True))
    probs = e / e.sum(axis=0, keepdims=True)
    expectation = np.tensordot(np.arange(c, dtype=np.float64), probs, axes=(0, 0))
    expectation = np.clip(expectation, 0.0, c - 1.0)
    xs = expectation / (c - 1) * (frame_width - 1)
    ys = np.asarray(cfg.anchor_rows, dtype=np.float64) / cfg.input_height * (frame_height - 1)

    lanes = []
    for lane in range(cfg.num_lanes):
        rows = np.flatnonzero(present[:, lane])
        if rows.size < 2:
            continue
        points = tuple((float(xs[a, lane]), float(ys[a])) for a in rows)
        try:
            direction = fit_direction(points)
        except InsufficientPointsError:
            continue
        lanes.append(LanePolyline(lane, points, direction))
    return lanes


def fit_direction(points) -> float:
    """Angle of the total-least-squares line through ``points``, in degrees.

    Measured from the vertical image axis, in ``(-90, 90]``. The sign
    follows ``dx/dy`` in image coordinates: a lane whose x grows with y
    (toward the bottom of the image) has a positive angle.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 2 or np.all(pts == pts[0]):
        raise InsufficientPointsError("direction fit needs at least 2 distinct points")
    centered = pts - pts.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    dx, dy = vt[0]
    if dy < 0 or (dy == 0 and dx < 0):
        dx, dy = -dx, -dy
    angle = math.degrees(math.atan2(dx, dy))
    # atan2 with dy >= 0 lands in [-90, 90]; fold -90 onto +90
    return 90.0 if angle <= -90.0 else angle + 0.0
