"""Kinematic closed-loop validation of the lane-keeping loop, no hardware.

A unicycle robot drives along a corridor (straight or constant-curvature
arc). Each step the corridor boundaries are projected through a flat-ground
pinhole camera onto the model's anchor rows, giving a saturated
:class:`LaneGrid`. That grid runs through the real decode and control code
and the resulting command moves the robot.

World frame: x forward along the corridor start, y to the left, heading
counter-clockwise from +x. Lateral offsets are positive to the right of the
centerline, matching the lateral-error sign.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from lanekeeper.control import DEFAULT_LOOKAHEAD, SteeringCommand, lateral_error, steer
from lanekeeper.errors import ConfigError, InvalidInputError, OutOfCorridorError
from lanekeeper.kvconfig import as_float, check_keys, load_kv
from lanekeeper.lanecore import LaneGrid, ModelConfig, decode_grid, load_model_config
from lanekeeper.scene import saturated_logits

SETTLE_TOLERANCE_M = 0.05
SETTLE_WINDOW_FRAC = 0.2


@dataclass(frozen=True)
class RobotState:
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    t: float = 0.0


def normalize_angle(theta: float) -> float:
    """Wrap to ``(-pi, pi]``."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


def step_unicycle(state: RobotState, cmd: SteeringCommand, dt: float) -> RobotState:
    """Advance one step with exact arc integration."""
    values = (state.x, state.y, state.heading, state.t, cmd.v, cmd.omega, dt)
    if not all(math.isfinite(v) for v in values):
        raise InvalidInputError("non-finite state, command or dt")
    if dt <= 0:
        raise InvalidInputError(f"dt must be positive, got {dt}")
    v, w, th = cmd.v, cmd.omega, state.heading
    if abs(w) < 1e-9:
        x = state.x + v * dt * math.cos(th)
        y = state.y + v * dt * math.sin(th)
        heading = th
    else:
        th1 = th + w * dt
        radius = v / w
        x = state.x + radius * (math.sin(th1) - math.sin(th))
        y = state.y - radius * (math.cos(th1) - math.cos(th))
        heading = th1
    return RobotState(x, y, normalize_angle(heading), state.t + dt)


@dataclass(frozen=True)
class Corridor:
    """Centerline starts at the origin heading +x; ``curvature`` > 0 bends left."""

    half_width: float = 0.5
    length: float = 50.0
    curvature: float = 0.0

    def __post_init__(self):
        if not self.half_width > 0:
            raise ConfigError("corridor half_width must be positive")
        if not self.length > 0:
            raise ConfigError("corridor length must be positive")
        if self.curvature and abs(self.curvature) * self.half_width >= 1.0:
            raise ConfigError("corridor too tight: |curvature| * half_width must be < 1")
        if self.curvature and abs(self.curvature) * self.length > math.pi:
            raise ConfigError("arc corridors are limited to half a turn")

    @property
    def _center(self):
        return np.array([0.0, 1.0 / self.curvature])

    def locate(self, x: float, y: float):
        """Return ``(progress_along_centerline, signed_right_offset)``."""
        k = self.curvature
        if k == 0.0:
            return x, -y
        d = np.array([x, y]) - self._center
        s = math.atan2(k * d[0], -k * d[1]) / k
        offset = math.copysign(1.0, k) * (math.hypot(*d) - abs(1.0 / k))
        return s, offset

    def pose_at(self, s: float, offset: float = 0.0, heading_error: float = 0.0) -> RobotState:
        """Robot state ``offset`` meters right of the centerline at progress ``s``."""
        k = self.curvature
        if k == 0.0:
            return RobotState(s, -offset, normalize_angle(heading_error))
        tangent = k * s
        cx, cy = math.sin(tangent) / k, (1.0 - math.cos(tangent)) / k
        # right normal of the tangent direction
        return RobotState(cx + offset * math.sin(tangent), cy - offset * math.cos(tangent),
                          normalize_angle(tangent + heading_error))

    def check_inside(self, state: RobotState) -> float:
        s, offset = self.locate(state.x, state.y)
        if s < 0 or s > self.length:
            raise OutOfCorridorError(f"robot at progress {s:.3f} m is outside [0, {self.length}]")
        if abs(offset) > self.half_width:
            raise OutOfCorridorError(f"robot offset {offset:+.3f} m exceeds half width {self.half_width}")
        return offset

    def boundary_lateral(self, base: np.ndarray, left_dir: np.ndarray, offset: float) -> Optional[float]:
        """Signed distance along ``left_dir`` from ``base`` to the boundary at ``offset``."""
        k = self.curvature
        if k == 0.0:
            if abs(left_dir[1]) < 1e-12:
                return None
            lat = (-offset - base[1]) / left_dir[1]
        else:
            radius = abs(1.0 / k) + math.copysign(1.0, k) * offset
            rel = base - self._center
            b = float(np.dot(left_dir, rel))
            c = float(np.dot(rel, rel)) - radius * radius
            disc = b * b - c
            if disc < 0:
                return None
            root = math.sqrt(disc)
            lat = min((-b - root, -b + root), key=abs)
        point = base + lat * left_dir
        s, _ = self.locate(*point)
        if s < 0 or s > self.length:
            return None
        return lat


@dataclass(frozen=True)
class Camera:
    """Flat-ground pinhole camera on the robot centerline, square pixels.

    The focal length follows from the horizontal field of view and the
    model input width; the principal point is the input image center.
    """

    height: float = 0.6
    pitch_deg: float = 15.0
    hfov_deg: float = 60.0

    def __post_init__(self):
        if not self.height > 0 or not 0 < self.hfov_deg < 180:
            raise ConfigError("camera height must be > 0 and hfov in (0, 180)")

    def focal(self, width: int) -> float:
        return (width / 2.0) / math.tan(math.radians(self.hfov_deg) / 2.0)

    def row_ground(self, row: float, config: ModelConfig):
        """``(forward_distance, ray_scale)`` for an image row, or ``None`` above the horizon."""
        f = self.focal(config.input_width)
        cy = (config.input_height - 1) / 2.0
        down = (row - cy) / f
        pitch = math.radians(self.pitch_deg)
        denom = math.sin(pitch) + down * math.cos(pitch)
        if denom <= 1e-9:
            return None
        scale = self.height / denom
        return scale * (math.cos(pitch) - down * math.sin(pitch)), scale

    def meters_per_pixel(self, row: float, config: ModelConfig) -> float:
        ground = self.row_ground(row, config)
        if ground is None:
            raise ConfigError("row is above the horizon")
        return ground[1] / self.focal(config.input_width)


def synthesize_grid(state: RobotState, corridor: Corridor, camera: Camera, config: ModelConfig) -> LaneGrid:
    """Project the corridor boundaries onto the anchor rows as a saturated grid.

    Lane slot 0 carries the left boundary and slot 1 the right one.
    """
    corridor.check_inside(state)
    pos = np.array([state.x, state.y])
    forward = np.array([math.cos(state.heading), math.sin(state.heading)])
    left = np.array([-forward[1], forward[0]])
    f = camera.focal(config.input_width)
    cx = (config.input_width - 1) / 2.0
    slots = []
    for boundary in (-corridor.half_width, corridor.half_width):
        xs: List[Optional[float]] = []
        for row in config.anchor_rows:
            ground = camera.row_ground(row, config)
            x_norm = None
            if ground is not None:
                distance, scale = ground
                lat = corridor.boundary_lateral(pos + distance * forward, left, boundary)
                if lat is not None:
                    u = cx - f * lat / scale
                    if 0.0 <= u <= config.input_width - 1:
                        x_norm = u / (config.input_width - 1)
            xs.append(x_norm)
        slots.append(xs)
    return LaneGrid(saturated_logits(config, slots), config)


@dataclass(frozen=True)
class ControllerParams:
    gain: float = 1.0
    v: float = 0.5
    track: float = 0.5
    lookahead_frac: float = DEFAULT_LOOKAHEAD


@dataclass
class ClosedLoopResult:
    trajectory: List[dict] = field(default_factory=list)
    max_abs_offset: float = 0.0
    final_offset: float = 0.0
    settled: bool = False
    failed: bool = False
    failure: str = ""
    blind_steps: int = 0

    def summary(self) -> dict:
        return {
            "max_abs_offset_m": self.max_abs_offset,
            "final_offset_m": self.final_offset,
            "settled": self.settled,
            "failed": self.failed,
            "failure": self.failure,
            "blind_steps": self.blind_steps,
            "steps": max(len(self.trajectory) - 1, 0),
        }

    @property
    def times(self) -> np.ndarray:
        return np.array([row["t"] for row in self.trajectory])

    @property
    def offsets(self) -> np.ndarray:
        return np.array([row["offset"] for row in self.trajectory])


def run_closed_loop(
    corridor: Corridor,
    initial: RobotState,
    params: ControllerParams,
    duration: float,
    dt: float,
    camera: Optional[Camera] = None,
    config: Optional[ModelConfig] = None,
) -> ClosedLoopResult:
    """Iterate synthesize -> decode -> lateral error -> steer -> integrate.

    Leaving the corridor ends the run as a failed result, never an exception.
    """
    if not dt > 0 or duration < dt:
        raise ConfigError(f"need dt > 0 and duration >= dt; got dt={dt}, duration={duration}")
    camera = camera or Camera()
    config = config or load_model_config("tusimple")
    width, height = config.input_width, config.input_height
    steps = int(round(duration / dt))
    result = ClosedLoopResult()
    state = initial
    try:
        offset = corridor.check_inside(state)
    except OutOfCorridorError as exc:
        result.failed, result.failure = True, str(exc)
        return result
    for i in range(steps + 1):
        try:
            grid = synthesize_grid(state, corridor, camera, config)
        except OutOfCorridorError as exc:
            result.failed, result.failure = True, str(exc)
            break
        lanes = decode_grid(grid, width, height)
        error = lateral_error(lanes, width, height, params.lookahead_frac)
        cmd = steer(error, params.gain, params.v, params.track)
        result.blind_steps += cmd.blind
        _, offset = corridor.locate(state.x, state.y)
        result.trajectory.append({
            "t": state.t, "x": state.x, "y": state.y, "heading": state.heading,
            "offset": offset, "omega": cmd.omega,
        })
        if i == steps:
            break
        state = step_unicycle(state, cmd, dt)
    offsets = result.offsets
    if len(offsets):
        result.max_abs_offset = float(np.max(np.abs(offsets)))
        result.final_offset = float(offsets[-1])
    if not result.failed and len(offsets):
        window = result.times >= (1.0 - SETTLE_WINDOW_FRAC) * duration - 1e-9
        result.settled = bool(np.all(np.abs(offsets[window]) < SETTLE_TOLERANCE_M))
    return result


def decode_quantization_m(camera: Camera, config: ModelConfig, lookahead_frac: float = DEFAULT_LOOKAHEAD) -> float:
    """One gridding cell, in meters on the ground, at the lookahead row."""
    row = lookahead_frac * (config.input_height - 1)
    return config.cell_width(config.input_width) * camera.meters_per_pixel(row, config)


def write_trajectory_csv(path, result: ClosedLoopResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["t", "x", "y", "heading", "offset", "omega"])
        writer.writeheader()
        for row in result.trajectory:
            writer.writerow({k: repr(float(v)) for k, v in row.items()})


CORRIDOR_KEYS = ("half_width", "length", "curvature")
CAMERA_KEYS = ("height", "pitch_deg", "hfov_deg")


def load_corridor(path) -> Corridor:
    values = load_kv(path)
    check_keys(values, CORRIDOR_KEYS, origin=str(path))
    return Corridor(**{k: as_float(v, k) for k, v in values.items()})


def load_camera(path) -> Camera:
    values = load_kv(path)
    check_keys(values, CAMERA_KEYS, origin=str(path))
    return Camera(**{k: as_float(v, k) for k, v in values.items()})


def corridor_kv(corridor: Corridor) -> dict:
    return asdict(corridor)
