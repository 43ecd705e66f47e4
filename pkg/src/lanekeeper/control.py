"""Lane-keeping: decoded lanes to a differential-drive steering command.

Sign conventions: a positive lateral error means the robot sits right of
the lane center; a positive ``omega`` turns the robot left
(counter-clockwise). A proportional law ``omega = gain * error`` therefore
steers back toward the center.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

from lanekeeper.errors import ConfigError
from lanekeeper.lanecore import LanePolyline

DEFAULT_LOOKAHEAD = 0.8


@dataclass(frozen=True)
class LateralError:
    value: float
    valid: bool
    lane_center: Optional[float] = None
    lookahead_y: Optional[float] = None


@dataclass(frozen=True)
class SteeringCommand:
    omega: float
    v: float
    v_left: float
    v_right: float
    blind: bool = False

    def to_json(self) -> dict:
        return asdict(self)


def lateral_error(
    lanes: Sequence[LanePolyline],
    frame_width: int,
    frame_height: int,
    lookahead_frac: float = DEFAULT_LOOKAHEAD,
) -> LateralError:
    """Offset of the image center from the ego-lane center at the lookahead row.

    The ego lane is bounded by the nearest lane left of (or on) the image
    centerline and the nearest lane right of it. Lanes are evaluated at the
    lookahead row, extrapolating their end segments when the row lies
    outside the detected span.
    """
    if not 0.0 < lookahead_frac < 1.0:
        raise ConfigError(f"lookahead_frac must be in (0, 1), got {lookahead_frac}")
    y_star = lookahead_frac * (frame_height - 1)
    half = frame_width / 2.0
    left = right = None
    for lane in lanes:
        if len(lane.points) < 2:
            continue
        x = lane.x_at(y_star)
        if x <= half:
            left = x if left is None else max(left, x)
        else:
            right = x if right is None else min(right, x)
    if left is None or right is None:
        return LateralError(0.0, False, None, y_star)
    center = (left + right) / 2.0
    value = (half - center) / half
    return LateralError(min(max(value, -1.0), 1.0), True, center, y_star)


def steer(error: LateralError, gain: float = 1.0, v: float = 0.5, track: float = 0.5) -> SteeringCommand:
    if gain < 0 or v < 0 or track <= 0:
        raise ConfigError(f"need gain >= 0, v >= 0, track > 0; got {gain}, {v}, {track}")
    if not error.valid:
        return SteeringCommand(0.0, v, v, v, blind=True)
    omega = gain * min(max(error.value, -1.0), 1.0)
    half_track = track / 2.0
    return SteeringCommand(omega, v, v - omega * half_track, v + omega * half_track)


class LatchingSteer:
    """Optional mode: repeat the last valid command while the lanes are lost."""

    def __init__(self, gain: float = 1.0, v: float = 0.5, track: float = 0.5):
        self.gain, self.v, self.track = gain, v, track
        self._last: Optional[SteeringCommand] = None

    def __call__(self, error: LateralError) -> SteeringCommand:
        cmd = steer(error, self.gain, self.v, self.track)
        if cmd.blind and self._last is not None:
            return SteeringCommand(self._last.omega, self._last.v, self._last.v_left, self._last.v_right, blind=True)
        if not cmd.blind:
            self._last = cmd
        return cmd
