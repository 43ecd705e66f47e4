"""Merged run configuration: flat key/value file plus overrides.

Every key belongs to one module; values are validated by building that
module's objects (:meth:`RunConfig.model_config`, :meth:`RunConfig.corridor`
and so on), so a bad value fails with the owner's error message.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from typing import Dict, Mapping, Optional

from lanekeeper.control import DEFAULT_LOOKAHEAD
from lanekeeper.errors import ConfigError
from lanekeeper.evaluate import DEFAULT_DEVIATION_DEG
from lanekeeper.kvconfig import as_float, load_kv
from lanekeeper.lanecore import load_model_config
from lanekeeper.sim import Camera, ControllerParams, Corridor

ENV_CONFIG = "LANEKEEPER_CONFIG"


@dataclass(frozen=True)
class RunConfig:
    # model
    model: str = "tusimple"
    # controller
    gain: float = 1.0
    speed: float = 0.5
    track: float = 0.5
    lookahead_frac: float = DEFAULT_LOOKAHEAD
    # pipeline
    governor_fps: float = 0.0
    source_fps: float = 30.0
    # eval
    deviation_threshold: float = DEFAULT_DEVIATION_DEG
    # sim
    camera_height: float = 0.6
    camera_pitch_deg: float = 15.0
    camera_hfov_deg: float = 60.0
    corridor_half_width: float = 0.5
    corridor_length: float = 50.0
    corridor_curvature: float = 0.0
    dt: float = 0.02
    duration: float = 10.0
    offset: float = 0.0
    heading_error_deg: float = 0.0

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]

    def merged(self, values: Mapping[str, object]) -> "RunConfig":
        changes = {}
        types = {f.name: f.type for f in fields(self)}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}; known keys: {', '.join(self.keys())}")
            if raw is None:
                continue
            if types[key] in ("str", str):
                changes[key] = str(raw)
            else:
                changes[key] = raw if isinstance(raw, (int, float)) else as_float(str(raw), key)
        return dataclasses.replace(self, **changes)

    def model_config(self):
        return load_model_config(self.model)

    def corridor(self):
        return Corridor(self.corridor_half_width, self.corridor_length, self.corridor_curvature)

    def camera(self):
        return Camera(self.camera_height, self.camera_pitch_deg, self.camera_hfov_deg)

    def controller(self):
        if self.gain < 0 or self.speed < 0 or self.track <= 0:
            raise ConfigError("need gain >= 0, speed >= 0, track > 0")
        if not 0 < self.lookahead_frac < 1:
            raise ConfigError("lookahead_frac must be in (0, 1)")
        return ControllerParams(self.gain, self.speed, self.track, self.lookahead_frac)

    def to_dict(self) -> Dict[str, object]:
        return dataclasses.asdict(self)


def load_run_config(path: Optional[str] = None, overrides: Optional[Mapping[str, object]] = None) -> RunConfig:
    """Defaults, then the config file (``path`` or ``$LANEKEEPER_CONFIG``), then overrides."""
    cfg = RunConfig()
    path = path or os.environ.get(ENV_CONFIG) or None
    if path:
        cfg = cfg.merged(load_kv(path))
    if overrides:
        cfg = cfg.merged(overrides)
    return cfg
