"""Real-time row-anchor lane detection, lane keeping and latency tooling."""

from lanekeeper.errors import LaneKeeperError
from lanekeeper.lanecore import (
    LaneGrid,
    LanePolyline,
    ModelConfig,
    decode_anchor,
    decode_grid,
    fit_direction,
    load_model_config,
    softmax_expectation,
)

__version__ = "0.1.0"

__all__ = [
    "LaneGrid",
    "LaneKeeperError",
    "LanePolyline",
    "ModelConfig",
    "decode_anchor",
    "decode_grid",
    "fit_direction",
    "load_model_config",
    "softmax_expectation",
]
