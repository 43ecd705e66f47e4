"""Exception hierarchy shared by every module."""


class LaneKeeperError(Exception):
    """Base class; the CLI maps any subclass to exit code 1."""


class InvalidInputError(LaneKeeperError, ValueError):
    pass


class InsufficientPointsError(InvalidInputError):
    pass


class ConfigError(LaneKeeperError, ValueError):
    pass


class InvalidSceneError(ConfigError):
    pass


class BackendError(LaneKeeperError):
    pass


class SourceOpenError(LaneKeeperError, OSError):
    pass


class Y4MError(LaneKeeperError):
    """Malformed or truncated YUV4MPEG2 stream.

    ``offset`` is the byte position where parsing failed.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class OrderingError(LaneKeeperError):
    pass


class OutOfCorridorError(LaneKeeperError):
    pass


class InvalidGroundTruthError(LaneKeeperError, ValueError):
    pass


class EmptyDatasetError(LaneKeeperError, ValueError):
    pass
