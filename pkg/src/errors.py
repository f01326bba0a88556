"""
Exception hierarchy shared by every module.

The CLI maps these to exit codes: input problems (bad config, bad files,
bad arguments) exit with 1, everything else with 2.
"""


class GeolocError(Exception):
    """Root of every error raised by this package."""


class InvalidArgumentError(GeolocError, ValueError):
    pass


class OutOfBoundsError(GeolocError):
    """A world position fell outside the tile grid."""

    def __init__(self, position, message=None):
        self.position = tuple(float(v) for v in position)
        super().__init__(message or f"Position {self.position} is outside the grid")


class DimensionMismatchError(GeolocError, ValueError):
    pass


class UnnormalizedError(GeolocError):
    """An operation that needs normalized weights got an unnormalized set."""


class StoreFormatError(GeolocError):
    """Base for embedding-file problems."""

    def __init__(self, path, message):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}")


class MalformedHeaderError(StoreFormatError):
    pass


class StoreDimensionError(StoreFormatError):
    pass


class CountMismatchError(StoreFormatError):
    pass


class NonFiniteValueError(StoreFormatError):
    pass


class ConfigError(GeolocError):
    pass


class ConfigParseError(ConfigError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class ConfigValidationError(ConfigError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class RecordFormatError(GeolocError):
    """A CSV record file (metrics, particle dump, pose log) could not be parsed."""

    def __init__(self, path, row, message):
        self.path = str(path)
        self.row = row
        super().__init__(f"{self.path}: row {row}: {message}")


class PoseLogError(RecordFormatError):
    pass


class FileWriteError(GeolocError):
    def __init__(self, path, message):
        self.path = str(path)
        super().__init__(f"Failed to write {self.path}: {message}")
