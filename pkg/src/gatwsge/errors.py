"""Exception hierarchy shared by every module."""


class GazeError(Exception):
    """Base class for package errors."""


class DegenerateVector(GazeError, ValueError):
    pass


class NearAxisGaze(GazeError, ValueError):
    """Gaze is (almost) parallel to the optical axis, so its 2D direction is undefined."""


class AntipodalEndpoints(GazeError, ValueError):
    pass


class ShapeMismatch(GazeError, ValueError):
    pass


class LengthMismatch(GazeError, ValueError):
    pass


class EmptyBox(GazeError, ValueError):
    pass


class ParseError(GazeError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(GazeError, ValueError):
    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if field is not None:
            prefix += f"field {field!r}: "
        super().__init__(prefix + message)


class ConfigError(GazeError):
    pass


class TrainingDivergence(GazeError, FloatingPointError):
    pass


class ManifestMismatch(GazeError, ValueError):
    pass


class CheckpointError(GazeError, ValueError):
    pass
