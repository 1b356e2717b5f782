"""Exception hierarchy shared by all modules."""


class DpGazeError(Exception):
    """Base class; the CLI maps these to exit code 2."""


class InputError(DpGazeError):
    """Malformed input file. ``row`` is the 1-based data row, when known."""

    def __init__(self, message: str, row: int | None = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class MissingColumn(InputError):
    pass


class NonMonotonicTimestamp(InputError):
    pass


class NonFiniteValue(InputError):
    pass


class EmptyRecording(InputError):
    pass


class DegenerateRecording(DpGazeError):
    pass


class RecordingTooShort(DpGazeError):
    pass


class EmptyDataset(DpGazeError):
    pass


class EmptyMatrix(DpGazeError):
    pass


class MissingClass(DpGazeError):
    pass


class SingleClassInput(DpGazeError):
    pass


class IterationLimit(DpGazeError):
    pass


class EmptyGroup(DpGazeError):
    pass


class LengthMismatch(DpGazeError):
    pass


class InsufficientParticipants(DpGazeError):
    pass


class InsufficientWindows(DpGazeError):
    pass


class MissingDocument(DpGazeError):
    pass


class InvalidSpec(DpGazeError):
    pass


class ConfigError(DpGazeError):
    pass
