"""Exception types raised across the calibration toolkit."""


class CalibrationError(Exception):
    """Base class for all toolkit errors."""


class NonPositiveDepth(CalibrationError):
    """A point at or behind the camera plane was projected."""


class EmptyProjection(CalibrationError):
    """No cloud point landed inside the virtual image."""


class NoLiftablePixels(CalibrationError):
    """Every labeled edge pixel lacked source cloud points."""


class TooFewEvents(CalibrationError):
    """An event window holds fewer events than the estimator needs."""


class InsufficientPoints(CalibrationError):
    """A cloud is too small for registration."""


class DivergedRegistration(CalibrationError):
    """GICP finished with a fitness above the rejection threshold."""


class EmptyIndex(CalibrationError):
    """No event pixel passed the index magnitude threshold."""


class TooFewCorrespondences(CalibrationError):
    """Not enough valid edge/event associations to solve extrinsics."""


class TimestampOutOfWindow(CalibrationError):
    """A sweep point timestamp falls outside its window interval."""


class MalformedLine(CalibrationError):
    """A text input line failed to parse."""

    def __init__(self, path, line_number, line):
        self.path = str(path)
        self.line_number = line_number
        self.line = line
        super().__init__(f"{self.path}:{line_number}: malformed line: {line!r}")


class NonMonotonicTimestamps(CalibrationError):
    """Event timestamps decrease by more than the allowed tolerance."""


class BadMagic(CalibrationError):
    """A binary cloud file does not start with the expected magic bytes."""


class TruncatedRecord(CalibrationError):
    """A binary cloud file ends mid-record."""


class UnwritablePath(CalibrationError):
    """An output path could not be written."""


class PipelineStageError(CalibrationError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
