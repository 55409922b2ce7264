"""Exception taxonomy shared by every stage of the detector."""


class ScaleDetectionError(Exception):
    """Base class. ``stage`` names the pipeline stage that failed."""

    stage = "unknown"

    def __init__(self, message: str, stage: str | None = None):
        super().__init__(message)
        if stage is not None:
            self.stage = stage


class DimensionError(ScaleDetectionError, ValueError):
    stage = "input"


class EmptyRegionError(ScaleDetectionError, ValueError):
    stage = "roi"


class BoundaryError(ScaleDetectionError, ValueError):
    stage = "descriptor"


class TrainingError(ScaleDetectionError, ValueError):
    stage = "train"


class ModelFormatError(ScaleDetectionError, ValueError):
    stage = "model"


class CoarseStageError(ScaleDetectionError):
    stage = "coarse"


class EdgeNotFoundError(ScaleDetectionError):
    stage = "edge"


class ImplausibleCornersError(ScaleDetectionError):
    stage = "corner"


class NoMarksError(ScaleDetectionError):
    stage = "marks"


class MajorLineNotFoundError(ScaleDetectionError):
    stage = "marks"


class StainFilterError(ScaleDetectionError):
    stage = "marks"


class MarkCountError(ScaleDetectionError):
    stage = "marks"

    def __init__(self, count: int, expected: int = 10):
        super().__init__(f"expected {expected} major marks, found {count}")
        self.count = count
        self.expected = expected
