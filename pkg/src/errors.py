"""
Exception hierarchy for vcod-bench.
Library modules raise these; only src/cli.py turns them into exit codes.
"""


class VcodBenchError(Exception):
    """Base class of every domain error."""


class RasterError(VcodBenchError, ValueError):
    """Unreadable image, bad raster content or invalid raster arguments."""


class DimensionMismatchError(RasterError):
    def __init__(self, expected, actual, what: str = "raster"):
        self.expected = tuple(expected)
        self.actual = tuple(actual)
        super().__init__(f"{what} dimension mismatch: expected {self.expected}, got {self.actual}")


class EmptyMaskError(RasterError):
    """The operation needs at least one foreground pixel."""


class ManifestError(VcodBenchError):
    pass


class MissingPredictionError(VcodBenchError):
    def __init__(self, clip_id: str, frames):
        self.clip_id = clip_id
        self.frames = list(frames)
        super().__init__(f"clip '{clip_id}' is missing predictions for frames {self.frames}")


class PropagatorError(VcodBenchError):
    pass


class CorrectionError(VcodBenchError):
    pass
