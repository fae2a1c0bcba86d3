"""Exception taxonomy shared across the package.

Every domain failure raises a subclass of :class:`PlanarTrackError` so the
CLI can map "the input was bad / the math is degenerate" to exit code 1,
keeping exit code 2 for usage and I/O problems.
"""


class PlanarTrackError(Exception):
    """Base class for all domain errors raised by this package."""


# geometry ------------------------------------------------------------------

class TooFewPairs(PlanarTrackError):
    """Fewer than four point correspondences were supplied."""


class DegenerateConfiguration(PlanarTrackError):
    """Correspondences are rank deficient (e.g. collinear points)."""


class SingularMatrix(PlanarTrackError):
    """A projective matrix with zero determinant cannot be inverted."""


class PointAtInfinity(PlanarTrackError):
    """Homogeneous scale vanished while applying a homography."""


class NonConvergence(PlanarTrackError):
    """Newton inversion of the radial distortion map failed to converge."""


class InsufficientLines(PlanarTrackError):
    """Distortion estimation needs at least two polylines."""


class DegenerateGeometry(PlanarTrackError):
    """All calibration lines pass through the distortion center."""


# mosaic --------------------------------------------------------------------

class EmptyFootprint(PlanarTrackError):
    """No canvas pixel maps back into the camera crop."""


# ingest --------------------------------------------------------------------

class ParseError(PlanarTrackError):
    """A record file failed to parse; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class RunSumMismatch(PlanarTrackError):
    """RLE run lengths do not sum to the stated grid size."""


class EmptyMask(PlanarTrackError):
    """Operation requires at least one set pixel."""


class EmptyRegion(PlanarTrackError):
    """IoU is undefined when an input region has zero area."""


# tracker -------------------------------------------------------------------

class NonFiniteMeasurement(PlanarTrackError):
    """Kalman update received NaN or infinite coordinates."""


class NonMonotonicFrameIndex(PlanarTrackError):
    """Tracker frames must be presented in strictly increasing order."""


# metrics -------------------------------------------------------------------

class DuplicateId(PlanarTrackError):
    """The same identity appears twice in one frame of one file."""


class ZeroGroundTruth(PlanarTrackError):
    """MOTA is undefined without ground-truth instances."""


class NoMatches(PlanarTrackError):
    """MOTP is undefined when no pair was ever matched."""


class EmptyEvaluation(PlanarTrackError):
    """Detection accuracy is undefined on an empty evaluation."""


# simulator -----------------------------------------------------------------

class InfeasiblePen(PlanarTrackError):
    """The object footprint does not fit inside the pen."""


# configuration -------------------------------------------------------------

class ConfigError(PlanarTrackError):
    """Base class for configuration problems."""


class UnknownKey(ConfigError):
    """A config file or override names a key the schema does not define."""


class TypeMismatch(ConfigError):
    """A config value has the wrong JSON type."""
