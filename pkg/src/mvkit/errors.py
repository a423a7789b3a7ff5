"""Exception hierarchy shared by all mvkit modules.

Two broad families matter to the CLI: ``DataError`` subclasses map to
exit code 2 (bad files, mismatched inputs) and ``NumericError``
subclasses map to exit code 3 (degenerate geometry).
"""


class MVKitError(Exception):
    """Base class for all mvkit errors."""


class NumericError(MVKitError):
    """Degenerate numeric situation (singular matrix, point at infinity, ...)."""


class SingularMatrix(NumericError):
    """Matrix is not invertible within tolerance."""


class PointAtInfinity(NumericError):
    """Homogeneous point has (near-)zero last coordinate."""


class DegenerateProjection(NumericError):
    """Camera pose yields a non-invertible ground-plane projection."""


class DegenerateQuad(NumericError):
    """Four-point correspondence has collinear points or a singular system."""


class DegenerateLookAt(NumericError):
    """Up vector is parallel to the viewing direction."""


class DataError(MVKitError):
    """Invalid or inconsistent input data."""


class GridMismatch(DataError):
    """Rasters do not share the same ground grid."""


class ShapeMismatch(DataError):
    """Raster or list shapes do not line up."""


class ParseError(DataError):
    """A file could not be parsed."""


class VersionMismatch(DataError):
    """A binary file carries an unknown magic/version."""


class InvalidCalibration(DataError):
    """Calibration violates pinhole-camera invariants beyond repairable tolerance."""
