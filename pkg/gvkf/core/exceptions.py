"""Exception hierarchy for GVKF.

Every error carries the process exit code the CLI maps it to:
0 ok, 1 verification failure, 2 usage/parse error, 3 numeric failure.
"""


class GVKFError(Exception):
    """Base error for all GVKF failures."""

    exit_code: int = 2


class InvalidParameterError(GVKFError, ValueError):
    """A numeric parameter is outside its valid range."""
    pass


class SingularCovarianceError(GVKFError, ValueError):
    """Covariance condition number exceeds the allowed limit."""
    pass


class InvalidRayError(GVKFError, ValueError):
    """Ray direction is degenerate or not unit length."""
    pass


class InvalidCameraError(GVKFError, ValueError):
    """Camera parameters do not describe a valid pinhole camera."""
    pass


class PixelIndexError(GVKFError, IndexError):
    """Pixel coordinates outside the image."""
    pass


class EmptyInputError(GVKFError, ValueError):
    """An operation that needs data received none."""
    pass


class MissingCameraError(GVKFError, ValueError):
    """Neural decoding requested without a camera."""
    pass


class InvalidVoxelIdError(GVKFError, KeyError):
    """Voxel key not present in the grid."""

    def __str__(self) -> str:
        # KeyError quotes its argument; keep the message readable.
        return str(self.args[0]) if self.args else "unknown voxel"


class SolverFailureError(GVKFError, RuntimeError):
    """Root finder failed to converge."""

    exit_code = 3


class InvalidBoundsError(GVKFError, ValueError):
    """Sampling bounds have zero or negative extent."""
    pass


class ShapeError(GVKFError, ValueError):
    """Image or array dimensions do not match."""
    pass


class SceneFormatError(GVKFError, ValueError):
    """Scene, camera or target file could not be parsed."""
    pass


class ImageFileError(GVKFError, OSError):
    """Image file could not be read or written."""
    pass


class MeshFileError(GVKFError, OSError):
    """Mesh file could not be read or written."""
    pass


class NumericalError(GVKFError, ArithmeticError):
    """Non-finite value produced during optimization."""

    exit_code = 3


class VerificationError(GVKFError):
    """One or more invariant checks failed."""

    exit_code = 1
