"""Exception types shared across the package."""


class RtbpaError(Exception):
    """Base class for package errors."""


class GrazingIncidence(RtbpaError):
    """Ray direction is (numerically) parallel to the reflecting surface."""


class CrossPolarized(RtbpaError):
    """Transported field is orthogonal to the reference co-pol vector."""


class NonPlanarReflector(RtbpaError):
    """A reflector without a supporting plane was used for image construction."""


class Singular(RtbpaError):
    """Field evaluation requested at the source location."""


class EmptyInput(RtbpaError):
    """Measurement set or grid contains no samples."""


class EmptyImage(RtbpaError):
    """Image is identically zero."""


class UnresolvedLobe(RtbpaError):
    """Main lobe does not decay to half maximum inside the grid."""


class ScenarioError(RtbpaError):
    """Scenario file violates the schema."""


class ShapeMismatch(RtbpaError):
    """Measurement data and grid/scenario shapes are inconsistent."""
