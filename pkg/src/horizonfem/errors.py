"""Exception types shared across the solver."""


class MeshFormatError(ValueError):
    """Raised when a mesh file cannot be parsed; carries the offending line."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class InvertedElementError(MeshFormatError):
    """Element connectivity winds clockwise (negative Jacobian)."""


class BridgingError(RuntimeError):
    """A child quadrature point could not be located in any parent element."""

    def __init__(self, point, nearest_element=None):
        self.point = tuple(float(c) for c in point)
        self.nearest_element = nearest_element
        msg = f"point {self.point} lies outside the parent mesh"
        if nearest_element is not None:
            msg += f" (nearest element {nearest_element})"
        super().__init__(msg)


class AlignmentError(RuntimeError):
    """Singular kernel used with a child mesh whose cells straddle a singular line."""


class NumericError(RuntimeError):
    """Linear algebra or quadrature failure (singular system, non-convergence)."""
