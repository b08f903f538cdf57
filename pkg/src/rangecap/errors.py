"""Exception types shared across the package."""


class CapabilityError(RuntimeError):
    """Request exceeds what a routine is built to handle (size caps, test-scale oracles)."""


class NumericError(ArithmeticError):
    """A linear solve or quadrature produced an unusable answer."""


class SingularityError(ArithmeticError):
    """A kernel was evaluated at its singular point."""


class ResourceError(MemoryError):
    """Requested allocation exceeds the configured memory budget."""


class LatticeBoundsError(OverflowError):
    """A lattice point left the box that the 16-bit key packing can represent."""
