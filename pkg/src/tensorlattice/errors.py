"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical failures with 3 and refused resource caps with 4.
"""


class TensorLatticeError(Exception):
    """Base class for every error raised by the package."""


class DimensionError(TensorLatticeError, ValueError):
    """Operands have incompatible grid shapes or vector lengths."""


class BoundsError(TensorLatticeError, IndexError):
    """A window or shift falls outside the grid it refers to."""


class StructureError(TensorLatticeError, ValueError):
    """Input violates a structural invariant (symmetry, rank, block layout)."""


class ResourceCapError(TensorLatticeError, MemoryError):
    """An operation would exceed a configured size cap."""

    def __init__(self, what, size, cap):
        super().__init__(f"{what}: size {size} exceeds cap {cap}; raise the cap explicitly to proceed")
        self.size = size
        self.cap = cap


class NumericalError(TensorLatticeError, ArithmeticError):
    """A numerical check failed (definiteness, residual, imaginary part)."""


class DefinitenessError(NumericalError):
    """A mass/overlap matrix is not (Hermitian) positive definite."""


class ConfigError(TensorLatticeError, ValueError):
    """Invalid experiment configuration."""
