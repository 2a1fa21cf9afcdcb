"""Exception types shared across the package."""


class CosnetError(Exception):
    """Base class for all package errors."""


class ShapeError(CosnetError, ValueError):
    """Operand extents disagree with an operation's contract."""


class GeometryError(CosnetError, ValueError):
    """A window/stride/padding combination yields no valid output."""


class NonFiniteError(CosnetError, FloatingPointError):
    """A NaN or infinity appeared in an engine value."""


class ContractError(CosnetError, RuntimeError):
    """An API precondition was violated (e.g. backward from a non-scalar)."""


class LabelError(CosnetError, ValueError):
    """A label value lies outside the valid class range."""


class ConfigError(CosnetError, ValueError):
    """Inconsistent model or training configuration."""
