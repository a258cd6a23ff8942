"""Exception types raised by the estimation pipeline."""


class GeometryError(ValueError):
    """Degenerate or inconsistent scene geometry."""


class IllConditionedError(ValueError):
    """A least-squares or eigen step is numerically rank deficient."""


class UnderdeterminedError(ValueError):
    """Not enough measurements to identify the unknowns."""


class PairingError(RuntimeError):
    """Cross-subcarrier clustering left a path without measurements."""
