"""Exception types shared across the package.

The CLI maps these to exit codes: validation errors exit with 2,
numeric domain errors with 3, I/O failures with 4.
"""


class SchedLabError(Exception):
    """Base class for all schedlab errors."""


class ValidationError(SchedLabError, ValueError):
    """Malformed inputs: bad spec parameters, grids, configs, shapes."""


class DomainError(SchedLabError, ValueError):
    """Numerically undefined request, e.g. t outside [0, T] or a noise
    predictor queried at alpha_bar in {0, 1}."""
