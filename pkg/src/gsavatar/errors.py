"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so raise the most specific
class that applies.
"""


class GsAvatarError(Exception):
    """Base class for all package errors."""


class ShapeError(GsAvatarError):
    """Operands have incompatible shapes or resolutions."""


class ContractError(GsAvatarError):
    """An API was used outside its contract (wrong state, wrong call order)."""


class NumericsError(GsAvatarError):
    """A non-finite value appeared where finite values are required."""


class ConfigError(GsAvatarError):
    """Invalid or incomplete run configuration."""


class DataError(GsAvatarError):
    """Missing, malformed, or inconsistent on-disk data."""
