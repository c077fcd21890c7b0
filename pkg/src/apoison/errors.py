"""Exception hierarchy shared across the toolkit.

The three branches map onto the CLI exit codes: ConfigError -> 2,
DataError -> 3, InfeasibleAttackError -> 4.
"""


class ApoisonError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ApoisonError):
    """Invalid or inconsistent run configuration."""


class DataError(ApoisonError):
    """Malformed or out-of-contract data (parsing, kinds, degeneracies)."""


class DegenerateMarginalError(DataError):
    """A 2x2 joint has a zero marginal where a nonzero one is required."""


class ZeroVarianceError(DataError):
    """A continuous feature is constant where variance is required."""


class InfeasibleAttackError(ApoisonError):
    """The requested attack cannot be carried out on the given data."""


class ExtentOutOfBoundsError(InfeasibleAttackError):
    """A poisoning extent lies outside its feasibility interval."""
