class ConclaveError(Exception):
    """Base class for every error raised by the collective-formation pipeline."""


class InvalidArgument(ConclaveError, ValueError):
    pass


class ShapeError(ConclaveError, ValueError):
    pass


class InfeasibleCollective(ConclaveError):
    """Member list breaks the domain rules (cardinality, range, duplicates)."""


class EnumerationTooLarge(ConclaveError):
    """Exhaustive enumeration would exceed the configured limit."""


class NoActionAvailable(ConclaveError):
    """Every decoder entry is masked."""


class Infeasible(ConclaveError):
    """No packing satisfies the covering constraints."""


class RolloutFailed(ConclaveError):
    """A tree-search rollout reached a dead end."""


class ConfigError(ConclaveError):
    """Bad run configuration, missing checkpoint or checkpoint/domain mismatch."""
