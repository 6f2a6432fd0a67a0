"""Exception types shared across the simulator."""


class SimError(Exception):
    """Base class for all simulator errors."""


class ConfigError(SimError):
    """Invalid or inconsistent run configuration."""


class MapError(SimError):
    """Bad page-table mapping request (double map, unmap of absent page)."""


class ContractViolation(SimError):
    """An operation was invoked outside its stated precondition."""


class ProtectionError(SimError):
    """An application touched memory it does not own."""


class OutOfMemoryError(SimError):
    """Not enough free physical slots to satisfy an allocation."""
