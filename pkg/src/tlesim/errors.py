"""Shared exception types."""


class SimulationError(Exception):
    """Fatal harness misuse: bad addresses, double free, broken protocol."""


class ConfigError(Exception):
    """Bad configuration value, file, or command line."""


class IntegrityError(Exception):
    """A structural invariant that should never break did break."""
