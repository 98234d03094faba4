"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument violates an operation's precondition (shape, range)."""


class ConfigurationError(ValueError):
    """Components of a scenario do not fit together (e.g. regime mismatch)."""


class RefusalError(RuntimeError):
    """The request is well-formed but outside what the routine will attempt."""
