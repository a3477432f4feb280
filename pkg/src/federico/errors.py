"""Exception types shared across the simulator."""


class FedericoError(Exception):
    """Base class for all simulator errors."""


class ConfigError(FedericoError, ValueError):
    """Invalid configuration, shapes or arguments.

    ``key`` names the offending configuration entry when one applies.
    """

    def __init__(self, message, key=None):
        self.key = key
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)


class NumericFailure(FedericoError, ArithmeticError):
    def __init__(self, message, round=None, client=None):
        self.round = round
        self.client = client
        where = []
        if round is not None:
            where.append(f"round {round}")
        if client is not None:
            where.append(f"client {client}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class ProtocolIntegrityError(FedericoError, RuntimeError):
    """A message expected by the round engine was missing or duplicated."""
