"""Exception types shared across modules; the CLI maps them to exit codes."""


class ValidationError(ValueError):
    """Bad argument or malformed input, detected before any numerics run."""


class NumericalError(RuntimeError):
    """Non-finite value produced during integration or training."""
