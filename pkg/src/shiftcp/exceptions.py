"""Exception types mapped to CLI exit codes."""


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration (exit code 2)."""


class DataError(ValueError):
    """Malformed input data or logit-table ingestion failure (exit code 3)."""


class InvariantError(RuntimeError):
    """An internal invariant that must hold by construction was violated (exit code 4)."""
