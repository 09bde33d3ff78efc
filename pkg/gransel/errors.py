from __future__ import annotations


class GranselError(Exception):
    """
    Base error. `exit_code` is what the CLI returns when the error escapes a command.
    """

    exit_code: int = 3


class ConfigError(GranselError, ValueError):
    exit_code = 1


class InputError(GranselError, ValueError):
    exit_code = 2


class InvariantError(GranselError, RuntimeError):
    exit_code = 3


# ---- domain errors ----


class VocabularyError(InputError):
    pass


class TokenizerError(InputError):
    pass


class DegenerateInputError(InputError):
    pass


class DimensionMismatchError(InvariantError):
    pass
