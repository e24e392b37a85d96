"""Exception hierarchy. Each class maps onto one CLI exit code."""


class AvphonError(Exception):
    exit_code = 1


class ConfigError(AvphonError, ValueError):
    """Invalid configuration or arguments."""

    exit_code = 2


class DataError(AvphonError, ValueError):
    """Malformed, missing or inconsistent input data."""

    exit_code = 3


class NumericalError(AvphonError, ArithmeticError):
    """A numerical routine could not produce a finite result."""

    exit_code = 4


class StageError(AvphonError):
    """Failure inside one stage of an experiment run.

    Carries the stage name and the utterance being processed, and inherits
    the exit code of the wrapped error.
    """

    def __init__(self, stage, utterance, cause):
        self.stage = stage
        self.utterance = utterance
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        where = f" (utterance {utterance})" if utterance else ""
        super().__init__(f"stage '{stage}' failed{where}: {cause}")
