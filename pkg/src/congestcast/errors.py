"""Exception hierarchy. The CLI maps each family to an exit code."""


class CongestcastError(Exception):
    exit_code = 1


class ConfigError(CongestcastError):
    exit_code = 2


class DataError(CongestcastError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GapError(DataError):
    def __init__(self, gaps):
        self.gaps = list(gaps)
        shown = ", ".join(f"({h}, {d})" for h, d in self.gaps[:10])
        more = "" if len(self.gaps) <= 10 else f" ... (+{len(self.gaps) - 10} more)"
        super().__init__(f"missing intervals for (household, day): {shown}{more}")


class EmptyCalendarError(DataError):
    pass


class ContractError(CongestcastError):
    """A caller violated an operation's precondition."""

    exit_code = 2


class MissingArtifactError(ConfigError):
    def __init__(self, path, producer):
        self.path = path
        self.producer = producer
        super().__init__(f"{path} not found; run `congestcast {producer}` first")


class NumericalError(CongestcastError):
    exit_code = 4


class InfeasibleError(NumericalError):
    pass


class FitError(NumericalError):
    pass
