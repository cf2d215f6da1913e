"""Exception types raised across the package."""


class ResNEstLabError(Exception):
    """Base class for all package errors."""


class ShapeError(ResNEstLabError, ValueError):
    """Array dimensions do not match the model or dataset."""


class InputError(ResNEstLabError, ValueError):
    """Invalid numeric input (e.g. a target column off the probability simplex)."""


class PreconditionError(ResNEstLabError):
    """A documented precondition (assumption check, distinct lengths, ...) failed."""


class ResourceError(ResNEstLabError):
    """Requested problem exceeds a hard size guard."""


class DivergenceError(ResNEstLabError):
    """Training produced a non-finite or exploding risk."""

    def __init__(self, iteration: int, risk: float, lr: float):
        self.iteration = iteration
        self.risk = risk
        self.lr = lr
        super().__init__(
            f"training diverged at iteration {iteration} (risk={risk!r}, lr={lr:g}); "
            "lower the learning rate (ResNEst training is prone to gradient explosion)"
        )


class MonotonicityError(ResNEstLabError):
    """Full-batch GD produced an increasing risk while monotonicity checking was on."""


class ParseError(ResNEstLabError, ValueError):
    """Malformed dataset, parameter, or config file."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}: "
        if line is not None:
            where += f"line {line}: "
        super().__init__(where + message)
