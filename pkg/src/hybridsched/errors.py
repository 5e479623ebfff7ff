"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class CandidateSpaceExhausted(RuntimeError):
    """Every switch tuple has already been drawn since the last reset."""


class NonFiniteStateError(ArithmeticError):
    """A state (or a quantity derived from it) is NaN or infinite."""


class ConfigError(ValueError):
    """Raised for unparseable or out-of-range experiment configuration.

    ``location`` is a dotted field path (``solver.batch_size``) or a
    ``line:col`` pair for syntax errors.
    """

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        text = f"{location}: {message}" if location else message
        super().__init__(text)
