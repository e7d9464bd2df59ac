"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class ResourceExhausted(RuntimeError):
    pass


class DegenerateInput(ValueError):
    pass


class InitializationFailure(RuntimeError):
    pass


class TrainingFailure(RuntimeError):
    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


class ParseError(ValueError):
    """Malformed input file. ``line`` is 1-based, or None when not line-specific."""

    def __init__(self, message: str, line: int | None = None, path=None):
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        else:
            where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.message = message
        self.path = path

    def at(self, path) -> "ParseError":
        """The same error attributed to ``path``."""
        return ParseError(self.message, self.line, path)
