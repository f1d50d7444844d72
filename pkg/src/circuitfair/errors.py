"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input violates a documented invariant (bad matrix, topology, config)."""


class ParseError(ValidationError):
    """A file could not be parsed; carries file/line context."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class SolverError(RuntimeError):
    """An optimization backend failed to produce a certified solution."""


class ConfigurationError(ValidationError):
    """A run configuration is inconsistent or incomplete."""
