"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class FitFailure(RuntimeError):
    """Raised when a geometric fit has no well-defined solution."""


class LoadError(IOError):
    """A file on disk could not be decoded. ``path`` names the offending file."""

    def __init__(self, path, reason):
        self.path = str(path)
        self.reason = reason
        super().__init__(f"{self.path}: {reason}")


class SetupError(RuntimeError):
    """Training cannot start (bad dataset, unwritable output, ...)."""
