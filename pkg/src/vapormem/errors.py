"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input outside the validity window of a model or correlation."""


class ArgumentError(ValueError):
    """Malformed or inconsistent arguments."""


class NumericalError(RuntimeError):
    """A numerical procedure diverged or failed to converge.

    ``diagnostics`` carries whatever the failing routine could report
    (iteration history, offending grid step, ...).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics if diagnostics is not None else {}
