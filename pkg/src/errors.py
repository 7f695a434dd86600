class TrilinearError(Exception):
    """Base error for the lab. `module` names the component that raised it."""

    def __init__(self, message, module='core', details=None):
        super().__init__(message)
        self.module = module
        self.details = details or {}

    def __str__(self):
        return f"[{self.module}] {super().__str__()}"


class DomainError(TrilinearError, ValueError):
    pass


class UnsupportedRegimeError(DomainError):
    pass


class ConvergenceError(TrilinearError):
    pass


class NumericalInvariantError(TrilinearError):
    pass


class TruncationError(TrilinearError):
    pass
