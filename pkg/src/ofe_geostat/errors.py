"""Exception hierarchy shared by all modules."""


class GeostatError(Exception):
    """Base class for all package errors."""


class SchemaError(GeostatError, ValueError):
    """Input table is missing a required column."""

    def __init__(self, column):
        self.column = column
        super().__init__(f"missing required column: {column!r}")


class EmptyInputError(GeostatError, ValueError):
    pass


class AlignmentError(GeostatError, ValueError):
    pass


class EmptyInteriorError(GeostatError, ValueError):
    pass


class DesignError(GeostatError, ValueError):
    pass


class RankError(GeostatError, ValueError):
    pass


class DomainError(GeostatError, ValueError):
    pass


class IllConditionedError(GeostatError, ArithmeticError):
    """Covariance matrix could not be factorized, even after jitter."""

    def __init__(self, message, theta=None):
        self.theta = theta
        if theta is not None:
            message = f"{message} (theta={theta})"
        super().__init__(message)


class FitFailureError(GeostatError, RuntimeError):
    def __init__(self, message, diagnostics=()):
        self.diagnostics = list(diagnostics)
        detail = "; ".join(str(d) for d in self.diagnostics)
        super().__init__(f"{message}: {detail}" if detail else message)


class EmptyVariogramError(GeostatError, ValueError):
    pass
