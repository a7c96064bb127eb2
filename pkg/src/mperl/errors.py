"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """A value lies outside the domain of a function (log, lgamma, ...)."""


class ContractError(RuntimeError):
    """A precondition of an operation was violated by the caller."""


class ParseError(ValueError):
    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class IngestionError(ValueError):
    """Label or split data does not agree with the graph."""


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class TrainingError(RuntimeError):
    """Training produced a non-finite loss; ``breakdown`` holds the offending terms."""

    def __init__(self, message, breakdown=None):
        self.breakdown = breakdown
        super().__init__(message)
