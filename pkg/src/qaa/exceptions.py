"""Exception hierarchy shared by every module."""


class QAAError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(QAAError, ValueError):
    pass


class DomainError(QAAError, ValueError):
    pass


class ParseError(QAAError, ValueError):
    pass


class ConfigError(QAAError, ValueError):
    pass


class LoadError(QAAError, ValueError):
    pass


class NumericError(QAAError, ArithmeticError):
    """Raised when training or optimization produces a non-finite value."""


class ContractViolation(QAAError, RuntimeError):
    pass


class NotFittedError(QAAError, AttributeError):
    pass
