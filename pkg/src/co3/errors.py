"""Exception hierarchy shared by the co3 modules."""


class Co3Error(Exception):
    """Base class for all errors raised by this package."""


class ParameterDomainError(Co3Error, ValueError):
    """Distribution or format parameters outside their valid domain."""


class DegenerateSampleError(Co3Error, ValueError):
    """Sample has zero variance (or otherwise cannot be fitted)."""


class InsufficientSampleError(Co3Error, ValueError):
    """Too few samples for the requested estimator."""


class QuantizationInputError(Co3Error, ValueError):
    """Non-finite values handed to the quantizer."""


class NoPolynomialError(Co3Error, ValueError):
    """No bias polynomial covers the requested format or shape."""


class EncodeError(Co3Error, ValueError):
    pass


class DecodeError(Co3Error, ValueError):
    """Corrupt, truncated or mismatched payload."""


class ConfigError(Co3Error, ValueError):
    """Invalid experiment configuration.

    ``line`` is the 1-based line in the config file the problem was traced to,
    or ``None`` when the error is not tied to a specific line.
    """

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        self.message = message
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
