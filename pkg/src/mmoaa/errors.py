"""Exception hierarchy; the CLI maps each class to its own exit code."""


class MMOAAError(Exception):
    pass


class ConfigurationError(MMOAAError, ValueError):
    """Invalid simulation parameters or config file."""


class DegenerateError(MMOAAError, ArithmeticError):
    """A quotient or normalization with a vanishing denominator."""


class IDXFormatError(MMOAAError, ValueError):
    """Malformed IDX file; messages name the byte offset involved."""
