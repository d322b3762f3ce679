"""Exception hierarchy shared by every module of the toolkit."""


class ToolkitError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ToolkitError, ValueError):
    """Invalid configuration value or combination."""


class DimensionError(ToolkitError, ValueError):
    """Array shapes do not agree."""


class InputError(ToolkitError, ValueError):
    """Input data is malformed (e.g. contains non-finite values)."""


class DegenerateInputError(ToolkitError, ValueError):
    """A vector that must be normalized has zero norm."""


class StateError(ToolkitError, RuntimeError):
    """A cached object no longer matches the object it was built from."""


class NumericError(ToolkitError, ArithmeticError):
    """A computation produced a non-finite value."""


class ProtocolError(ToolkitError, ValueError):
    """Data does not satisfy an evaluation or sampling protocol."""
