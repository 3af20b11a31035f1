"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the range where a quantity is defined."""


class PreconditionError(ValueError):
    """A hypothesis of a lemma or operation is violated by the input."""


class ConfigurationError(ValueError):
    """An unsupported or malformed model configuration."""


class UnsupportedOperation(TypeError):
    """The operation is not defined for this kind of object."""


class TooLargeError(ValueError):
    """An exact enumeration would exceed its size limit."""
