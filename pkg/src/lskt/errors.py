"""Exception hierarchy shared across the package."""


class LSKTError(Exception):
    """Base class for all package errors."""


class DimensionError(LSKTError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(LSKTError, RuntimeError):
    """A documented precondition was violated by the caller."""


class EmptyAttentionError(ContractError):
    """Every position of a softmax window is masked."""


class VocabularyError(LSKTError, IndexError):
    """An embedding index lies outside its table."""


class ConfigError(LSKTError, ValueError):
    """Invalid or unknown configuration value."""


class DataFormatError(LSKTError, ValueError):
    """Malformed input data file."""


class NumericalError(LSKTError, FloatingPointError):
    """Training produced a non-finite value."""
