"""Exception hierarchy shared by every module."""


class AugClusterError(Exception):
    """Base class for all package errors."""


class DimensionError(AugClusterError, ValueError):
    """Array shapes do not agree with an operation's contract."""


class ConfigurationError(AugClusterError, ValueError):
    """Invalid hyperparameters, architecture or augmentation settings."""


class InputError(AugClusterError, ValueError):
    """Bad user data: labels, manifests, files, targets."""


class NumericError(AugClusterError, ArithmeticError):
    """A computation produced a non-finite value."""


class StateError(AugClusterError, RuntimeError):
    """An object was used in the wrong lifecycle state."""
