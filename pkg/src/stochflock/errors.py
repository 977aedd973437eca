"""Exception types shared across the package."""


class StochFlockError(Exception):
    """Base class for all package errors."""


class DomainError(StochFlockError, ValueError):
    """An argument lies outside the domain of a function."""


class ConfigError(StochFlockError, ValueError):
    """Invalid configuration, grid, or scenario file."""


class GridError(StochFlockError, ValueError):
    """A refinement request does not match the path's grid."""


class NumericalError(StochFlockError, ArithmeticError):
    """Non-finite values appeared during integration."""


class UnsupportedError(StochFlockError, NotImplementedError):
    """Operation has no closed form for this kernel family."""


class EmptyEnsemble(StochFlockError, ValueError):
    """An ensemble reduction was requested over zero paths."""


class EmptyMask(StochFlockError, ValueError):
    """A conditional reduction was requested over an empty event."""


class DegenerateFit(StochFlockError, ValueError):
    """Series carries too little variation for a decay fit."""


class WrongScenario(StochFlockError, ValueError):
    """Analysis applied to an incompatible scenario."""


class BadIndex(StochFlockError, IndexError):
    """Index set is empty or out of range."""


class IoError(StochFlockError, OSError):
    """A report or dump file could not be written."""
