"""Exception hierarchy shared across the package."""


class SpikebpError(Exception):
    """Base class for all spikebp errors."""


class DimensionError(SpikebpError):
    """Tensor/layer shapes do not line up."""


class ValidationError(SpikebpError):
    """An argument or configuration value is out of contract."""


class NumericError(SpikebpError):
    """Non-finite value or integer accumulator overflow."""


class FormatError(SpikebpError):
    """A file does not match its declared binary format."""


class TruncationError(FormatError):
    """A file ends before its declared payload length."""


class StateError(SpikebpError):
    """An operation was called without the state it requires."""


class SimulationError(SpikebpError):
    """The cycle-level simulator cannot make progress."""
