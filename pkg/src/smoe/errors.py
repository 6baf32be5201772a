"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, checkpoint problems
(FormatError) -> 2, bad inputs (audio, sequences) -> 3, numeric failures -> 4.
"""


class ConfigError(ValueError):
    """Invalid configuration value, unknown key, or inconsistent preset."""


class ShapeError(ValueError):
    """Tensor shapes do not satisfy an operation's contract."""


class ContractError(RuntimeError):
    """An operation was called outside its stated preconditions."""


class RoutingError(ValueError):
    """Gate vector is not a valid one-hot selection."""


class SequenceError(ValueError):
    """Target sequence does not follow the guiding-token layout."""


class FormatError(ValueError):
    """A serialized artifact (checkpoint, vocab, manifest) is malformed."""


class NumericError(ArithmeticError):
    """Non-finite values encountered where finite values are required."""


class AudioError(ValueError):
    """Waveform input violates a signal-processing precondition."""


class LimitError(ValueError):
    """Input exceeds a configured length limit."""
