"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration and parse problems exit
with 2, numeric failures with 3, and I/O failures with 4.
"""


class SchemaError(ValueError):
    """A table file does not match the declared column schema."""


class ParseError(ValueError):
    """Malformed text input; ``position`` is the character offset when known."""

    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


class ConfigError(ValueError):
    """Invalid or internally inconsistent experiment configuration."""


class InfeasibleError(ValueError):
    """The requested operation has no solution on the given data."""


class DegenerateDimensionError(ValueError):
    """A zero-span dimension cannot be split into more than one bin."""


class NumericError(ArithmeticError):
    """Non-finite values or numerical instability.

    ``layer_index`` locates the offending parameter tensor when known;
    ``iteration`` locates the offending training step.
    """

    def __init__(self, message, layer_index=None, iteration=None):
        parts = [message]
        if layer_index is not None:
            parts.append(f"layer {layer_index}")
        if iteration is not None:
            parts.append(f"iteration {iteration}")
        super().__init__(", ".join(parts))
        self.layer_index = layer_index
        self.iteration = iteration


class TrainingDivergedError(NumericError):
    """Training loss became non-finite at ``iteration``."""
