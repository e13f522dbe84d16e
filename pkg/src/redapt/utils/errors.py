"""
Error types for the RedApt pipeline.

Each error also subclasses the builtin a caller would naturally catch
(ValueError, IOError, ...), so generic handlers keep working.
"""


class RedAptError(Exception):
    """Base class for all pipeline errors."""


class ShapeError(RedAptError, ValueError):
    """Tensor dimensions do not line up."""


class SequenceLengthError(RedAptError, ValueError):
    """Sequence too short for a convolution kernel."""

    def __init__(self, n, k, p, where=None):
        self.n = n
        self.k = k
        self.p = p
        location = f" in {where}" if where else ""
        super().__init__(
            f"sequence shorter than kernel{location}: n={n}, k={k}, p={p} (need n + 2p >= k)"
        )


class ConfigError(RedAptError, ValueError):
    """Invalid configuration value, key or file."""

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        details = []
        if key is not None:
            details.append(f"key '{key}'")
        if line is not None:
            details.append(f"line {line}")
        suffix = f" ({', '.join(details)})" if details else ""
        super().__init__(f"{message}{suffix}")


class GradientError(RedAptError, RuntimeError):
    """Backward pass requested on something that cannot be differentiated."""


class TargetRangeError(RedAptError, IndexError):
    """Class target index outside [0, n_classes)."""


class SignalError(RedAptError, ValueError):
    """Audio operation received an unusable signal or parameter."""


class DivergenceError(RedAptError, RuntimeError):
    """Training loss became NaN or infinite."""

    def __init__(self, step, last_finite_loss):
        self.step = step
        self.last_finite_loss = last_finite_loss
        super().__init__(
            f"training diverged at step {step}: loss is not finite "
            f"(last finite loss: {last_finite_loss})"
        )


class CheckpointError(RedAptError, IOError):
    """Base class for checkpoint file problems."""


class CheckpointMagicError(CheckpointError):
    """File does not start with the checkpoint magic bytes."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported."""


class CheckpointTruncatedError(CheckpointError):
    """Checkpoint file ended before all declared entries were read."""


class BenchCapError(RedAptError, RuntimeError):
    """Benchmark refused because the model exceeds the desk-scale cap."""
