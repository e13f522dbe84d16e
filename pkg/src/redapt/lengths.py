"""
Sequence-length arithmetic for strided 1-D convolutions.
"""

from dataclasses import dataclass

from redapt.utils.errors import ConfigError, SequenceLengthError


@dataclass(frozen=True)
class ReductionSpec:
    """Kernel ``k``, stride ``s`` and zero padding ``p`` of a 1-D convolution."""

    k: int = 3
    s: int = 2
    p: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"kernel must be >= 1, got {self.k}", key='k')
        if self.s < 1:
            raise ConfigError(f"stride must be >= 1, got {self.s}", key='s')
        if self.p < 0:
            raise ConfigError(f"padding must be >= 0, got {self.p}", key='p')

    @property
    def is_length_preserving(self):
        return self.s == 1 and 2 * self.p == self.k - 1


# Defaults of the two RedApt convolutions: <3, 2, 1> pools, <3, 1, 1> keeps length
POOLING_SPEC = ReductionSpec(3, 2, 1)
RESTORING_SPEC = ReductionSpec(3, 1, 1)


def reduced_length(n, spec, where=None):
    """
    Output length of a convolution: floor((n + 2p - k) / s) + 1.

    Args:
        n: input length
        spec: ReductionSpec
        where: optional label for the error message

    Returns:
        int: output length

    Raises:
        SequenceLengthError: if n + 2p < k
    """
    if n + 2 * spec.p < spec.k:
        raise SequenceLengthError(n, spec.k, spec.p, where=where)
    return (n + 2 * spec.p - spec.k) // spec.s + 1


def chained_length(n, specs, where=None):
    """Apply reduced_length through a sequence of specs, returning every intermediate length."""
    lengths = []
    for i, spec in enumerate(specs):
        label = f"{where} layer {i}" if where else None
        n = reduced_length(n, spec, where=label)
        lengths.append(n)
    return lengths
