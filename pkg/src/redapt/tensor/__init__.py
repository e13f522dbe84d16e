from redapt.tensor.core import (
    AllocationTracker,
    MacCounter,
    Tape,
    Tensor,
    backward,
    mac_section,
)

__all__ = ['AllocationTracker', 'MacCounter', 'Tape', 'Tensor', 'backward', 'mac_section']
