"""
Parameter containers and initializers.
"""

from dataclasses import fields

import numpy as np

from redapt.tensor.core import Tensor


class ParamGroup:
    """
    Mixin for dataclasses holding Tensors, nested groups, lists or dicts of them.

    Names are dotted paths (``layers.3.w_q``); non-tensor fields such as
    sizes are ignored.
    """

    def named_parameters(self, prefix=''):
        named = {}
        for f in fields(self):
            _collect(getattr(self, f.name), f"{prefix}{f.name}", named)
        return named

    def parameters(self):
        return list(self.named_parameters().values())

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def set_requires_grad(self, flag):
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def freeze(self):
        """Mark every tensor constant so the group can be shared read-only."""
        return self.set_requires_grad(False)


def _collect(value, name, named):
    if value is None:
        return
    if isinstance(value, Tensor):
        named[name] = value
    elif isinstance(value, ParamGroup):
        named.update(value.named_parameters(name + '.'))
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            _collect(item, f"{name}.{i}", named)
    elif isinstance(value, dict):
        for key, item in value.items():
            _collect(item, f"{name}.{key}", named)


def uniform_fan_in(rng, shape, fan_in, name=None):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights."""
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def zeros(shape, name=None):
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def ones(shape, name=None):
    return Tensor(np.ones(shape), requires_grad=True, name=name)
