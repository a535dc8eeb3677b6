"""Flat named parameter store and the factory that fills it"""

import logging
from collections import OrderedDict

import numpy as np
from scipy.stats import truncnorm

from errors import ValidationError
from tensor_core.tensor import Tensor, get_default_dtype

logger = logging.getLogger(__name__)

INIT_STD = 0.02


class Parameters:
    """Ordered mapping of unique names to trainable tensors"""

    def __init__(self):
        """Initialize an empty store"""
        self._tensors = OrderedDict()

    def add(self, name, data):
        """Register a new trainable tensor under ``name``"""
        if name in self._tensors:
            raise ValidationError(f"parameter {name!r} declared twice")
        t = Tensor(np.array(data, dtype=get_default_dtype()), requires_grad=True)
        self._tensors[name] = t
        return t

    def __getitem__(self, name):
        try:
            return self._tensors[name]
        except KeyError:
            raise KeyError(f"no parameter named {name!r}") from None

    def __contains__(self, name):
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def count(self):
        """Total number of scalar parameters"""
        return int(sum(t.size for t in self._tensors.values()))

    def zero_grad(self):
        for t in self._tensors.values():
            t.zero_grad()

    def grads(self):
        """Return name -> gradient array, zeros where no gradient flowed"""
        return {
            name: t.grad if t.grad is not None else np.zeros_like(t.data)
            for name, t in self._tensors.items()
        }

    def arrays(self):
        """Return name -> copy of the data"""
        return {name: t.data.copy() for name, t in self._tensors.items()}


class ParameterFactory:
    """
    Creates parameters in a fixed declaration order

    With ``rng=None`` every tensor is zero-filled, which is enough to learn the
    names and shapes a config declares.
    """

    def __init__(self, store, rng=None):
        """
        Initialize the factory

        Args:
            store: The Parameters store to fill
            rng: numpy Generator for weight draws, or None for shape-only mode
        """
        self.store = store
        self.rng = rng

    def weight(self, name, shape):
        """Truncated-normal weight (std 0.02, cut at two standard deviations)"""
        if self.rng is None:
            return self.store.add(name, np.zeros(shape, dtype=get_default_dtype()))
        values = truncnorm.rvs(-2.0, 2.0, loc=0.0, scale=INIT_STD, size=shape, random_state=self.rng)
        return self.store.add(name, np.asarray(values, dtype=get_default_dtype()))

    def zeros(self, name, shape):
        return self.store.add(name, np.zeros(shape, dtype=get_default_dtype()))

    def ones(self, name, shape):
        return self.store.add(name, np.ones(shape, dtype=get_default_dtype()))


class StoreLookup:
    """
    Factory stand-in that hands back tensors already held in a store

    Replaying a model's declarations through it binds the layer structure to
    loaded weights, checking each shape on the way.
    """

    def __init__(self, store):
        self.store = store

    def _get(self, name, shape):
        if name not in self.store:
            raise KeyError(name)
        t = self.store[name]
        if t.shape != tuple(shape):
            raise ValueError(f"parameter {name!r} has shape {t.shape}, expected {tuple(shape)}")
        return t

    weight = _get
    zeros = _get
    ones = _get
