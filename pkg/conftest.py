"""Shared pytest fixtures"""

import numpy as np
import pytest

from network.config import ModelConfig
from tensor_core.tensor import set_finite_checks
from volumes.phantom import PhantomSpec


@pytest.fixture(autouse=True)
def finite_checks():
    """Run every test with NaN/Inf detection on"""
    set_finite_checks(True)
    yield
    set_finite_checks(False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """A model small enough for 64-bit gradient checks"""
    return ModelConfig(embed_dim=8, heads=2, encoder_depth=2, n_fim=1, window=4, upsample=4, bias_hidden=8, vit_patch=4)


@pytest.fixture
def small_phantom():
    """A 32-slice phantom with a 4x thick counterpart"""
    return PhantomSpec(seed=3, dims=(32, 32, 32), n_ellipsoids=3, n_tubes=2, thick_spacing_mm=4.0)
