"""Central finite-difference check of analytic gradients"""

import logging

import numpy as np

from errors import ValidationError
from tensor_core.tensor import no_grad

logger = logging.getLogger(__name__)


def _relative_error(analytic, numeric, floor):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(fn, inputs, epsilon=1e-6, max_coords=None, seed=0, floor=1e-3):
    """
    Compare backward() against central differences

    Args:
        fn: Callable taking the input tensors and returning a single-element tensor
        inputs: Leaf tensors (64-bit, requires_grad) to differentiate against
        epsilon: Finite-difference step
        max_coords: Check at most this many coordinates per input, chosen at random
        seed: Seed for coordinate sampling
        floor: Lower bound on the denominator of the relative error, so that
            near-zero gradients are compared absolutely

    Returns:
        float: Worst relative error over all checked coordinates
    """
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ValidationError("grad_check needs 64-bit inputs; wrap the setup in precision('float64')")
        if not t.requires_grad:
            raise ValidationError("grad_check inputs must require grad")
        t.zero_grad()

    out = fn(*inputs)
    if out.size != 1:
        raise ValidationError(f"grad_check needs a scalar-valued fn, got shape {out.shape}")
    out.backward()

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for i in coords:
            original = flat[i]
            with no_grad():
                flat[i] = original + epsilon
                plus = fn(*inputs).item()
                flat[i] = original - epsilon
                minus = fn(*inputs).item()
            flat[i] = original
            numeric = (plus - minus) / (2.0 * epsilon)
            worst = max(worst, _relative_error(float(analytic.reshape(-1)[i]), numeric, floor))
    logger.debug("grad_check worst relative error %.3e", worst)
    return worst
