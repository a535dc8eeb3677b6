"""Adam optimizer with bias correction"""

import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from errors import ShapeError, ValidationError

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Per-parameter moment buffers and hyperparameters"""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0:
            raise ValidationError(f"learning rate must be >= 0, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValidationError(f"betas must lie in [0, 1), got ({self.beta1}, {self.beta2})")
        if self.eps <= 0:
            raise ValidationError(f"eps must be > 0, got {self.eps}")


def adam_step(params, grads, state: AdamState):
    """
    Apply one Adam update in place

    Args:
        params: Mapping of name -> Tensor; ``.data`` is updated in place
        grads: Mapping of name -> gradient array; missing names count as zero
        state: Moment buffers, advanced by one step

    Returns:
        AdamState: The same state object
    """
    state.step += 1
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(param.data)
        if grad.shape != param.data.shape:
            raise ShapeError(f"gradient for {name!r} has shape {grad.shape}, parameter has {param.data.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        m, v = state.m[name], state.v[name]
        if m.shape != param.data.shape:
            raise ShapeError(f"moment buffer for {name!r} has shape {m.shape}, parameter has {param.data.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * (grad * grad)
        m_hat = m / bias1
        v_hat = v / bias2
        param.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.data.dtype)
    return state
