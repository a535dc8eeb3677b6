"""Building blocks shared by the encoder and decoder"""

import functools
import logging
from dataclasses import dataclass

import numpy as np

from errors import ShapeError, ValidationError
from tensor_core.tensor import Function, Tensor, gelu, pad_edge, permute, reshape, roll, slice_axes

logger = logging.getLogger(__name__)

LN_EPS = 1e-5
SHIFT_MASK_VALUE = -100.0


@dataclass
class LinearLayer:
    """Affine projection ``x @ weight.T + bias`` with weight ``[out, in]``"""

    name: str
    weight: Tensor
    bias: Tensor

    @property
    def in_features(self):
        return self.weight.shape[1]

    @property
    def out_features(self):
        return self.weight.shape[0]

    @classmethod
    def create(cls, factory, name, in_features, out_features, zero=False):
        """Declare the layer's parameters on a ParameterFactory"""
        if zero:
            weight = factory.zeros(f"{name}.weight", (out_features, in_features))
        else:
            weight = factory.weight(f"{name}.weight", (out_features, in_features))
        bias = factory.zeros(f"{name}.bias", (out_features,))
        return cls(name, weight, bias)


@dataclass
class LayerNormParams:
    """Per-channel gain and offset of a layer normalization"""

    gain: Tensor
    offset: Tensor
    epsilon: float = LN_EPS

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValidationError("layer norm epsilon must be > 0")

    @classmethod
    def create(cls, factory, name, dim):
        return cls(factory.ones(f"{name}.gain", (dim,)), factory.zeros(f"{name}.offset", (dim,)))


@dataclass(frozen=True)
class WindowSpec:
    """1D attention window along a token axis"""

    window: int
    shift: int = 0

    def __post_init__(self):
        if self.window < 1:
            raise ValidationError(f"window must be >= 1, got {self.window}")
        if not 0 <= self.shift < self.window:
            raise ValidationError(f"shift must satisfy 0 <= shift < window, got {self.shift} for window {self.window}")

    def fitted(self, length):
        """A window no longer than the sequence; shifting is pointless for a single window"""
        if length <= self.window:
            return WindowSpec(length, 0)
        return self


@dataclass(frozen=True)
class WindowLayout:
    """How a sequence was padded and cut into windows"""

    length: int
    padded_length: int
    spec: WindowSpec

    @property
    def n_windows(self):
        return self.padded_length // self.spec.window


def linear(x, layer: LinearLayer):
    """Apply ``layer`` to the trailing axis of ``x``"""
    if x.shape[-1] != layer.in_features:
        raise ShapeError(f"{layer.name}: expected trailing extent {layer.in_features}, got {x.shape}")
    lead = x.shape[:-1]
    flat = reshape(x, (-1, layer.in_features))
    out = flat @ permute(layer.weight, (1, 0)) + reshape(layer.bias, (1, layer.out_features))
    return reshape(out, lead + (layer.out_features,))


class LayerNormFn(Function):
    """Normalization over the trailing axis, fused forward and backward"""

    def forward(self, x, gain, offset, eps):
        if x.shape[-1] < 2:
            raise ShapeError("layer_norm needs an extent of at least 2 along the normalized axis")
        mean = x.mean(axis=-1, keepdims=True)
        centered = x - mean
        var = (centered * centered).mean(axis=-1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.xhat = centered * self.inv_std
        self.gain = gain
        return self.xhat * gain + offset

    def backward(self, grad):
        lead_axes = tuple(range(grad.ndim - 1))
        grad_gain = (grad * self.xhat).sum(axis=lead_axes)
        grad_offset = grad.sum(axis=lead_axes)
        gxhat = grad * self.gain
        grad_x = self.inv_std * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - self.xhat * (gxhat * self.xhat).mean(axis=-1, keepdims=True)
        )
        return grad_x, grad_gain, grad_offset


def layer_norm(x, params: LayerNormParams, axis=-1):
    """Zero-mean unit-variance normalization along ``axis``, then gain and offset"""
    axis = axis % x.ndim
    if axis == x.ndim - 1:
        return LayerNormFn.apply(x, params.gain, params.offset, eps=params.epsilon)
    order = [i for i in range(x.ndim) if i != axis] + [axis]
    inverse = tuple(int(i) for i in np.argsort(order))
    return permute(LayerNormFn.apply(permute(x, order), params.gain, params.offset, eps=params.epsilon), inverse)


def mlp(x, fc1: LinearLayer, fc2: LinearLayer):
    """Two-layer perceptron with GELU"""
    return linear(gelu(linear(x, fc1)), fc2)


def window_partition(x, spec: WindowSpec):
    """
    Cut ``[B, L, d]`` into ``[B*nw, w, d]`` windows

    The sequence is padded to a multiple of the window by repeating its last
    token, then rolled left by ``spec.shift``.

    Returns:
        (windows, WindowLayout)
    """
    if x.ndim != 3:
        raise ShapeError(f"window_partition expects [B, L, d], got {x.shape}")
    batch, length, dim = x.shape
    spec = spec.fitted(length)
    padded = -(-length // spec.window) * spec.window
    if padded > length:
        x = pad_edge(x, axis=1, before=0, after=padded - length)
    if spec.shift:
        x = roll(x, -spec.shift, axis=1)
    layout = WindowLayout(length, padded, spec)
    return reshape(x, (batch * layout.n_windows, spec.window, dim)), layout


def window_reverse(windows, layout: WindowLayout):
    """Inverse of window_partition, cropped back to the unpadded length"""
    spec = layout.spec
    dim = windows.shape[-1]
    x = reshape(windows, (-1, layout.padded_length, dim))
    if spec.shift:
        x = roll(x, spec.shift, axis=1)
    if layout.padded_length > layout.length:
        x = slice_axes(x, (slice(None), slice(0, layout.length), slice(None)))
    return x


@functools.lru_cache(maxsize=64)
def shift_mask(padded_length, window, shift):
    """
    Additive mask ``[nw, w, w]`` that blocks pairs which only became
    neighbours through the cyclic shift
    """
    n_windows = padded_length // window
    if shift == 0:
        mask = np.zeros((n_windows, window, window))
        mask.setflags(write=False)
        return mask
    labels = np.zeros(padded_length)
    labels[padded_length - window:padded_length - shift] = 1
    labels[padded_length - shift:] = 2
    windows = labels.reshape(n_windows, window)
    diff = windows[:, None, :] - windows[:, :, None]
    mask = np.where(diff != 0, SHIFT_MASK_VALUE, 0.0)
    mask.setflags(write=False)
    return mask


def depth_subpixel(x, r):
    """
    Rearrange ``[B, D, H, W, r*c]`` into ``[B, r*D, H, W, c]``

    Channel group ``i`` of slice ``z`` becomes output slice ``r*z + i``.
    """
    if x.ndim != 5:
        raise ShapeError(f"depth_subpixel expects [B, D, H, W, C], got {x.shape}")
    batch, depth, height, width, channels = x.shape
    if r < 1 or channels % r:
        raise ShapeError(f"depth_subpixel: {channels} channels not divisible by r={r}")
    c = channels // r
    x = reshape(x, (batch, depth, height, width, r, c))
    x = permute(x, (0, 1, 4, 2, 3, 5))
    return reshape(x, (batch, depth * r, height, width, c))


def depth_unshuffle(x, r):
    """Inverse of depth_subpixel"""
    batch, depth, height, width, c = x.shape
    if r < 1 or depth % r:
        raise ShapeError(f"depth_unshuffle: depth {depth} not divisible by r={r}")
    x = reshape(x, (batch, depth // r, r, height, width, c))
    x = permute(x, (0, 1, 3, 4, 2, 5))
    return reshape(x, (batch, depth // r, height, width, r * c))
