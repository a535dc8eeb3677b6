"""Dense tensor with reverse-mode automatic differentiation

Every differentiable operation is a ``Function`` subclass with a numpy
``forward`` and a ``backward`` that maps the output gradient to one gradient
per input. ``Function.apply`` runs the forward pass and records the node on
the graph when any input requires a gradient.

Broadcasting: binary elementwise operands must have the same rank, and every
axis must either match or be 1 on one side. Rank promotion is never implicit.
"""

import contextlib
import logging
import os
import threading
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import erf

from errors import NonFiniteError, ShapeError, ValidationError

logger = logging.getLogger(__name__)

_PRECISIONS = {"float32": np.float32, "float64": np.float64}
_default_dtype = np.float32
_check_finite = os.environ.get("TVSR_CHECK_FINITE", "0").lower() not in ("", "0", "false", "no")
_grad_mode = threading.local()


def get_default_dtype():
    """Return the numpy dtype new tensors are stored in"""
    return _default_dtype


def set_default_dtype(name):
    """Switch the global storage precision (``"float32"`` or ``"float64"``)"""
    global _default_dtype
    if name not in _PRECISIONS:
        raise ValidationError(f"unknown precision {name!r}; expected one of {sorted(_PRECISIONS)}")
    _default_dtype = _PRECISIONS[name]


@contextlib.contextmanager
def precision(name):
    """Temporarily switch the global storage precision"""
    previous = np.dtype(_default_dtype).name
    set_default_dtype(name)
    try:
        yield
    finally:
        set_default_dtype(previous)


def set_finite_checks(enabled):
    """Enable or disable the NaN/Inf check that runs after every operation"""
    global _check_finite
    _check_finite = bool(enabled)


def is_grad_enabled():
    """Return whether operations are recorded on the graph in this thread"""
    return getattr(_grad_mode, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread"""
    previous = is_grad_enabled()
    _grad_mode.enabled = False
    try:
        yield
    finally:
        _grad_mode.enabled = previous


def _check_broadcast(a_shape, b_shape, op_name):
    if a_shape == b_shape:
        return
    if len(a_shape) != len(b_shape):
        raise ShapeError(f"{op_name}: rank mismatch {a_shape} vs {b_shape} (no implicit rank promotion)")
    for a, b in zip(a_shape, b_shape):
        if a != b and a != 1 and b != 1:
            raise ShapeError(f"{op_name}: shapes {a_shape} and {b_shape} are not broadcastable")


def _unbroadcast(grad, shape):
    """Sum ``grad`` over the axes that were expanded from extent 1"""
    if grad.shape == tuple(shape):
        return grad
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True)


def _normalize_axes(axes, ndim, op_name):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    normalized = []
    for axis in axes:
        if not -ndim <= axis < ndim:
            raise ShapeError(f"{op_name}: axis {axis} out of range for rank {ndim}")
        normalized.append(axis % ndim)
    if len(set(normalized)) != len(normalized):
        raise ShapeError(f"{op_name}: repeated axis in {axes}")
    return tuple(sorted(normalized))


class Function:
    """Base class for a differentiable operation"""

    def __init__(self, *inputs):
        """
        Initialize the operation

        Args:
            *inputs: Input tensors, in the order ``backward`` returns gradients
        """
        self.inputs = inputs

    def forward(self, *arrays, **kwargs):
        """Compute the output array from the input arrays"""
        raise NotImplementedError

    def backward(self, grad):
        """Return one gradient array (or None) per input"""
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs):
        """Run the forward pass and record the node when gradients are needed"""
        fn = cls(*inputs)
        out = fn.forward(*(t.data for t in inputs), **kwargs)
        if _check_finite and not np.all(np.isfinite(out)):
            raise NonFiniteError(f"{cls.__name__} produced non-finite values")
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in inputs)
        return Tensor(out, requires_grad=requires_grad, _creator=fn if requires_grad else None)


class Tensor:
    """N-dimensional array participating in a reverse-mode differentiation graph"""

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, _creator=None):
        """
        Initialize a tensor

        Args:
            data: Array-like contents, stored row-major in the default precision
            requires_grad: Whether gradients should flow into this tensor
            _creator: The Function that produced this tensor (None for leaves)
        """
        # 0-d stays 0-d, so full reductions yield shape ()
        self.data = np.asarray(data, dtype=_default_dtype, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._creator = _creator

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._creator is None

    def numpy(self):
        """Return a copy of the data"""
        return self.data.copy()

    def item(self):
        """Return the value of a single-element tensor as a Python float"""
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self):
        """Return a new leaf sharing no graph history"""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """
        Backpropagate from this tensor through the recorded graph

        Each node is visited once, in reverse topological order; gradients of
        tensors feeding several consumers accumulate additively. Leaf tensors
        with ``requires_grad`` accumulate into ``.grad``.

        Args:
            grad: Gradient of the final objective with respect to this tensor.
                Defaults to ones for a single-element tensor.
        """
        if not self.requires_grad:
            raise ValidationError("backward() called on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a single-element tensor")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.shape:
            raise ShapeError(f"gradient shape {grad.shape} does not match tensor shape {self.shape}")

        pending = {id(self): grad}
        for node in reversed(_topological_order(self)):
            node_grad = pending.pop(id(node), None)
            if node_grad is None:
                continue
            if node._creator is None:
                if node.grad is None:
                    node.grad = np.array(node_grad, dtype=node.data.dtype, copy=True)
                else:
                    node.grad = node.grad + node_grad
                continue
            input_grads = node._creator.backward(node_grad)
            for parent, parent_grad in zip(node._creator.inputs, input_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + parent_grad
                else:
                    pending[key] = parent_grad

    # Operators

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return AddScalar.apply(self, value=float(other))
        return Add.apply(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return AddScalar.apply(self, value=-float(other))
        return Sub.apply(self, _as_tensor(other))

    def __rsub__(self, other):
        return AddScalar.apply(ScalarMul.apply(self, value=-1.0), value=float(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return ScalarMul.apply(self, value=float(other))
        return Mul.apply(self, _as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return ScalarMul.apply(self, value=1.0 / float(other))
        return Div.apply(self, _as_tensor(other))

    def __neg__(self):
        return ScalarMul.apply(self, value=-1.0)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, index):
        return slice_axes(self, index)

    # Method forms

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Permute.apply(self, axes=axes)

    def sum(self, axis=None, keepdims=False):
        return Sum.apply(self, axes=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return Mean.apply(self, axes=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims=False):
        return Max.apply(self, axes=axis, keepdims=keepdims)

    def abs(self):
        return Abs.apply(self)

    def exp(self):
        return Exp.apply(self)

    def log(self):
        return Log.apply(self)

    def sqrt(self):
        return Sqrt.apply(self)


def _as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False)


def _topological_order(root):
    """Return the graph nodes reachable from ``root``, inputs before outputs"""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node._creator is not None:
            for parent in node._creator.inputs:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


# Elementwise


class Add(Function):
    """Elementwise a + b with singleton broadcasting"""

    def forward(self, a, b):
        _check_broadcast(a.shape, b.shape, "add")
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(grad, self.shapes[1])


class Sub(Function):
    """Elementwise a - b with singleton broadcasting"""

    def forward(self, a, b):
        _check_broadcast(a.shape, b.shape, "sub")
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    """Elementwise a * b with singleton broadcasting"""

    def forward(self, a, b):
        _check_broadcast(a.shape, b.shape, "mul")
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return _unbroadcast(grad * self.b, self.a.shape), _unbroadcast(grad * self.a, self.b.shape)


class Div(Function):
    """Elementwise a / b with singleton broadcasting"""

    def forward(self, a, b):
        _check_broadcast(a.shape, b.shape, "div")
        self.a, self.b = a, b
        return a / b

    def backward(self, grad):
        grad_a = grad / self.b
        grad_b = -grad * self.a / (self.b * self.b)
        return _unbroadcast(grad_a, self.a.shape), _unbroadcast(grad_b, self.b.shape)


class AddScalar(Function):
    """Add a Python scalar to every element"""

    def forward(self, a, value):
        return a + np.asarray(value, dtype=a.dtype)

    def backward(self, grad):
        return (grad,)


class ScalarMul(Function):
    """Multiply every element by a Python scalar"""

    def forward(self, a, value):
        self.value = np.asarray(value, dtype=a.dtype)
        return a * self.value

    def backward(self, grad):
        return (grad * self.value,)


class Abs(Function):
    """Absolute value; the gradient at 0 is 0"""

    def forward(self, a):
        self.sign = np.sign(a)
        return np.abs(a)

    def backward(self, grad):
        return (grad * self.sign,)


class ClampMin(Function):
    """max(a, minimum); no gradient where the floor is active"""

    def forward(self, a, minimum):
        self.mask = a > minimum
        return np.maximum(a, np.asarray(minimum, dtype=a.dtype))

    def backward(self, grad):
        return (grad * self.mask,)


class Exp(Function):
    """Elementwise exponential"""

    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Log(Function):
    """Natural logarithm"""

    def forward(self, a):
        self.a = a
        return np.log(a)

    def backward(self, grad):
        return (grad / self.a,)


class Sqrt(Function):
    """Elementwise square root"""

    def forward(self, a):
        self.out = np.sqrt(a)
        return self.out

    def backward(self, grad):
        return (grad * 0.5 / self.out,)


class Gelu(Function):
    """Exact GELU, x·Φ(x)"""

    def forward(self, a):
        self.a = a
        self.cdf = 0.5 * (1.0 + erf(a / np.sqrt(2.0)))
        return a * self.cdf

    def backward(self, grad):
        pdf = np.exp(-0.5 * self.a * self.a) / np.sqrt(2.0 * np.pi)
        return (grad * (self.cdf + self.a * pdf),)


class Sigmoid(Function):
    """Logistic function, evaluated through tanh"""

    def forward(self, a):
        self.out = 0.5 * (1.0 + np.tanh(0.5 * a))
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


def add(a, b):
    """Elementwise sum of two tensors"""
    return Add.apply(a, b)


def sub(a, b):
    """Elementwise difference of two tensors"""
    return Sub.apply(a, b)


def mul(a, b):
    """Elementwise product of two tensors"""
    return Mul.apply(a, b)


def div(a, b):
    """Elementwise quotient of two tensors"""
    return Div.apply(a, b)


def scalar_mul(a, value):
    """Multiply by a Python scalar"""
    return ScalarMul.apply(a, value=float(value))


def clamp_min(a, minimum):
    """Clamp from below at ``minimum``"""
    return ClampMin.apply(a, minimum=float(minimum))


def gelu(a):
    """Exact GELU"""
    return Gelu.apply(a)


def sigmoid(a):
    """Logistic sigmoid"""
    return Sigmoid.apply(a)


_UNARY = {
    "abs": Abs,
    "exp": Exp,
    "ln": Log,
    "log": Log,
    "sqrt": Sqrt,
    "gelu": Gelu,
    "sigmoid": Sigmoid,
}
_BINARY = {"add": Add, "sub": Sub, "mul": Mul, "div": Div}


def elementwise(kind, a, b=None, **kwargs):
    """
    Apply an elementwise operation by name

    Args:
        kind: One of add, sub, mul, div, scalar-mul, abs, clamp-min, exp, ln,
            sqrt, gelu, sigmoid
        a: First operand
        b: Second operand for binary kinds; the scalar for scalar-mul and
            clamp-min

    Returns:
        Tensor: The result, recorded on the graph
    """
    if kind in _BINARY:
        if b is None:
            raise ValidationError(f"elementwise {kind!r} needs two operands")
        return _BINARY[kind].apply(a, _as_tensor(b))
    if kind == "scalar-mul":
        return scalar_mul(a, b if b is not None else kwargs["value"])
    if kind == "clamp-min":
        return clamp_min(a, b if b is not None else kwargs["minimum"])
    if kind in _UNARY:
        return _UNARY[kind].apply(a)
    raise ValidationError(f"unknown elementwise kind {kind!r}")


# Matrix product


class MatMul(Function):
    """Batched matrix product with equal batch extents"""

    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim:
            raise ShapeError(f"matmul: operands need equal rank >= 2, got {a.shape} and {b.shape}")
        if a.shape[:-2] != b.shape[:-2]:
            raise ShapeError(f"matmul: batch extents differ: {a.shape[:-2]} vs {b.shape[:-2]}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul: inner extents differ: {a.shape} @ {b.shape}")
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        grad_a = np.matmul(grad, np.swapaxes(self.b, -1, -2))
        grad_b = np.matmul(np.swapaxes(self.a, -1, -2), grad)
        return grad_a, grad_b


def matmul(a, b):
    """Batched matrix product of ``[..., m, k]`` and ``[..., k, n]``"""
    return MatMul.apply(a, b)


# Movement


class Reshape(Function):
    """Reshape without reordering elements"""

    def forward(self, a, shape):
        self.in_shape = a.shape
        try:
            return a.reshape(shape)
        except ValueError as e:
            raise ShapeError(f"reshape: cannot reshape {a.shape} into {shape}") from e

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Permute(Function):
    """Reorder axes"""

    def forward(self, a, axes):
        axes = tuple(axes)
        if sorted(axes) != list(range(a.ndim)):
            raise ShapeError(f"permute: {axes} is not a permutation of {a.ndim} axes")
        self.inverse = tuple(np.argsort(axes))
        return np.ascontiguousarray(np.transpose(a, axes))

    def backward(self, grad):
        return (np.ascontiguousarray(np.transpose(grad, self.inverse)),)


class Slice(Function):
    """Basic slicing; the gradient is scattered back into zeros"""

    def forward(self, a, index):
        self.in_shape = a.shape
        self.dtype = a.dtype
        self.index = index
        return np.ascontiguousarray(a[index])

    def backward(self, grad):
        full = np.zeros(self.in_shape, dtype=grad.dtype)
        full[self.index] = grad
        return (full,)


class Concat(Function):
    """Join tensors along one axis"""

    def forward(self, *arrays, axis):
        ndim = arrays[0].ndim
        if any(arr.ndim != ndim for arr in arrays):
            raise ShapeError("concat: operands differ in rank")
        self.axis = axis % ndim
        self.sizes = [arr.shape[self.axis] for arr in arrays]
        try:
            return np.concatenate(arrays, axis=self.axis)
        except ValueError as e:
            raise ShapeError(f"concat: {e}") from e

    def backward(self, grad):
        splits = np.cumsum(self.sizes)[:-1]
        return tuple(np.ascontiguousarray(g) for g in np.split(grad, splits, axis=self.axis))


class Flip(Function):
    """Reverse one axis"""

    def forward(self, a, axis):
        self.axis = _normalize_axes(axis, a.ndim, "flip")[0]
        return np.ascontiguousarray(np.flip(a, axis=self.axis))

    def backward(self, grad):
        return (np.ascontiguousarray(np.flip(grad, axis=self.axis)),)


class Roll(Function):
    """Cyclic shift along one axis"""

    def forward(self, a, shift, axis):
        self.shift = int(shift)
        self.axis = _normalize_axes(axis, a.ndim, "roll")[0]
        return np.roll(a, self.shift, axis=self.axis)

    def backward(self, grad):
        return (np.roll(grad, -self.shift, axis=self.axis),)


class PadEdge(Function):
    """Pad one axis by replicating its first and last entries"""

    def forward(self, a, axis, before, after):
        if before < 0 or after < 0:
            raise ShapeError("pad-edge: pad widths must be non-negative")
        self.axis = _normalize_axes(axis, a.ndim, "pad-edge")[0]
        self.before, self.after = int(before), int(after)
        self.length = a.shape[self.axis]
        widths = [(0, 0)] * a.ndim
        widths[self.axis] = (self.before, self.after)
        return np.pad(a, widths, mode="edge")

    def backward(self, grad):
        g = np.moveaxis(grad, self.axis, 0)
        core = g[self.before:self.before + self.length].copy()
        if self.before:
            core[0] += g[:self.before].sum(axis=0)
        if self.after:
            core[-1] += g[self.before + self.length:].sum(axis=0)
        return (np.ascontiguousarray(np.moveaxis(core, 0, self.axis)),)


def reshape(x, shape):
    """Reshape ``x`` to ``shape`` (one extent may be -1)"""
    return Reshape.apply(x, shape=tuple(shape))


def permute(x, axes):
    """Reorder the axes of ``x``"""
    return Permute.apply(x, axes=tuple(axes))


def slice_axes(x, index):
    """Basic slicing (integers are not allowed; use slices to keep rank)"""
    if not isinstance(index, tuple):
        index = (index,)
    for item in index:
        if not isinstance(item, slice) and item is not Ellipsis:
            raise ShapeError("slice: only slice objects and Ellipsis are supported")
    return Slice.apply(x, index=index)


def concat(tensors: Sequence[Tensor], axis):
    """Concatenate along ``axis``"""
    return Concat.apply(*tensors, axis=axis)


def flip(x, axis):
    """Reverse ``axis``"""
    return Flip.apply(x, axis=axis)


def roll(x, shift, axis):
    """Shift ``axis`` cyclically by ``shift``"""
    return Roll.apply(x, shift=shift, axis=axis)


def pad_edge(x, axis, before, after):
    """Replicate the edge entries of ``axis`` before and after"""
    return PadEdge.apply(x, axis=axis, before=before, after=after)


def movement(kind, x, spec):
    """
    Apply a value-preserving rearrangement by name

    Args:
        kind: reshape, permute-axes, slice, concat, flip-axis, roll or
            pad-edge-replicate
        x: Input tensor (a sequence of tensors for concat)
        spec: shape / axes / index / axis / dict(shift, axis) /
            dict(axis, before, after)
    """
    if kind == "reshape":
        return reshape(x, spec)
    if kind == "permute-axes":
        return permute(x, spec)
    if kind == "slice":
        return slice_axes(x, spec)
    if kind == "concat":
        return concat(x, spec)
    if kind == "flip-axis":
        return flip(x, spec)
    if kind == "roll":
        return roll(x, spec["shift"], spec["axis"])
    if kind == "pad-edge-replicate":
        return pad_edge(x, spec["axis"], spec["before"], spec["after"])
    raise ValidationError(f"unknown movement kind {kind!r}")


# Reductions


class Sum(Function):
    """Sum over the given axes"""

    def forward(self, a, axes, keepdims):
        self.in_shape = a.shape
        self.axes = _normalize_axes(axes, a.ndim, "sum")
        self.keepdims = keepdims
        return np.asarray(a.sum(axis=self.axes, keepdims=keepdims))

    def backward(self, grad):
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axes)
        return (np.broadcast_to(grad, self.in_shape).copy(),)


class Mean(Function):
    """Mean over the given axes"""

    def forward(self, a, axes, keepdims):
        self.in_shape = a.shape
        self.axes = _normalize_axes(axes, a.ndim, "mean")
        self.keepdims = keepdims
        self.count = int(np.prod([a.shape[i] for i in self.axes])) if self.axes else 1
        return np.asarray(a.mean(axis=self.axes, keepdims=keepdims))

    def backward(self, grad):
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axes)
        return (np.broadcast_to(grad / self.count, self.in_shape).copy(),)


class Max(Function):
    """Maximum; tied maxima share the gradient equally"""

    def forward(self, a, axes, keepdims):
        self.axes = _normalize_axes(axes, a.ndim, "max")
        self.keepdims = keepdims
        out = a.max(axis=self.axes, keepdims=True)
        mask = a == out
        self.weights = mask / mask.sum(axis=self.axes, keepdims=True)
        return np.asarray(out if keepdims else np.squeeze(out, axis=self.axes))

    def backward(self, grad):
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axes)
        return (grad * self.weights,)


class L2Norm(Function):
    """Euclidean norm along one axis; the gradient at a zero vector is 0"""

    def forward(self, a, axis, keepdims):
        self.axes = _normalize_axes(axis, a.ndim, "l2-norm")
        if len(self.axes) != 1:
            raise ShapeError("l2-norm reduces along exactly one axis")
        self.keepdims = keepdims
        self.a = a
        self.norm = np.sqrt((a * a).sum(axis=self.axes, keepdims=True))
        return self.norm if keepdims else np.squeeze(self.norm, axis=self.axes)

    def backward(self, grad):
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axes)
        safe = np.where(self.norm > 0, self.norm, 1.0)
        return (np.where(self.norm > 0, grad * self.a / safe, 0.0).astype(self.a.dtype),)


def l2_norm(x, axis, keepdims=False):
    """Euclidean norm along one axis"""
    return L2Norm.apply(x, axis=axis, keepdims=keepdims)


def reductions(kind, x, axes=None, keepdims=False):
    """
    Reduce a tensor by name

    Args:
        kind: sum, mean, max or l2-norm (the latter needs exactly one axis)
        x: Input tensor
        axes: Axis or axes to reduce; None reduces everything
        keepdims: Keep reduced axes with extent 1
    """
    if kind == "sum":
        return Sum.apply(x, axes=axes, keepdims=keepdims)
    if kind == "mean":
        return Mean.apply(x, axes=axes, keepdims=keepdims)
    if kind == "max":
        return Max.apply(x, axes=axes, keepdims=keepdims)
    if kind == "l2-norm":
        if axes is None or (not isinstance(axes, int) and len(axes) == 0):
            raise ShapeError("l2-norm needs an axis")
        return l2_norm(x, axes, keepdims=keepdims)
    raise ValidationError(f"unknown reduction kind {kind!r}")


class Softmax(Function):
    """Softmax along one axis"""

    def forward(self, a, axis):
        self.axis = axis
        shifted = a - a.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / e.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, grad):
        inner = (grad * self.out).sum(axis=self.axis, keepdims=True)
        return (self.out * (grad - inner),)


def softmax(x, axis=-1):
    """Softmax along ``axis`` with max-subtraction"""
    return Softmax.apply(x, axis=axis)
