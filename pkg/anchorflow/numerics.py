#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# anchorflow/numerics.py

"""A small dense reverse-mode autodiff engine on top of numpy.

Every differentiable op is a :class:`Function` subclass with an explicit
``forward`` and ``backward``. The public functional ops (``matmul``,
``softmax``, ``layernorm``, ...) are wrapped in
:class:`~anchorflow.decorators.FiniteGuard`, so a NaN or Inf is raised at
the op that produced it.

>>> a = Parameter(np.array([[1.0, 2.0], [3.0, 4.0]]))
>>> loss = summed(matmul(a, np.eye(2)) * 2.0)
>>> loss.item()
20.0
>>> loss.backward()
>>> a.grad.tolist()
[[2.0, 2.0], [2.0, 2.0]]
"""

from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import math
from abc import ABC, abstractmethod
from collections import OrderedDict

import numpy as np

from anchorflow.decorators import FiniteGuard
from anchorflow.errors import DomainError, ShapeError

__all__ = [
    'DTYPE', 'Tensor', 'Parameter', 'Function', 'ParameterRegistry',
    'as_tensor', 'matmul', 'add', 'sub', 'mul', 'div', 'neg', 'power',
    'summed', 'mean', 'reshape', 'transpose', 'index', 'concat',
    'softmax', 'normalize', 'layernorm', 'gelu', 'attention',
    'snap_float32', 'numerical_gradient', 'relative_error',
]

DTYPE = np.float64
LAYERNORM_EPS = 1e-5
_GELU_K = math.sqrt(2.0 / math.pi)

ArrayLike = Union['Tensor', np.ndarray, float, int]


class Tensor:
    """A float64 array that remembers the op that produced it."""
    __slots__ = ('data', 'grad', 'ctx', 'requires_grad', 'name')
    # make numpy hand mixed expressions (ndarray + Tensor) back to Tensor
    __array_ufunc__ = None

    def __init__(self, data: object, ctx: 'Function' = None,
                 requires_grad: bool = False, name: str = None) -> None:
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.ctx = ctx
        self.requires_grad = requires_grad
        self.name = name

    def __repr__(self) -> str:
        label = ' {0}'.format(self.name) if self.name else ''
        return '<Tensor{0} shape={1}>'.format(label, self.shape)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return len(self.data)

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> 'Tensor':
        return Tensor(self.data)

    # arithmetic routes through the guarded functional ops
    def __add__(self, other: ArrayLike) -> 'Tensor': return add(self, other)
    def __radd__(self, other: ArrayLike) -> 'Tensor': return add(other, self)
    def __sub__(self, other: ArrayLike) -> 'Tensor': return sub(self, other)
    def __rsub__(self, other: ArrayLike) -> 'Tensor': return sub(other, self)
    def __mul__(self, other: ArrayLike) -> 'Tensor': return mul(self, other)
    def __rmul__(self, other: ArrayLike) -> 'Tensor': return mul(other, self)
    def __truediv__(self, other: ArrayLike) -> 'Tensor': return div(self, other)
    def __rtruediv__(self, other: ArrayLike) -> 'Tensor': return div(other, self)
    def __matmul__(self, other: ArrayLike) -> 'Tensor': return matmul(self, other)
    def __rmatmul__(self, other: ArrayLike) -> 'Tensor': return matmul(other, self)
    def __neg__(self) -> 'Tensor': return neg(self)
    def __pow__(self, exponent: float) -> 'Tensor': return power(self, exponent)
    def __getitem__(self, key: object) -> 'Tensor': return index(self, key)

    def reshape(self, *shape: int) -> 'Tensor':
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes: int) -> 'Tensor':
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis: Union[int, Tuple[int, ...]] = None,
            keepdims: bool = False) -> 'Tensor':
        return summed(self, axis, keepdims)

    def mean(self, axis: Union[int, Tuple[int, ...]] = None,
             keepdims: bool = False) -> 'Tensor':
        return mean(self, axis, keepdims)

    def backward(self, grad: np.ndarray = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that
        requires a gradient. Without `grad`, self must be a scalar.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError('backward() without a seed gradient needs a '
                                 'scalar, got shape {0}'.format(self.shape))
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads: Dict[int, np.ndarray] = {id(self): np.asarray(grad, DTYPE)}
        for node in order:
            node_grad = grads.pop(id(node), None)
            if node_grad is None:
                continue
            if node.ctx is None:
                if node.requires_grad:
                    node.grad = (node_grad.copy() if node.grad is None
                                 else node.grad + node_grad)
                continue
            parent_grads = node.ctx.backward(node_grad)
            for parent, parent_grad in zip(node.ctx.parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + parent_grad
                else:
                    grads[key] = parent_grad


class Parameter(Tensor):
    """A trainable leaf tensor."""
    __slots__ = ()

    def __init__(self, data: object, name: str = None) -> None:
        super(Parameter, self).__init__(data, requires_grad=True, name=name)

    def __repr__(self) -> str:
        return '<Parameter {0} shape={1}>'.format(self.name, self.shape)


def _topological_order(root: Tensor) -> List[Tensor]:
    """Nodes reachable from `root`, every node before its parents."""
    visited = set()
    post_order: List[Tensor] = []
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            post_order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node.ctx is not None:
            for parent in reversed(node.ctx.parents):
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    post_order.reverse()
    return post_order


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Function(ABC):
    """Abstract differentiable op.
    Subclasses implement `forward` on raw arrays and `backward`, which maps
    the output gradient to one gradient (or None) per input.
    """

    def __init__(self, *parents: Tensor) -> None:
        self.parents = parents

    @classmethod
    def apply(cls, *inputs: ArrayLike, **options: object) -> Tensor:
        parents = tuple(as_tensor(value) for value in inputs)
        fn = cls(*parents)
        out = fn.forward(*(p.data for p in parents), **options)
        requires_grad = any(p.requires_grad for p in parents)
        return Tensor(out, ctx=fn if requires_grad else None,
                      requires_grad=requires_grad)

    @abstractmethod
    def forward(self, *arrays: np.ndarray, **options: object) -> np.ndarray:
        """Compute the output from the input arrays."""

    @abstractmethod
    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        """Gradients w.r.t. the inputs, in input order."""


class Add(Function):
    def forward(self, a, b):
        self.shapes = a.shape, b.shape
        return a + b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, a, b):
        self.shapes = a.shape, b.shape
        return a - b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return (_unbroadcast(grad * self.b, self.a.shape),
                _unbroadcast(grad * self.a, self.b.shape))


class Div(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a / b

    def backward(self, grad):
        return (_unbroadcast(grad / self.b, self.a.shape),
                _unbroadcast(-grad * self.a / (self.b * self.b), self.b.shape))


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Power(Function):
    def forward(self, a, exponent):
        self.a, self.exponent = a, exponent
        return a ** exponent

    def backward(self, grad):
        return (grad * self.exponent * self.a ** (self.exponent - 1),)


class MatMul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        grad_a = grad_b = None
        if self.parents[0].requires_grad:
            grad_a = _unbroadcast(np.matmul(grad, np.swapaxes(self.b, -1, -2)),
                                  self.a.shape)
        if self.parents[1].requires_grad:
            grad_b = _unbroadcast(np.matmul(np.swapaxes(self.a, -1, -2), grad),
                                  self.b.shape)
        return grad_a, grad_b


class Sum(Function):
    def forward(self, a, axis, keepdims):
        self.shape, self.axis, self.keepdims = a.shape, axis, keepdims
        return a.sum(axis=axis, keepdims=keepdims)

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.shape).copy(),)


class Reshape(Function):
    def forward(self, a, shape):
        self.shape = a.shape
        return a.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Transpose(Function):
    def forward(self, a, axes):
        self.axes = axes if axes is not None else tuple(reversed(range(a.ndim)))
        return np.transpose(a, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class Index(Function):
    def forward(self, a, key):
        self.shape, self.key = a.shape, key
        return np.array(a[key], dtype=DTYPE)

    def backward(self, grad):
        full = np.zeros(self.shape, dtype=DTYPE)
        np.add.at(full, self.key, grad)
        return (full,)


class Concat(Function):
    def forward(self, *arrays, axis):
        self.axis = axis
        self.sizes = [array.shape[axis] for array in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        cuts = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, cuts, axis=self.axis))


class Softmax(Function):
    def forward(self, a, axis):
        shifted = a - a.max(axis=axis, keepdims=True)
        exps = np.exp(shifted)
        self.out, self.axis = exps / exps.sum(axis=axis, keepdims=True), axis
        return self.out

    def backward(self, grad):
        inner = (grad * self.out).sum(axis=self.axis, keepdims=True)
        return (self.out * (grad - inner),)


class Normalize(Function):
    """Zero mean, unit variance over the last axis."""

    def forward(self, a, eps):
        centred = a - a.mean(axis=-1, keepdims=True)
        variance = (centred * centred).mean(axis=-1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(variance + eps)
        self.out = centred * self.inv_std
        return self.out

    def backward(self, grad):
        mean_grad = grad.mean(axis=-1, keepdims=True)
        mean_proj = (grad * self.out).mean(axis=-1, keepdims=True)
        return (self.inv_std * (grad - mean_grad - self.out * mean_proj),)


class Gelu(Function):
    """Tanh approximation of the Gaussian error linear unit."""

    def forward(self, a):
        self.a = a
        self.t = np.tanh(_GELU_K * (a + 0.044715 * a ** 3))
        return 0.5 * a * (1.0 + self.t)

    def backward(self, grad):
        a, t = self.a, self.t
        inner = _GELU_K * (1.0 + 3 * 0.044715 * a * a)
        local = 0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * inner
        return (grad * local,)


@FiniteGuard
def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Add.apply(a, b)


@FiniteGuard
def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Sub.apply(a, b)


@FiniteGuard
def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Mul.apply(a, b)


@FiniteGuard
def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    with np.errstate(divide='ignore', invalid='ignore'):
        return Div.apply(a, b)


@FiniteGuard
def neg(a: ArrayLike) -> Tensor:
    return Neg.apply(a)


@FiniteGuard
def power(a: ArrayLike, exponent: float) -> Tensor:
    with np.errstate(divide='ignore', invalid='ignore'):
        return Power.apply(a, exponent=float(exponent))


@FiniteGuard
def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product over the last two axes, leading axes broadcast.
    >>> matmul(np.array([[1.0, 0.0]]), np.array([[5.0], [7.0]])).data.tolist()
    [[5.0]]
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError('matmul needs operands of rank >= 2, got {0} and {1}'
                         .format(a.shape, b.shape))
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError('matmul inner extents differ: {0} @ {1}'
                         .format(a.shape, b.shape))
    return MatMul.apply(a, b)


@FiniteGuard
def summed(a: ArrayLike, axis: Union[int, Tuple[int, ...]] = None,
           keepdims: bool = False) -> Tensor:
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a: ArrayLike, axis: Union[int, Tuple[int, ...]] = None,
         keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return summed(a, axis, keepdims) * (1.0 / count)


@FiniteGuard
def reshape(a: ArrayLike, shape: Tuple[int, ...]) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


@FiniteGuard
def transpose(a: ArrayLike, axes: Tuple[int, ...] = None) -> Tensor:
    return Transpose.apply(a, axes=None if axes is None else tuple(axes))


@FiniteGuard
def index(a: ArrayLike, key: object) -> Tensor:
    return Index.apply(a, key=key)


@FiniteGuard
def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError('concat needs at least one operand')
    return Concat.apply(*tensors, axis=axis)


@FiniteGuard
def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max subtraction).
    >>> softmax(np.array([math.log(2.0), 0.0])).data.round(6).tolist()
    [0.666667, 0.333333]
    """
    x = as_tensor(x)
    if x.data.size == 0 or x.shape[axis] == 0:
        raise DomainError('softmax of an empty input')
    return Softmax.apply(x, axis=axis)


@FiniteGuard
def normalize(x: ArrayLike, eps: float = LAYERNORM_EPS) -> Tensor:
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] < 2:
        raise ShapeError('layernorm needs a normalized axis of extent >= 2, '
                         'got shape {0}'.format(x.shape))
    return Normalize.apply(x, eps=eps)


def layernorm(x: ArrayLike, scale: ArrayLike = None,
              shift: ArrayLike = None) -> Tensor:
    """Layer normalization over the last axis with an optional affine part."""
    out = normalize(x)
    if scale is not None:
        out = out * scale
    if shift is not None:
        out = out + shift
    return out


@FiniteGuard
def gelu(x: ArrayLike) -> Tensor:
    return Gelu.apply(x)


def attention(q: ArrayLike, k: ArrayLike, v: ArrayLike,
              mask: np.ndarray = None) -> Tensor:
    """Scaled dot-product attention, softmax over the key axis.
    Inputs are ``(..., n, d)``; `mask` is additive, broadcast to the logits.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError('query and key head dims differ: {0} vs {1}'
                         .format(q.shape[-1], k.shape[-1]))
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError('keys and values differ in count: {0} vs {1}'
                         .format(k.shape, v.shape))
    axes = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    logits = matmul(q, transpose(k, axes)) * (1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        logits = logits + mask
    return matmul(softmax(logits, axis=-1), v)


class ParameterRegistry:
    """Ordered name → Parameter store of one model."""

    def __init__(self) -> None:
        self._params: 'OrderedDict[str, Parameter]' = OrderedDict()

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def items(self) -> Iterator[Tuple[str, Parameter]]:
        return iter(self._params.items())

    def create(self, name: str, data: np.ndarray) -> Parameter:
        if name in self._params:
            raise KeyError('parameter {0!r} registered twice'.format(name))
        param = Parameter(snap_float32(data), name=name)
        self._params[name] = param
        return param

    def size(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def zero_grad(self) -> None:
        for param in self._params.values():
            param.grad = None

    def gradients(self) -> 'OrderedDict[str, np.ndarray]':
        """Gradient of every parameter; exact zeros for untouched ones."""
        return OrderedDict(
            (name, p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
            for name, p in self._params.items())

    def state(self) -> 'OrderedDict[str, np.ndarray]':
        return OrderedDict((name, p.data.copy())
                           for name, p in self._params.items())

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        missing = set(self._params) ^ set(state)
        if missing:
            raise KeyError('parameter sets differ: {0}'.format(sorted(missing)))
        for name, param in self._params.items():
            value = np.asarray(state[name], dtype=DTYPE)
            if value.shape != param.shape:
                raise ShapeError('parameter {0!r}: shape {1} != {2}'
                                 .format(name, value.shape, param.shape))
            param.data = value.copy()


def snap_float32(data: np.ndarray) -> np.ndarray:
    """Round to the nearest float32 so the value survives a f32 checkpoint."""
    return np.asarray(data, dtype=np.float32).astype(DTYPE)


def numerical_gradient(fn: Callable[[], float], array: np.ndarray,
                       positions: Sequence[Tuple[int, ...]] = None,
                       step: float = 1e-3) -> np.ndarray:
    """Central finite differences of `fn` w.r.t. entries of `array`.
    `array` is perturbed in place and restored; `fn` must read it.
    :return: Array of derivatives, one per position (all entries if None)
    :rtype: numpy.ndarray
    """
    if positions is None:
        positions = list(np.ndindex(*array.shape))
    out = np.zeros(len(positions), dtype=DTYPE)
    for slot, position in enumerate(positions):
        original = array[position]
        array[position] = original + step
        upper = fn()
        array[position] = original - step
        lower = fn()
        array[position] = original
        out[slot] = (upper - lower) / (2.0 * step)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray,
                   floor: float = 1e-8) -> float:
    """``|a - n| / max(|a|, |n|, floor)`` with Euclidean norms over all entries."""
    analytic = np.asarray(analytic, dtype=DTYPE).ravel()
    numeric = np.asarray(numeric, dtype=DTYPE).ravel()
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / scale)


if __name__ == '__main__':
    import doctest
    test_results = doctest.testmod()
    print(test_results)
