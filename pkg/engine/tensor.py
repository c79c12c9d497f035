"""Dense tensors with tape-based reverse-mode automatic differentiation.

Every differentiable operation is a :class:`Function` subclass. ``apply`` runs
the forward kernel on the operands' numpy arrays and, when a
:class:`ComputationTape` is active on the current thread and an operand
requires a gradient, appends a node to that tape. :func:`backward` walks the
tape in reverse and hands each node its output gradient exactly once.

Arithmetic is float32 unless a different default is selected with
:func:`default_dtype` (the gradient checks run in float64).
"""
import contextlib
import logging
import threading
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from django.db import models
from scipy.special import expit

from .exceptions import ContractError, ShapeError

logger = logging.getLogger(__name__)

_local = threading.local()

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]
Axes = Optional[Union[int, Sequence[int]]]


class BinaryKind(models.TextChoices):
    ADD = 'add'
    SUB = 'sub'
    MUL = 'mul'


class ReduceKind(models.TextChoices):
    SUM = 'sum'
    MEAN = 'mean'
    MAX = 'max'


def get_default_dtype():
    return getattr(_local, 'dtype', np.float32)


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype new tensors are created with (per thread)."""
    previous = get_default_dtype()
    _local.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _local.dtype = previous


class Tensor:
    """A dense row-major array, optionally tracked for differentiation."""

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        # full reductions stay 0-d
        self.data = np.asarray(data, dtype=get_default_dtype(), order='C')
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f'item() needs a single-element tensor, got shape {self.shape}')
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, grad: np.ndarray) -> None:
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.shape:
            raise ShapeError(f'gradient shape {grad.shape} does not match tensor shape {self.shape}')
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def detach(self) -> 'Tensor':
        return Tensor(self.data.copy())

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axes: Axes = None, keepdims: bool = False) -> 'Tensor':
        return Sum.apply(self, axes=axes, keepdims=keepdims)

    def mean(self, axes: Axes = None, keepdims: bool = False) -> 'Tensor':
        return Mean.apply(self, axes=axes, keepdims=keepdims)

    def max(self, axes: Axes = None, keepdims: bool = False) -> 'Tensor':
        return Max.apply(self, axes=axes, keepdims=keepdims)

    def reshape(self, *shape: int) -> 'Tensor':
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def __repr__(self):
        flag = ', requires_grad=True' if self.requires_grad else ''
        return f'Tensor(shape={self.shape}{flag})'


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# ==================== Tape ====================

@dataclass
class TapeNode:
    function: 'Function'
    inputs: Tuple[Tensor, ...]
    output: Tensor


class ComputationTape:
    """Ordered record of the differentiable ops executed while it is active.

    Nodes are appended in execution order, so every node's inputs were
    produced before it (or are leaves).
    """

    def __init__(self):
        self.nodes: list = []

    def record(self, function: 'Function', inputs: Tuple[Tensor, ...], output: Tensor) -> None:
        self.nodes.append(TapeNode(function, inputs, output))

    def __len__(self):
        return len(self.nodes)

    def __enter__(self) -> 'ComputationTape':
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc_info):
        _tape_stack().pop()
        return False


def _tape_stack() -> list:
    if not hasattr(_local, 'tapes'):
        _local.tapes = []
    return _local.tapes


def current_tape() -> Optional[ComputationTape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


def backward(loss: Tensor, tape: ComputationTape) -> None:
    """Populate ``grad`` of every requires_grad tensor the loss depends on.

    Gradients add onto whatever ``grad`` already holds.
    """
    if loss.size != 1:
        raise ContractError(f'backward needs a scalar loss, got shape {loss.shape}')

    pending = {id(loss): np.ones_like(loss.data)}
    tensors = {id(loss): loss}
    for node in reversed(tape.nodes):
        grad = pending.pop(id(node.output), None)
        if grad is None:
            continue
        node.output.accumulate_grad(grad)
        input_grads = node.function.backward(grad)
        for tensor, input_grad in zip(node.inputs, input_grads):
            if input_grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            tensors[key] = tensor
            pending[key] = pending[key] + input_grad if key in pending else input_grad

    # whatever is left was never produced on the tape: leaves
    for key, grad in pending.items():
        tensor = tensors[key]
        if tensor.requires_grad:
            tensor.accumulate_grad(grad)


# ==================== Functions ====================

class Function:
    """Base class for differentiable operations."""

    def __init__(self, **options):
        self.options = options

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **options) -> Tensor:
        function = cls(**options)
        output = Tensor(function.forward(*(tensor.data for tensor in inputs)))
        tape = current_tape()
        if tape is not None and any(tensor.requires_grad for tensor in inputs):
            output.requires_grad = True
            tape.record(function, inputs, output)
        return output


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` over the axes broadcasting added, so it matches ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: np.ndarray, b: np.ndarray) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f'cannot broadcast shapes {a.shape} and {b.shape}') from exc


class Add(Function):
    def forward(self, a, b):
        _broadcast_shape(a, b)
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, a, b):
        _broadcast_shape(a, b)
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        _broadcast_shape(a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return unbroadcast(grad * self.b, self.a.shape), unbroadcast(grad * self.a, self.b.shape)


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f'matmul needs m×k and k×n operands, got {a.shape} and {b.shape}')
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        return grad @ self.b.T, self.a.T @ grad


def normalize_axes(axes: Axes, ndim: int) -> Tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, (int, np.integer)):
        axes = (int(axes),)
    normalized = []
    for axis in axes:
        if not -ndim <= axis < ndim:
            raise ShapeError(f'axis {axis} out of range for a {ndim}-d tensor')
        normalized.append(axis % ndim)
    return tuple(sorted(set(normalized)))


class Sum(Function):
    def forward(self, x):
        self.axes = normalize_axes(self.options['axes'], x.ndim)
        self.input_shape = x.shape
        self.kept_shape = tuple(1 if axis in self.axes else size for axis, size in enumerate(x.shape))
        return np.sum(x, axis=self.axes, keepdims=self.options['keepdims'])

    def backward(self, grad):
        kept = np.reshape(grad, self.kept_shape)
        return (np.broadcast_to(kept, self.input_shape).copy(),)


class Mean(Sum):
    def forward(self, x):
        total = super().forward(x)
        self.count = int(np.prod([x.shape[axis] for axis in self.axes], dtype=np.int64))
        return total / self.count

    def backward(self, grad):
        (spread,) = super().backward(grad)
        return (spread / self.count,)


class Max(Function):
    """Maximum over axes; the gradient goes to the first maximal element."""

    def forward(self, x):
        self.axes = normalize_axes(self.options['axes'], x.ndim)
        keep = [axis for axis in range(x.ndim) if axis not in self.axes]
        self.permutation = keep + list(self.axes)
        moved = np.transpose(x, self.permutation)
        self.moved_shape = moved.shape
        flat = moved.reshape(moved.shape[:len(keep)] + (-1,))
        self.argmax = np.argmax(flat, axis=-1)[..., None]
        self.flat_shape = flat.shape
        self.input_shape = x.shape
        result = np.take_along_axis(flat, self.argmax, axis=-1)[..., 0]
        if self.options['keepdims']:
            result = np.expand_dims(result, self.axes) if self.axes else result
        return result

    def backward(self, grad):
        grad = grad.reshape(self.flat_shape[:-1])
        flat = np.zeros(self.flat_shape, dtype=grad.dtype)
        np.put_along_axis(flat, self.argmax, grad[..., None], axis=-1)
        moved = flat.reshape(self.moved_shape)
        return (np.transpose(moved, np.argsort(self.permutation)),)


class Reshape(Function):
    def forward(self, x):
        self.input_shape = x.shape
        try:
            return x.reshape(self.options['shape'])
        except ValueError as exc:
            raise ShapeError(f'cannot reshape {x.shape} into {self.options["shape"]}') from exc

    def backward(self, grad):
        return (grad.reshape(self.input_shape),)


class Concat(Function):
    def forward(self, *arrays):
        axis = self.options['axis']
        self.sizes = [array.shape[axis] for array in arrays]
        try:
            return np.concatenate(arrays, axis=axis)
        except ValueError as exc:
            raise ShapeError(f'cannot concatenate shapes {[a.shape for a in arrays]} on axis {axis}') from exc

    def backward(self, grad):
        splits = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, splits, axis=self.options['axis']))


class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return x * self.mask

    def backward(self, grad):
        return (grad * self.mask,)


class Sigmoid(Function):
    def forward(self, x):
        # clamped into the open interval (0, 1)
        info = np.finfo(x.dtype)
        self.out = np.clip(expit(x).astype(x.dtype, copy=False), info.tiny, np.nextafter(x.dtype.type(1), x.dtype.type(0)))
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


# ==================== Functional API ====================

def add(a, b) -> Tensor:
    return Add.apply(as_tensor(a), as_tensor(b))


def sub(a, b) -> Tensor:
    return Sub.apply(as_tensor(a), as_tensor(b))


def mul(a, b) -> Tensor:
    return Mul.apply(as_tensor(a), as_tensor(b))


_BINARY = {BinaryKind.ADD: Add, BinaryKind.SUB: Sub, BinaryKind.MUL: Mul}


def tensor_binary(kind: str, a, b) -> Tensor:
    """Elementwise ``add``/``sub``/``mul`` with singleton-axis broadcasting."""
    try:
        function = _BINARY[BinaryKind(kind)]
    except ValueError as exc:
        raise ContractError(f'unknown binary op {kind!r}') from exc
    return function.apply(as_tensor(a), as_tensor(b))


def matmul(a, b) -> Tensor:
    return MatMul.apply(as_tensor(a), as_tensor(b))


_REDUCE = {ReduceKind.SUM: Sum, ReduceKind.MEAN: Mean, ReduceKind.MAX: Max}


def reduce(kind: str, tensor: Tensor, axes: Axes = None, keepdims: bool = False) -> Tensor:
    """Reduce over ``axes`` (all axes when None; an empty list is the identity)."""
    try:
        function = _REDUCE[ReduceKind(kind)]
    except ValueError as exc:
        raise ContractError(f'unknown reduction {kind!r}') from exc
    return function.apply(tensor, axes=axes, keepdims=keepdims)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)
