"""Dense float tensors with define-by-run reverse-mode differentiation.

Tensors are immutable wrappers around read-only numpy arrays (float32 by
default). Primitives executed while a :class:`Tape` is active are recorded in
execution order; :func:`backward` walks the tape once in reverse and sums the
contributions of shared subexpressions. Reductions and products accumulate in
float64 and are stored back at the active precision.
"""
import contextlib
import logging
import threading
from typing import Callable, Dict, Mapping, NamedTuple, Optional, Sequence, Union

import numpy as np

from .exceptions import (
    ContractError,
    DegenerateInputError,
    DimensionError,
    DomainError,
    NumericError,
)

LOG = logging.getLogger(__name__)

EPSILON = 1e-12
MAX_RANK = 4

_STATE = threading.local()


def _dtype():
    return getattr(_STATE, "dtype", np.float32)


def _tapes():
    if not hasattr(_STATE, "tapes"):
        _STATE.tapes = []
    return _STATE.tapes


@contextlib.contextmanager
def precision(dtype):
    """Create tensors at ``dtype`` inside the block (float64 for shadow checks)."""
    previous = _dtype()
    _STATE.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _STATE.dtype = previous


class Tensor:
    __slots__ = ("_data",)

    def __init__(self, data):
        array = np.array(data, dtype=_dtype())
        if array.ndim > MAX_RANK:
            raise DimensionError(f"rank {array.ndim} exceeds the maximum of {MAX_RANK}")
        array.flags.writeable = False
        self._data = array

    @classmethod
    def _wrap(cls, array):
        out = cls.__new__(cls)
        array = np.asarray(array, dtype=_dtype())
        array.flags.writeable = False
        out._data = array
        return out

    @classmethod
    def zeros(cls, *shape):
        return cls._wrap(np.zeros(shape))

    @classmethod
    def ones(cls, *shape):
        return cls._wrap(np.ones(shape))

    @property
    def data(self):
        return self._data

    @property
    def shape(self):
        return self._data.shape

    @property
    def ndim(self):
        return self._data.ndim

    @property
    def size(self):
        return self._data.size

    def numpy(self):
        return self._data.copy()

    def item(self):
        return float(self._data)

    def __len__(self):
        return len(self._data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, data={self._data!r})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


class _Op(NamedTuple):
    output: Tensor
    inputs: tuple
    vjp: Callable


class Tape:
    """Ordered record of the primitives executed while the tape is active.

    A tape is single-threaded and meant to be rebuilt for every training step::

        with Tape() as tape:
            loss = ...
        grads = backward(loss, tape, model.params)
    """

    def __init__(self):
        self.ops = []

    def __enter__(self):
        _tapes().append(self)
        return self

    def __exit__(self, *exc_info):
        _tapes().remove(self)

    def __len__(self):
        return len(self.ops)

    def record(self, output, inputs, vjp):
        self.ops.append(_Op(output, tuple(inputs), vjp))


def _record(output, inputs, vjp):
    tapes = _tapes()
    if tapes:
        tapes[-1].record(output, inputs, vjp)
    return output


class GradientMap:
    """Gradients keyed by tensor identity; unreachable tensors read as zeros."""

    def __init__(self, grads):
        self._grads = grads

    def __contains__(self, tensor):
        return id(tensor) in self._grads

    def __getitem__(self, tensor):
        grad = self._grads.get(id(tensor))
        if grad is None:
            return Tensor._wrap(np.zeros(tensor.shape))
        return Tensor._wrap(grad)


def backward(
    loss: Tensor,
    tape: Tape,
    wrt: Union[None, Mapping[str, Tensor], Sequence[Tensor]] = None,
):
    """Reverse pass over ``tape`` from the scalar ``loss``.

    Returns a :class:`GradientMap` when ``wrt`` is omitted, a dict with the
    same keys when ``wrt`` is a mapping and a list for a sequence.
    """
    if loss.shape != ():
        raise ContractError(f"loss must be a scalar, got shape {loss.shape}")
    if not any(op.output is loss for op in tape.ops):
        raise ContractError("loss was not produced by an operation on this tape")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    for op in reversed(tape.ops):
        upstream = grads.get(id(op.output))
        if upstream is None:
            continue
        for tensor, contribution in zip(op.inputs, op.vjp(upstream)):
            if contribution is None or not isinstance(tensor, Tensor):
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + contribution
            else:
                grads[key] = np.asarray(contribution, dtype=np.float64)

    result = GradientMap(grads)
    if wrt is None:
        return result
    if isinstance(wrt, Mapping):
        return {name: result[tensor] for name, tensor in wrt.items()}
    return [result[tensor] for tensor in wrt]


def _operand(value):
    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.asarray(value))


def _check_same_or_scalar(name, a, b):
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} do not match")


def _unbroadcast(grad, shape):
    if shape == () and np.ndim(grad) != 0:
        return np.sum(grad, dtype=np.float64)
    return grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    a64 = a.data.astype(np.float64)
    b64 = b.data.astype(np.float64)
    out = Tensor._wrap(a64 @ b64)

    def vjp(g):
        return g @ b64.T, a64.T @ g

    return _record(out, (a, b), vjp)


def add(a, b) -> Tensor:
    a, b = _operand(a), _operand(b)
    _check_same_or_scalar("add", a, b)
    out = Tensor._wrap(a.data.astype(np.float64) + b.data)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _operand(a), _operand(b)
    _check_same_or_scalar("sub", a, b)
    out = Tensor._wrap(a.data.astype(np.float64) - b.data)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _operand(a), _operand(b)
    _check_same_or_scalar("mul", a, b)
    a64 = a.data.astype(np.float64)
    b64 = b.data.astype(np.float64)
    out = Tensor._wrap(a64 * b64)

    def vjp(g):
        return _unbroadcast(g * b64, a.shape), _unbroadcast(g * a64, b.shape)

    return _record(out, (a, b), vjp)


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    out = Tensor._wrap(x.data.astype(np.float64) * factor)
    return _record(out, (x,), lambda g: (g * factor,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor._wrap(np.where(mask, x.data, 0.0))
    return _record(out, (x,), lambda g: (g * mask,))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        values = np.exp(x.data.astype(np.float64))
        overflow = not np.all(np.isfinite(values.astype(_dtype())))
    if overflow:
        raise NumericError("exp overflowed the tensor precision")
    out = Tensor._wrap(values)
    return _record(out, (x,), lambda g: (g * values,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise DomainError("log of a non-positive value")
    x64 = x.data.astype(np.float64)
    out = Tensor._wrap(np.log(x64))
    return _record(out, (x,), lambda g: (g / x64,))


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "relu": relu,
    "exp": exp,
    "log": log,
}


def elementwise(op: str, *operands) -> Tensor:
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op '{op}'") from None
    return fn(*operands)


def sum(x: Tensor, axis: Optional[int] = None) -> Tensor:  # pylint: disable=redefined-builtin
    out = Tensor._wrap(np.sum(x.data, axis=axis, dtype=np.float64))
    shape = x.shape

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _record(out, (x,), vjp)


def mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    count = x.size if axis is None else x.shape[axis]
    return scale(sum(x, axis), 1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    try:
        values = x.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"cannot reshape {x.shape} into {tuple(shape)}") from e
    original = x.shape
    out = Tensor._wrap(values)
    return _record(out, (x,), lambda g: (np.reshape(g, original),))


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.shape}")
    out = Tensor._wrap(x.data.T)
    return _record(out, (x,), lambda g: (g.T,))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    try:
        values = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"cannot concatenate shapes {shapes} on axis {axis}") from e
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    out = Tensor._wrap(values)

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(out, tensors, vjp)


def pick(x: Tensor, rows, cols) -> Tensor:
    """Gather ``x[rows[i], cols[i]]`` into a vector."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    out = Tensor._wrap(x.data[rows, cols])
    shape = x.shape

    def vjp(g):
        grad = np.zeros(shape, dtype=np.float64)
        np.add.at(grad, (rows, cols), g)
        return (grad,)

    return _record(out, (x,), vjp)


def stop_gradient(x: Tensor) -> Tensor:
    return Tensor._wrap(x.data)


def _row_norms(x: Tensor, name: str):
    if x.ndim != 2:
        raise DimensionError(f"{name} expects a matrix, got shape {x.shape}")
    x64 = x.data.astype(np.float64)
    norms = np.sqrt(np.sum(x64 * x64, axis=1, keepdims=True))
    if np.any(norms <= EPSILON):
        row = int(np.argmax(norms[:, 0] <= EPSILON))
        raise DegenerateInputError(f"{name}: row {row} has near-zero norm")
    return x64, norms


def l2_normalize(x: Tensor) -> Tensor:
    x64, norms = _row_norms(x, "l2_normalize")
    y = x64 / norms
    out = Tensor._wrap(y)

    def vjp(g):
        return ((g - y * np.sum(g * y, axis=1, keepdims=True)) / norms,)

    return _record(out, (x,), vjp)


def softmax_rows(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"softmax_rows expects a matrix, got shape {x.shape}")
    x64 = x.data.astype(np.float64)
    e = np.exp(x64 - np.max(x64, axis=1, keepdims=True))
    y = e / np.sum(e, axis=1, keepdims=True)
    out = Tensor._wrap(y)

    def vjp(g):
        return (y * (g - np.sum(g * y, axis=1, keepdims=True)),)

    return _record(out, (x,), vjp)


def logsumexp_rows(x: Tensor, mask=None) -> Tensor:
    """Row-wise log-sum-exp over the entries where ``mask`` is true."""
    if x.ndim != 2:
        raise DimensionError(f"logsumexp_rows expects a matrix, got shape {x.shape}")
    x64 = x.data.astype(np.float64)
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise DimensionError(f"mask shape {mask.shape} does not match {x.shape}")
    if not np.all(mask.any(axis=1)):
        raise ContractError("logsumexp_rows: a row has no included entries")
    masked = np.where(mask, x64, -np.inf)
    peak = np.max(masked, axis=1, keepdims=True)
    e = np.where(mask, np.exp(masked - peak), 0.0)
    total = np.sum(e, axis=1, keepdims=True)
    out = Tensor._wrap((peak + np.log(total))[:, 0])
    weights = e / total

    def vjp(g):
        return (weights * g[:, None],)

    return _record(out, (x,), vjp)


def bias_add(x: Tensor, bias: Tensor) -> Tensor:
    """Add a per-feature (rank 2) or per-channel (rank 4) bias vector."""
    if bias.ndim != 1 or x.ndim not in (2, 4) or x.shape[1] != bias.shape[0]:
        raise DimensionError(f"bias_add: shapes {x.shape} and {bias.shape} are incompatible")
    expand = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    out = Tensor._wrap(x.data.astype(np.float64) + bias.data.reshape(expand))
    axes = (0,) if x.ndim == 2 else (0, 2, 3)

    def vjp(g):
        return g, np.sum(g, axis=axes)

    return _record(out, (x, bias), vjp)


def _im2col(xp, stride):
    windows = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    n, c, oh, ow = windows.shape[:4]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * 9)
    return cols, oh, ow


def conv3x3(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """3x3 cross-correlation with zero padding 1 on an NCHW batch."""
    if x.ndim != 4 or weight.shape[1:] != (x.shape[1], 3, 3):
        raise DimensionError(f"conv3x3: input {x.shape} does not fit weight {weight.shape}")
    n, c, h, w = x.shape
    cout = weight.shape[0]
    xp = np.pad(x.data.astype(np.float64), ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols, oh, ow = _im2col(xp, stride)
    wmat = weight.data.astype(np.float64).reshape(cout, c * 9)
    flat = cols @ wmat.T + bias.data
    out = Tensor._wrap(flat.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2))

    def vjp(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = (g2.T @ cols).reshape(weight.shape)
        gb = np.sum(g2, axis=0)
        gcols = (g2 @ wmat).reshape(n, oh, ow, c, 3, 3)
        gxp = np.zeros(xp.shape, dtype=np.float64)
        for ki in range(3):
            for kj in range(3):
                gxp[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += (
                    gcols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
                )
        return gxp[:, :, 1 : h + 1, 1 : w + 1], gw, gb

    return _record(out, (x, weight, bias), vjp)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects NCHW, got shape {x.shape}")
    shape = x.shape
    area = shape[2] * shape[3]
    out = Tensor._wrap(np.mean(x.data, axis=(2, 3), dtype=np.float64))

    def vjp(g):
        return (np.broadcast_to(g[:, :, None, None] / area, shape),)

    return _record(out, (x,), vjp)
