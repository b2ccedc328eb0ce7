"""
Dense tensors with define-by-run, tape-based reverse-mode differentiation.

Operations record onto the innermost active Tape. Outside a tape nothing is
recorded, which is how inference runs.
"""

import threading

import numpy as np

from . import config
from .errors import GradientError, PreconditionError, ShapeError

_state = threading.local()


def get_default_dtype():
    """Return the numpy dtype new tensors are created with."""
    return np.dtype(config.DEFAULT_DTYPE)


def active_tape():
    """Return the innermost Tape of this thread, or None."""
    stack = getattr(_state, "tapes", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of the operations of one forward pass."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        if not hasattr(_state, "tapes"):
            _state.tapes = []
        _state.tapes.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _state.tapes.remove(self)
        return False

    def record(self, node):
        self.nodes.append(node)

    def reset(self):
        """Drop every recorded operation and release the graph."""
        for node in self.nodes:
            node._parents = ()
            node._vjp = None
            node._tape = None
        self.nodes = []

    def backward(self, loss):
        """
        Propagate d(loss) back to every requires_grad leaf, then reset the tape.

        Leaf gradients accumulate into `.grad`; call zero_grad between steps.

        Args:
            loss (Tensor): Scalar recorded on this tape
        """
        if not isinstance(loss, Tensor) or loss.size != 1:
            shape = getattr(loss, "shape", type(loss).__name__)
            raise GradientError(f"backward needs a scalar loss, got shape {shape}")
        if loss._tape is not self:
            raise GradientError("loss is not reachable from operations recorded on this tape")

        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            for parent, parent_grad in zip(node._parents, node._vjp(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if parent._tape is self:
                    key = id(parent)
                    grads[key] = grads[key] + parent_grad if key in grads else parent_grad
                elif parent.grad is None:
                    parent.grad = np.array(parent_grad, dtype=parent.dtype).reshape(parent.shape)
                else:
                    parent.grad = parent.grad + parent_grad
        self.reset()


def backward(loss):
    """Run the backward pass of the tape `loss` was recorded on."""
    tape = getattr(loss, "_tape", None)
    if tape is None:
        raise GradientError("loss is not reachable from recorded operations; build it inside a Tape")
    tape.backward(loss)


def _freeze(arr):
    arr.flags.writeable = False
    return arr


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """
    N-dimensional real array that can take part in a recorded computation.

    `data` is read-only. Optimizers replace it with a successor array instead of
    writing into it.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        self._data = _freeze(np.array(data, dtype=dtype or get_default_dtype()))
        self.requires_grad = requires_grad
        self.name = name
        self.grad = None
        self._parents = ()
        self._vjp = None
        self._tape = None

    @classmethod
    def _result(cls, data, parents, vjp):
        out = cls.__new__(cls)
        out._data = _freeze(np.asarray(data))
        out.requires_grad = False
        out.name = None
        out.grad = None
        out._parents = ()
        out._vjp = None
        out._tape = None
        tape = active_tape()
        if tape is not None and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._vjp = vjp
            out._tape = tape
            tape.record(out)
        return out

    @property
    def data(self):
        return self._data

    @data.setter
    def data(self, value):
        if self._tape is not None:
            raise GradientError("cannot replace the data of a tensor recorded on a live tape")
        arr = np.array(value, dtype=self._data.dtype)
        if arr.shape != self._data.shape:
            raise ShapeError(f"cannot replace data of shape {self.shape} with shape {arr.shape}")
        self._data = _freeze(arr)

    @property
    def shape(self):
        return self._data.shape

    @property
    def ndim(self):
        return self._data.ndim

    @property
    def size(self):
        return self._data.size

    @property
    def dtype(self):
        return self._data.dtype

    def item(self):
        return float(self._data.reshape(-1)[0])

    def numpy(self):
        return self._data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} dtype={self.dtype} requires_grad={self.requires_grad}>"

    def __len__(self):
        return self.shape[0]

    def _lift(self, other):
        return other if isinstance(other, Tensor) else Tensor(other, dtype=self.dtype)

    def __add__(self, other):
        return add(self, self._lift(other))

    def __radd__(self, other):
        return add(self._lift(other), self)

    def __sub__(self, other):
        return sub(self, self._lift(other))

    def __rsub__(self, other):
        return sub(self._lift(other), self)

    def __mul__(self, other):
        return mul(self, self._lift(other))

    def __rmul__(self, other):
        return mul(self._lift(other), self)

    def __truediv__(self, other):
        return div(self, self._lift(other))

    def __rtruediv__(self, other):
        return div(self._lift(other), self)

    def __neg__(self):
        return Tensor._result(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        a = self.data
        return Tensor._result(a ** exponent, (self,),
                              lambda g: (g * exponent * a ** (exponent - 1),))

    def __matmul__(self, other):
        return matmul(self, self._lift(other))

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        count = self.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return tensor_sum(self, axis, keepdims) * (1.0 / max(int(count), 1))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        original = self.shape
        return Tensor._result(self.data.reshape(shape), (self,), lambda g: (g.reshape(original),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor._result(self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),))

    def swap_last(self):
        axes = list(range(self.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return self.transpose(tuple(axes))

    def take(self, indices):
        return take(self, indices)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)


def as_tensor(value, dtype=None):
    return value if isinstance(value, Tensor) else Tensor(value, dtype=dtype)


def add(a, b):
    sa, sb = a.shape, b.shape
    return Tensor._result(a.data + b.data, (a, b),
                          lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    sa, sb = a.shape, b.shape
    return Tensor._result(a.data - b.data, (a, b),
                          lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    x, y = a.data, b.data
    return Tensor._result(x * y, (a, b),
                          lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)))


def div(a, b):
    x, y = a.data, b.data
    return Tensor._result(x / y, (a, b),
                          lambda g: (_unbroadcast(g / y, x.shape),
                                     _unbroadcast(-g * x / (y * y), y.shape)))


def matmul(a, b):
    """
    Matrix product over the last two axes (leading axes broadcast).

    Args:
        a (Tensor): [..., m, k]
        b (Tensor): [..., k, n]

    Returns:
        Tensor: [..., m, n]
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    x, y = a.data, b.data

    def vjp(g):
        ga = g @ np.swapaxes(y, -1, -2)
        gb = np.swapaxes(x, -1, -2) @ g
        return _unbroadcast(ga, x.shape), _unbroadcast(gb, y.shape)

    return Tensor._result(x @ y, (a, b), vjp)


def tensor_sum(a, axis=None, keepdims=False):
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return Tensor._result(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def take(a, indices):
    """Gather rows (axis 0) of `a`."""
    idx = np.asarray(indices, dtype=np.intp)
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._result(a.data[idx], (a,), vjp)


def place_rows(rows, fill, indices, n):
    """
    Build an [n, d] sequence holding `rows` at `indices` and `fill` everywhere else.

    Args:
        rows (Tensor): [k, d] rows to place
        fill (Tensor): [d] row used at every other position
        indices (array-like): k distinct destination rows
        n (int): Sequence length
    """
    idx = np.asarray(indices, dtype=np.intp)
    if rows.shape[0] != idx.size:
        raise ShapeError(f"place_rows got {rows.shape[0]} rows for {idx.size} indices")
    out = np.empty((n, fill.shape[-1]), dtype=rows.dtype)
    out[:] = fill.data
    out[idx] = rows.data
    others = np.ones(n, dtype=bool)
    others[idx] = False

    def vjp(g):
        return g[idx], g[others].sum(axis=0)

    return Tensor._result(out, (rows, fill), vjp)


def concat(tensors, axis=0):
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp)


def exp(a):
    out = np.exp(a.data)
    return Tensor._result(out, (a,), lambda g: (g * out,))


def log(a):
    x = a.data
    return Tensor._result(np.log(x), (a,), lambda g: (g / x,))


def sqrt(a):
    out = np.sqrt(a.data)
    return Tensor._result(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a):
    out = np.tanh(a.data)
    return Tensor._result(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(a):
    out = _sigmoid(a.data)
    return Tensor._result(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a):
    x = a.data
    return Tensor._result(np.logaddexp(0.0, x), (a,), lambda g: (g * _sigmoid(x),))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a):
    """GELU, tanh form."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)

    def vjp(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner),)

    return Tensor._result(0.5 * x * (1.0 + t), (a,), vjp)


def softmax(a, axis=-1):
    """Softmax along `axis`, computed after subtracting the running maximum."""
    a = as_tensor(a)
    x = a.data
    if np.isnan(x).any():
        raise PreconditionError("softmax input contains NaN")
    shifted = np.exp(x - x.max(axis=axis, keepdims=True))
    out = shifted / shifted.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._result(out, (a,), vjp)


def layer_norm(x, gain, bias, eps=1e-5):
    """
    Normalize the last axis to zero mean and unit variance, then scale and shift.

    Args:
        x (Tensor): [..., d]
        gain (Tensor): [d]
        bias (Tensor): [d]
        eps (float): Variance floor, must be positive
    """
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise ShapeError("layer_norm needs a non-empty last dimension")
    if eps <= 0:
        raise PreconditionError("layer_norm eps must be positive")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm affine shapes {gain.shape}, {bias.shape} do not match d={d}")
    data = x.data
    mu = data.mean(axis=-1, keepdims=True)
    centered = data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    w, lead = gain.data, tuple(range(data.ndim - 1))

    def vjp(g):
        gx_hat = g * w
        gx = inv_std * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                        - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._result(xhat * w + bias.data, (x, gain, bias), vjp)
