"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every backward rule is written with ``Tensor`` operations, so running
:func:`backward` with ``create_graph=True`` records the gradient computation
itself and the returned gradients can be differentiated again. This is what
makes input-gradient penalties trainable.
"""

import contextlib
import itertools
import logging
import threading

import numpy as np

from . import kernels

logger = logging.getLogger(__name__)

_local = threading.local()
_seq = itertools.count()


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested operation."""


def is_grad_enabled():
    return getattr(_local, "enabled", True)


@contextlib.contextmanager
def grad_mode(enabled):
    prev = is_grad_enabled()
    _local.enabled = bool(enabled)
    try:
        yield
    finally:
        _local.enabled = prev


def no_grad():
    return grad_mode(False)


class Node:
    """One recorded operation.

    ``seq`` is drawn from a process-wide increasing counter, so every node's
    inputs carry smaller sequence numbers than the node itself. Sorting by
    ``seq`` therefore yields a topological order of the graph.
    """

    __slots__ = ("op", "inputs", "backward_fn", "seq")

    def __init__(self, op, inputs, backward_fn):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.seq = next(_seq)


class Tensor:
    __slots__ = ("data", "requires_grad", "_node", "name", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, name=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=np.float64, order="C")
        self.requires_grad = bool(requires_grad)
        self._node = None
        self.name = name

    # --- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def node(self):
        return self._node

    @property
    def T(self):
        return self.transpose()

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error(self)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{grad}{tag})"

    def __len__(self):
        return len(self.data)

    # --- operators -------------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    # --- method forms ---------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)

    def abs(self):
        return tabs(self)

    def sqrt(self):
        return sqrt(self)

    def softmax(self, axis=-1):
        return softmax(self, axis)

    def clamp_min(self, lo):
        return clamp_min(self, lo)


def _scalar_error(t):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _wrap(data):
    out = Tensor.__new__(Tensor)
    if type(data) is not np.ndarray or data.dtype != np.float64 or not data.flags.c_contiguous:
        data = np.ascontiguousarray(data, dtype=np.float64)
    out.data = data
    out.requires_grad = False
    out._node = None
    out.name = None
    return out


def _record(data, inputs, backward_fn, op):
    out = _wrap(data)
    if getattr(_local, "enabled", True):
        for t in inputs:
            if t.requires_grad:
                out.requires_grad = True
                out._node = Node(op, inputs, backward_fn)
                break
    return out


def _binary(op, fn, a, b):
    try:
        return fn(a.data, b.data)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# --- broadcasting helpers ------------------------------------------------

def sum_to(x, shape):
    """Sum ``x`` down to ``shape`` (the adjoint of broadcasting)."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, n in enumerate(shape) if n == 1 and x.shape[i + lead] != 1)
    data = x.data.sum(axis=axes, keepdims=True)
    if lead:
        data = data.reshape(data.shape[lead:])
    src = x.shape
    return _record(data, (x,), lambda g, needs: (broadcast_to(g, src),), "sum_to")


def broadcast_to(x, shape):
    shape = tuple(shape)
    if x.shape == shape:
        return x
    src = x.shape
    data = np.broadcast_to(x.data, shape)
    return _record(data, (x,), lambda g, needs: (sum_to(g, src),), "broadcast_to")


# --- arithmetic ----------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g, needs):
        return (sum_to(g, a.shape) if needs[0] else None,
                sum_to(g, b.shape) if needs[1] else None)
    return _record(_binary("add", np.add, a, b), (a, b), back, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g, needs):
        return (sum_to(g, a.shape) if needs[0] else None,
                sum_to(neg(g), b.shape) if needs[1] else None)
    return _record(_binary("sub", np.subtract, a, b), (a, b), back, "sub")


def neg(a):
    a = as_tensor(a)
    return _record(-a.data, (a,), lambda g, needs: (neg(g),), "neg")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g, needs):
        return (sum_to(g * b, a.shape) if needs[0] else None,
                sum_to(g * a, b.shape) if needs[1] else None)
    return _record(_binary("mul", np.multiply, a, b), (a, b), back, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g, needs):
        ga = sum_to(g / b, a.shape) if needs[0] else None
        gb = sum_to(neg(g * a / (b * b)), b.shape) if needs[1] else None
        return ga, gb
    return _record(_binary("div", np.divide, a, b), (a, b), back, "div")


def matmul(a, b):
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands need ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul: inner dimensions differ, {a.shape} @ {b.shape} "
            f"({a.shape[-1]} != {b.shape[-2]})")
    try:
        data = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None

    def back(g, needs):
        ga = sum_to(matmul(g, swap_last(b)), a.shape) if needs[0] else None
        gb = sum_to(matmul(swap_last(a), g), b.shape) if needs[1] else None
        return ga, gb
    return _record(data, (a, b), back, "matmul")


def swap_last(x):
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, tuple(axes))


# --- elementwise ---------------------------------------------------------

def exp(a):
    a = as_tensor(a)
    out = _record(np.exp(a.data), (a,), lambda g, needs: (g * out,), "exp")
    return out


def log(a):
    a = as_tensor(a)
    return _record(np.log(a.data), (a,), lambda g, needs: (g / a,), "log")


def relu(a):
    a = as_tensor(a)
    mask = _wrap((a.data > 0).astype(np.float64))
    return _record(np.maximum(a.data, 0.0), (a,), lambda g, needs: (g * mask,), "relu")


def tabs(a):
    a = as_tensor(a)
    sgn = _wrap(np.sign(a.data))
    return _record(np.abs(a.data), (a,), lambda g, needs: (g * sgn,), "abs")


def sqrt(a):
    a = as_tensor(a)
    out = _record(np.sqrt(a.data), (a,), lambda g, needs: (g * 0.5 / out,), "sqrt")
    return out


def clamp_min(a, lo):
    """max(a, lo) elementwise; the gradient is zero where the floor is active."""
    a = as_tensor(a)
    mask = _wrap((a.data >= lo).astype(np.float64))
    return _record(np.maximum(a.data, lo), (a,), lambda g, needs: (g * mask,), "clamp_min")


def softmax(a, axis=-1):
    a = as_tensor(a)
    if a.ndim == 0 or a.shape[axis] == 0:
        raise ShapeError(f"softmax: axis {axis} of shape {a.shape} is empty")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=axis, keepdims=True)

    def back(g, needs):
        return (out * (g - tsum(g * out, axis, keepdims=True)),)
    out = _record(data, (a,), back, "softmax")
    return out


# --- reductions and shape ------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)
    src = a.shape
    kept = tuple(1 if i in axes else n for i, n in enumerate(src))

    def back(g, needs):
        return (broadcast_to(reshape(g, kept), src),)
    return _record(data, (a,), back, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return tsum(a, axes, keepdims) / float(n)


def reshape(a, shape):
    a = as_tensor(a)
    src = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from None
    return _record(data, (a,), lambda g, needs: (reshape(g, src),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _record(a.data.transpose(axes), (a,), lambda g, needs: (transpose(g, inv),), "transpose")


def getitem(a, key):
    """Basic or advanced indexing; the gradient scatter-adds into the source shape."""
    a = as_tensor(a)
    src = a.shape
    return _record(a.data[key], (a,), lambda g, needs: (index_add(g, key, src),), "getitem")


def index_add(g, key, shape):
    """Zeros of ``shape`` with ``g`` accumulated at ``key``; adjoint of ``getitem``."""
    g = as_tensor(g)
    data = np.zeros(shape, dtype=np.float64)
    np.add.at(data, key, g.data)
    return _record(data, (g,), lambda gg, needs: (getitem(gg, key),), "index_add")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no tensors given")
    ax = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
                n != m for i, (n, m) in enumerate(zip(t.shape, tensors[0].shape)) if i != ax):
            raise ShapeError(
                f"concat: shapes {tensors[0].shape} and {t.shape} differ off axis {ax}")
    data = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def back(g, needs):
        out = []
        for i, need in enumerate(needs):
            if not need:
                out.append(None)
                continue
            key = [slice(None)] * g.ndim
            key[ax] = slice(int(bounds[i]), int(bounds[i + 1]))
            out.append(getitem(g, tuple(key)))
        return tuple(out)
    return _record(data, tuple(tensors), back, "concat")


def embedding_lookup(table, index):
    """Rows of ``table`` selected by an integer index array."""
    index = np.asarray(index, dtype=np.intp)
    table = as_tensor(table)
    if table.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise IndexError(f"embedding_lookup: index out of range for {table.shape[0]} rows")
    return getitem(table, index)


def pad2d(x, pad):
    """Zero-pad the two trailing axes of a 4-D tensor by ``pad`` on each side."""
    x = as_tensor(x)
    if pad == 0:
        return x
    data = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    key = (slice(None), slice(None), slice(pad, -pad), slice(pad, -pad))
    return _record(data, (x,), lambda g, needs: (getitem(g, key),), "pad2d")


# --- convolution ---------------------------------------------------------

def im2col(x, kh, kw, stride=1):
    x = as_tensor(x)
    shape = x.shape
    data = kernels.im2col(x.data, kh, kw, stride)
    return _record(data, (x,), lambda g, needs: (col2im(g, shape, kh, kw, stride),), "im2col")


def col2im(cols, shape, kh, kw, stride=1):
    cols = as_tensor(cols)
    data = kernels.col2im(cols.data, shape, kh, kw, stride)
    return _record(data, (cols,), lambda g, needs: (im2col(g, kh, kw, stride),), "col2im")


def conv2d(x, weight, bias=None, stride=1, pad=0):
    """2-D cross-correlation, (B, Cin, H, W) * (Cout, Cin, kh, kw).

    Lowered to im2col + matmul, so higher derivatives come from the matmul
    and gather/scatter rules.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and kernel, got {x.shape} and {weight.shape}")
    cout, cin, kh, kw = weight.shape
    if x.shape[1] != cin:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels, kernel expects {cin}")
    b = x.shape[0]
    xp = pad2d(x, pad)
    h, w = xp.shape[2], xp.shape[3]
    if h < kh or w < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}")
    oh, ow = kernels.out_size(h, kh, stride), kernels.out_size(w, kw, stride)
    cols = im2col(xp, kh, kw, stride)
    out = matmul(reshape(weight, (cout, cin * kh * kw)), cols)
    if bias is not None:
        out = out + reshape(as_tensor(bias), (cout, 1))
    return reshape(out, (b, cout, oh, ow))


def maxpool2d(x, k=2):
    """Non-overlapping k×k max pooling; lowest index wins ties."""
    x = as_tensor(x)
    b, c, h, w = x.shape
    oh, ow = h // k, w // k
    x = getitem(x, (slice(None), slice(None), slice(0, oh * k), slice(0, ow * k)))
    win = transpose(reshape(x, (b, c, oh, k, ow, k)), (0, 1, 2, 4, 3, 5))
    win = reshape(win, (b, c, oh, ow, k * k))
    arg = win.data.argmax(axis=-1)
    mask = np.zeros(win.shape)
    np.put_along_axis(mask, arg[..., None], 1.0, axis=-1)
    return tsum(win * Tensor(mask), axis=-1)


# --- differentiation -----------------------------------------------------

class GradMap(dict):
    """Gradients keyed by the tensor they were taken with respect to."""

    def __setitem__(self, key, value):
        if key.shape != value.shape:
            raise ShapeError(f"gradient shape {value.shape} != value shape {key.shape}")
        super().__setitem__(key, value)

    def values_for(self, tensors):
        return [self[t] for t in tensors]


def _collect(loss):
    seen = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen[id(t)] = t
        if t._node is not None:
            stack.extend(t._node.inputs)
    return seen


def backward(loss, wrt, create_graph=False):
    """Reverse-mode gradients of a scalar ``loss`` with respect to ``wrt``.

    Tensors in ``wrt`` that do not influence ``loss`` get zero gradients.
    With ``create_graph=True`` the returned gradients are graph nodes and can
    themselves be differentiated.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    wrt = list(wrt)
    wrt_ids = {id(t) for t in wrt}
    reach = _collect(loss)
    interior = sorted((t for t in reach.values() if t._node is not None),
                      key=lambda t: t._node.seq)

    # keep only nodes lying on a path from some wrt tensor to the loss
    needed = {i for i in wrt_ids if i in reach}
    for t in interior:
        if id(t) in needed or any(id(p) in needed for p in t._node.inputs):
            needed.add(id(t))

    grads = {}
    if id(loss) in needed:
        grads[id(loss)] = Tensor(np.ones(loss.shape))
    with grad_mode(create_graph):
        for t in reversed(interior):
            g = grads.get(id(t))
            if g is None or id(t) not in needed:
                continue
            node = t._node
            needs = tuple(p.requires_grad and id(p) in needed for p in node.inputs)
            if any(needs):
                for p, gp, need in zip(node.inputs, node.backward_fn(g, needs), needs):
                    if not need or gp is None:
                        continue
                    prev = grads.get(id(p))
                    grads[id(p)] = gp if prev is None else prev + gp
            if id(t) not in wrt_ids:
                del grads[id(t)]

    out = GradMap()
    for t in wrt:
        g = grads.get(id(t))
        out[t] = g if g is not None else Tensor(np.zeros(t.shape))
    return out


def grad(loss, wrt, create_graph=False):
    """List form of :func:`backward`, in the order of ``wrt``."""
    gm = backward(loss, wrt, create_graph)
    return [gm[t] for t in wrt]


def finite_difference_grad(f, x, h=1e-4):
    """Central-difference gradient of scalar ``f`` at ``x``.

    ``x.data`` is perturbed in place and restored, so ``f`` may close over
    ``x`` (e.g. a model parameter) instead of using its argument. Graph
    recording stays on because ``f`` may itself call :func:`backward`.
    """
    if h <= 0:
        raise ValueError("finite_difference_grad: step h must be positive")
    x = as_tensor(x)
    flat = x.data.reshape(-1)
    out = np.zeros(flat.shape)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = _scalar(f(x))
        flat[k] = orig - h
        fm = _scalar(f(x))
        flat[k] = orig
        out[k] = (fp - fm) / (2.0 * h)
    return Tensor(out.reshape(x.shape))


def _scalar(v):
    if isinstance(v, Tensor):
        return v.item()
    return float(v)
