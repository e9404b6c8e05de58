"""Dense tensor engine with tape-based reverse-mode automatic differentiation.

Tensors wrap a numpy float array (float32 by default, float64 for gradient
checking). Every operation whose inputs participate in differentiation records
its parents and a backward closure; ``Tensor.backward()`` replays the recorded
graph in reverse topological order. Gradient accumulation order is fixed by
the tape, so backward passes are bit-deterministic.

Broadcasting is deliberately restricted to scalar-tensor arithmetic; shaped
broadcasts go through the explicit :func:`broadcast_to` op so every backward
rule stays a plain reverse of its forward.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.special import expit

DEFAULT_DTYPE = np.float32

_uid_counter = itertools.count()
_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording inside its block."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """N-dimensional float array with optional gradient tracking.

    ``grad`` is allocated on first accumulation and has the same shape as
    ``data``. Tensors are treated as immutable once created; all mutation goes
    through ops that return new tensors (optimizer updates write into leaf
    ``data`` buffers between forward passes, which is outside any tape).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward",
                 "_op", "_uid", "_backward_ran")

    def __init__(self, data, requires_grad=False, dtype=None, _parents=(), _op="leaf"):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(_parents) if _grad_enabled else ()
        self._backward = None
        self._op = _op
        self._uid = next(_uid_counter)
        self._backward_ran = False

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def tracked(self):
        """Whether this tensor participates in gradient computation."""
        return self.requires_grad or bool(self._parents)

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self):
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"

    def detach(self):
        """Grad-less tensor sharing this tensor's data buffer."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_as_tensor_like(other, self))

    def __rsub__(self, other):
        return add(_as_tensor_like(other, self), -self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; multiply by a reciprocal op")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    # -- method forms of common ops ------------------------------------------

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None):
        return mean(self, axis=axis)

    def backward(self):
        """Backpropagate from this scalar through the recorded tape.

        Gradients accumulate additively into ``.grad`` of every tracked
        tensor. Calling backward a second time from the same tensor raises;
        rebuild the graph (rerun the forward pass) instead.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar loss, got shape {self.shape}")
        if not self.tracked:
            raise RuntimeError("backward() on a tensor with no recorded ancestry")
        if self._backward_ran:
            raise RuntimeError("backward() already ran for this tensor; rerun the forward pass")
        self._backward_ran = True
        tape = Tape.trace(self)
        self._accum(np.ones_like(self.data))
        for node in reversed(tape.nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


class Tape:
    """Topologically ordered record of the ops reachable from a root tensor.

    Node order satisfies: every tensor's parents appear earlier in ``nodes``.
    ``Tensor.backward`` walks the list once in reverse, so each recorded op's
    backward rule runs exactly once per pass.
    """

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def trace(cls, root):
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
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)

    def index_of(self, tensor):
        for i, node in enumerate(self.nodes):
            if node is tensor:
                return i
        raise KeyError("tensor not on tape")


def _as_tensor_like(value, ref):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=ref.dtype))


def _make(data, parents, op, backward):
    """Create an op output, recording the backward closure only when needed."""
    tracked = _grad_enabled and any(p.tracked for p in parents)
    out = Tensor(data, _parents=parents if tracked else (), _op=op)
    if tracked:
        out._backward = backward
    return out


def _check_finite_params(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError(f"{name}: non-finite parameter values")


# -- arithmetic ---------------------------------------------------------------


def add(a, b):
    """Elementwise sum. Shapes must match exactly, or one side is a scalar."""
    if not isinstance(b, Tensor):
        b_val = float(b)
        out_data = a.data + b_val

        def bw(g):
            if a.tracked:
                a._accum(g)
        return _make(out_data, (a,), "add_scalar", bw)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape} (use broadcast_to)")

    def bw(g):
        if a.tracked:
            a._accum(g if a.shape == g.shape else g.sum().reshape(a.shape))
        if b.tracked:
            b._accum(g if b.shape == g.shape else g.sum().reshape(b.shape))
    return _make(a.data + b.data, (a, b), "add", bw)


def mul(a, b):
    """Elementwise (Hadamard) product; same shape rules as :func:`add`."""
    if not isinstance(b, Tensor):
        b_val = float(b)

        def bw_s(g):
            if a.tracked:
                a._accum(g * b_val)
        return _make(a.data * b_val, (a,), "mul_scalar", bw_s)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape} (use broadcast_to)")

    def bw(g):
        if a.tracked:
            ga = g * b.data
            a._accum(ga if a.shape == g.shape else ga.sum().reshape(a.shape))
        if b.tracked:
            gb = g * a.data
            b._accum(gb if b.shape == g.shape else gb.sum().reshape(b.shape))
    return _make(a.data * b.data, (a, b), "mul", bw)


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D tensors, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions disagree {a.shape} vs {b.shape}")

    def bw(g):
        if a.tracked:
            a._accum(g @ b.data.T)
        if b.tracked:
            b._accum(a.data.T @ g)
    return _make(a.data @ b.data, (a, b), "matmul", bw)


# -- shape manipulation -------------------------------------------------------


def reshape(t, new_shape):
    new_shape = tuple(int(s) for s in new_shape)
    if int(np.prod(new_shape)) != t.size:
        raise ValueError(f"reshape: cannot view {t.shape} as {new_shape} (element counts differ)")
    old_shape = t.shape

    def bw(g):
        if t.tracked:
            t._accum(g.reshape(old_shape))
    return _make(t.data.reshape(new_shape), (t,), "reshape", bw)


def transpose(t, axes=None):
    """Permute axes; gradient flows back through the inverse permutation."""
    ndim = t.data.ndim
    if axes is None:
        axes = tuple(reversed(range(ndim)))
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(ndim)):
        raise ValueError(f"transpose: {axes} is not a permutation of axes for shape {t.shape}")
    inverse = np.argsort(axes)

    def bw(g):
        if t.tracked:
            t._accum(np.transpose(g, inverse))
    return _make(np.transpose(t.data, axes), (t,), "transpose", bw)


def broadcast_to(t, shape):
    """Explicitly expand ``t`` to ``shape``; backward sums over expanded axes."""
    shape = tuple(int(s) for s in shape)
    out_data = np.broadcast_to(t.data, shape)
    n_new = len(shape) - t.data.ndim
    if n_new < 0:
        raise ValueError(f"broadcast_to: target rank {len(shape)} below input rank {t.data.ndim}")
    src_shape = t.shape

    def bw(g):
        if not t.tracked:
            return
        if n_new:
            g = g.sum(axis=tuple(range(n_new)))
        expanded = tuple(i for i, s in enumerate(src_shape) if s == 1 and g.shape[i] != 1)
        if expanded:
            g = g.sum(axis=expanded, keepdims=True)
        t._accum(g)
    return _make(np.array(out_data), (t,), "broadcast_to", bw)


def concat(tensors, axis=0):
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.tracked:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), "concat", bw)


def stack(tensors, axis=0):
    tensors = list(tensors)
    if any(t.shape != tensors[0].shape for t in tensors):
        raise ValueError("stack: all tensors must share a shape")

    def bw(g):
        for i, t in enumerate(tensors):
            if t.tracked:
                t._accum(np.take(g, i, axis=axis))
    return _make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), "stack", bw)


def slice_axis0(t, index):
    """Select one slice along the leading axis (inverse of :func:`stack`)."""
    index = int(index)
    if not 0 <= index < t.shape[0]:
        raise IndexError(f"slice_axis0: index {index} out of range for {t.shape[0]}")

    def bw(g):
        if t.tracked:
            acc = np.zeros(t.shape, dtype=g.dtype)
            acc[index] = g
            t._accum(acc)
    return _make(t.data[index].copy(), (t,), "slice_axis0", bw)


# -- indexing -----------------------------------------------------------------


def take_columns(t, indices):
    """Select columns of a (C, P) tensor: result is (C, len(indices))."""
    if t.data.ndim != 2:
        raise ValueError(f"take_columns expects a 2-D tensor, got {t.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= t.shape[1]):
        raise IndexError(f"take_columns: index out of range for {t.shape[1]} columns")
    n_cols = t.shape[1]

    def bw(g):
        if t.tracked:
            acc = np.zeros((t.shape[0], n_cols), dtype=g.dtype)
            np.add.at(acc, (slice(None), idx), g)
            t._accum(acc)
    return _make(t.data[:, idx], (t,), "take_columns", bw)


def put_columns(t, indices, n_cols, accumulate="overwrite"):
    """Scatter a (C, L) tensor into a fresh zero (C, n_cols) buffer.

    ``accumulate='add'`` sums duplicate target columns; ``'overwrite'`` writes
    directly (orders used here never carry duplicates, so the modes coincide
    for scan covers).
    """
    if t.data.ndim != 2:
        raise ValueError(f"put_columns expects a 2-D tensor, got {t.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n_cols):
        raise IndexError(f"put_columns: index out of range for {n_cols} columns")
    if accumulate not in ("overwrite", "add"):
        raise ValueError(f"put_columns: unknown accumulate mode {accumulate!r}")
    out_data = np.zeros((t.shape[0], n_cols), dtype=t.dtype)
    if accumulate == "add":
        np.add.at(out_data, (slice(None), idx), t.data)
    else:
        out_data[:, idx] = t.data

    def bw(g):
        if t.tracked:
            t._accum(g[:, idx])
    return _make(out_data, (t,), "put_columns", bw)


def select_class_probs(t, class_idx, pos_idx):
    """Gather t[class_idx[i], pos_idx[i]] from a (K, P) tensor into a vector."""
    if t.data.ndim != 2:
        raise ValueError(f"select_class_probs expects a 2-D tensor, got {t.shape}")
    ci = np.asarray(class_idx, dtype=np.int64)
    pi = np.asarray(pos_idx, dtype=np.int64)
    if ci.shape != pi.shape:
        raise ValueError("select_class_probs: index arrays must have equal length")

    def bw(g):
        if t.tracked:
            acc = np.zeros(t.shape, dtype=g.dtype)
            np.add.at(acc, (ci, pi), g)
            t._accum(acc)
    return _make(t.data[ci, pi], (t,), "select_class_probs", bw)


# -- reductions ---------------------------------------------------------------


def sum_(t, axis=None, keepdims=False):
    def bw(g):
        if not t.tracked:
            return
        if axis is None:
            t._accum(np.full(t.shape, g if np.ndim(g) == 0 else g.reshape(()), dtype=t.dtype))
        else:
            t._accum(np.broadcast_to(np.expand_dims(g, axis) if not keepdims else g, t.shape).copy())
    return _make(t.data.sum(axis=axis, keepdims=keepdims), (t,), "sum", bw)


def mean(t, axis=None):
    n = t.size if axis is None else t.shape[axis]
    return sum_(t, axis=axis) / n


# -- activations --------------------------------------------------------------


def relu(t):
    mask = t.data > 0

    def bw(g):
        if t.tracked:
            t._accum(g * mask)
    return _make(np.maximum(t.data, 0), (t,), "relu", bw)


def sigmoid(t):
    s = expit(t.data)

    def bw(g):
        if t.tracked:
            t._accum(g * s * (1.0 - s))
    return _make(s, (t,), "sigmoid", bw)


def silu(t):
    """x * sigmoid(x), the smooth gating activation."""
    s = expit(t.data)
    out = t.data * s

    def bw(g):
        if t.tracked:
            t._accum(g * (s + out * (1.0 - s)))
    return _make(out, (t,), "silu", bw)


def softplus(t):
    out = np.logaddexp(0.0, t.data)
    s = expit(t.data)

    def bw(g):
        if t.tracked:
            t._accum(g * s)
    return _make(out, (t,), "softplus", bw)


def exp(t):
    out = np.exp(t.data)

    def bw(g):
        if t.tracked:
            t._accum(g * out)
    return _make(out, (t,), "exp", bw)


def log(t):
    if np.any(t.data <= 0):
        raise ValueError("log: input must be strictly positive")
    x = t.data

    def bw(g):
        if t.tracked:
            t._accum(g / x)
    return _make(np.log(x), (t,), "log", bw)


def reciprocal(t):
    if np.any(t.data == 0):
        raise ValueError("reciprocal: division by zero")
    inv = 1.0 / t.data

    def bw(g):
        if t.tracked:
            t._accum(-g * inv * inv)
    return _make(inv, (t,), "reciprocal", bw)


def clamp_min(t, floor):
    floor = float(floor)
    mask = t.data >= floor

    def bw(g):
        if t.tracked:
            t._accum(g * mask)
    return _make(np.maximum(t.data, floor), (t,), "clamp_min", bw)


def softmax(t, axis):
    """Softmax along ``axis``; outputs are non-negative and sum to one."""
    if not np.all(np.isfinite(t.data)):
        raise ValueError("softmax: non-finite input")
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        if t.tracked:
            inner = (g * out).sum(axis=axis, keepdims=True)
            t._accum((g - inner) * out)
    return _make(out, (t,), "softmax", bw)


_ACTIVATIONS = {
    "relu": relu,
    "sigmoid": sigmoid,
    "silu": silu,
    "softplus": softplus,
    "exp": exp,
    "log": log,
}


def apply_activation(t, kind, axis=None):
    """Dispatch an activation by name; ``softmax`` requires ``axis``."""
    if kind == "softmax":
        if axis is None:
            raise ValueError("softmax requires an axis")
        return softmax(t, axis)
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(t)


# -- convolutions -------------------------------------------------------------


def conv1d(t, kernel, bias=None, padding=0):
    """1-D cross-correlation over a (C_in, L) tensor with a (C_out, C_in, k) kernel."""
    if t.data.ndim != 2 or kernel.data.ndim != 3:
        raise ValueError("conv1d expects (C_in, L) input and (C_out, C_in, k) kernel")
    c_in, length = t.shape
    c_out, kc_in, k = kernel.shape
    if kc_in != c_in:
        raise ValueError(f"conv1d: channel mismatch {c_in} vs {kc_in}")
    out_len = length + 2 * padding - k + 1
    if out_len <= 0:
        raise ValueError("conv1d: output length would be non-positive")
    xp = np.pad(t.data, ((0, 0), (padding, padding))) if padding else t.data
    out = np.zeros((c_out, out_len), dtype=t.dtype)
    for u in range(k):
        out += kernel.data[:, :, u] @ xp[:, u:u + out_len]
    if bias is not None:
        out += bias.data[:, None]
    parents = (t, kernel) if bias is None else (t, kernel, bias)

    def bw(g):
        if t.tracked:
            gxp = np.zeros_like(xp)
            for u in range(k):
                gxp[:, u:u + out_len] += kernel.data[:, :, u].T @ g
            t._accum(gxp[:, padding:padding + length] if padding else gxp)
        if kernel.tracked:
            gk = np.zeros_like(kernel.data)
            for u in range(k):
                gk[:, :, u] = g @ xp[:, u:u + out_len].T
            kernel._accum(gk)
        if bias is not None and bias.tracked:
            bias._accum(g.sum(axis=1))
    return _make(out, parents, "conv1d", bw)


def conv2d(t, kernel, bias=None, stride=1, padding=0, transposed=False):
    """2-D cross-correlation (or its transpose) on a (C, H, W) tensor.

    Plain mode computes ``out[o,i,j] = sum w[o,c,u,v] * x[c, i*s+u-p, j*s+v-p]``
    with zero padding; transposed mode is the adjoint map (used for learned
    upsampling), with ``kernel`` laid out as (C_in, C_out, kh, kw).
    """
    if transposed:
        return _conv_transpose2d(t, kernel, bias, stride)
    if t.data.ndim != 3 or kernel.data.ndim != 4:
        raise ValueError("conv2d expects (C, H, W) input and (C_out, C_in, kh, kw) kernel")
    c_in, h, w = t.shape
    c_out, kc_in, kh, kw = kernel.shape
    if kc_in != c_in:
        raise ValueError(f"conv2d: channel mismatch (input {c_in}, kernel expects {kc_in})")
    if stride < 1:
        raise ValueError("conv2d: stride must be >= 1")
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (w + 2 * padding - kw) // stride + 1
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"conv2d: output size {out_h}x{out_w} is non-positive")
    xp = np.pad(t.data, ((0, 0), (padding, padding), (padding, padding))) if padding else t.data
    span_h = (out_h - 1) * stride + 1
    span_w = (out_w - 1) * stride + 1
    out = np.zeros((c_out, out_h, out_w), dtype=t.dtype)
    for u in range(kh):
        for v in range(kw):
            patch = xp[:, u:u + span_h:stride, v:v + span_w:stride]
            out += np.einsum("oc,chw->ohw", kernel.data[:, :, u, v], patch, optimize=True)
    if bias is not None:
        out += bias.data[:, None, None]
    parents = (t, kernel) if bias is None else (t, kernel, bias)

    def bw(g):
        if t.tracked:
            gxp = np.zeros_like(xp)
            for u in range(kh):
                for v in range(kw):
                    gxp[:, u:u + span_h:stride, v:v + span_w:stride] += np.einsum(
                        "oc,ohw->chw", kernel.data[:, :, u, v], g, optimize=True)
            t._accum(gxp[:, padding:padding + h, padding:padding + w] if padding else gxp)
        if kernel.tracked:
            gk = np.zeros_like(kernel.data)
            for u in range(kh):
                for v in range(kw):
                    patch = xp[:, u:u + span_h:stride, v:v + span_w:stride]
                    gk[:, :, u, v] = np.einsum("ohw,chw->oc", g, patch, optimize=True)
            kernel._accum(gk)
        if bias is not None and bias.tracked:
            bias._accum(g.sum(axis=(1, 2)))
    return _make(out, parents, "conv2d", bw)


def _conv_transpose2d(t, kernel, bias, stride):
    if t.data.ndim != 3 or kernel.data.ndim != 4:
        raise ValueError("transposed conv2d expects (C, H, W) input and (C_in, C_out, kh, kw) kernel")
    c_in, h, w = t.shape
    kc_in, c_out, kh, kw = kernel.shape
    if kc_in != c_in:
        raise ValueError(f"transposed conv2d: channel mismatch (input {c_in}, kernel expects {kc_in})")
    out_h = (h - 1) * stride + kh
    out_w = (w - 1) * stride + kw
    span_h = (h - 1) * stride + 1
    span_w = (w - 1) * stride + 1
    out = np.zeros((c_out, out_h, out_w), dtype=t.dtype)
    for u in range(kh):
        for v in range(kw):
            out[:, u:u + span_h:stride, v:v + span_w:stride] += np.einsum(
                "co,chw->ohw", kernel.data[:, :, u, v], t.data, optimize=True)
    if bias is not None:
        out += bias.data[:, None, None]
    parents = (t, kernel) if bias is None else (t, kernel, bias)

    def bw(g):
        if t.tracked:
            gx = np.zeros_like(t.data)
            for u in range(kh):
                for v in range(kw):
                    gx += np.einsum("co,ohw->chw", kernel.data[:, :, u, v],
                                    g[:, u:u + span_h:stride, v:v + span_w:stride], optimize=True)
            t._accum(gx)
        if kernel.tracked:
            gk = np.zeros_like(kernel.data)
            for u in range(kh):
                for v in range(kw):
                    gk[:, :, u, v] = np.einsum(
                        "chw,ohw->co", t.data, g[:, u:u + span_h:stride, v:v + span_w:stride],
                        optimize=True)
            kernel._accum(gk)
        if bias is not None and bias.tracked:
            bias._accum(g.sum(axis=(1, 2)))
    return _make(out, parents, "conv_transpose2d", bw)


# -- bilinear resize ----------------------------------------------------------


def _bilinear_weights(n_in, n_out):
    """Sample positions and weights for half-pixel-centred bilinear resize."""
    coords = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    coords = np.clip(coords, 0, n_in - 1)
    lo = np.floor(coords).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = coords - lo
    return lo, hi, frac


def resize_bilinear(t, out_h, out_w):
    """Bilinear spatial resize of a (C, H, W) tensor (half-pixel convention)."""
    if t.data.ndim != 3:
        raise ValueError("resize_bilinear expects a (C, H, W) tensor")
    c, h, w = t.shape
    if (h, w) == (out_h, out_w):
        return reshape(t, t.shape)
    r_lo, r_hi, r_f = _bilinear_weights(h, out_h)
    c_lo, c_hi, c_f = _bilinear_weights(w, out_w)
    rf = r_f[:, None]
    cf = c_f[None, :]
    x = t.data
    top = x[:, r_lo][:, :, c_lo] * (1 - cf) + x[:, r_lo][:, :, c_hi] * cf
    bot = x[:, r_hi][:, :, c_lo] * (1 - cf) + x[:, r_hi][:, :, c_hi] * cf
    out = top * (1 - rf) + bot * rf

    def bw(g):
        if not t.tracked:
            return
        gx = np.zeros_like(x)
        g_top = g * (1 - rf)
        g_bot = g * rf
        for g_rows, rows in ((g_top, r_lo), (g_bot, r_hi)):
            np.add.at(gx, (slice(None), rows[:, None], c_lo[None, :]), g_rows * (1 - cf))
            np.add.at(gx, (slice(None), rows[:, None], c_hi[None, :]), g_rows * cf)
        t._accum(gx)
    return _make(out.astype(t.dtype), (t,), "resize_bilinear", bw)
