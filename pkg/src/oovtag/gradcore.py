"""Array-valued reverse-mode autodiff kernels and the Adam optimizer.

Every differentiable quantity in the package is a :class:`Tensor`.  Kernels
build a tape implicitly: each result remembers its parents and a closure that
maps the output gradient to parent gradients.  Only coarse kernels are
provided (embedding lookup, affine maps, 1-D convolution, a fused LSTM cell,
CRF loss lives in :mod:`oovtag.crf`), which keeps the tape short enough for
desk-scale training in pure numpy.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64
_grad_enabled = True


class NonFiniteGradientError(FloatingPointError):
    pass


class Tensor:
    """A node of the computation graph holding a numpy array."""

    __slots__ = ("data", "grad", "_parents", "_backward", "_requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._requires_grad = requires_grad

    @property
    def requires_grad(self) -> bool:
        return self._requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None) -> None:
        """Propagate gradients from this node to every leaf that requires them."""
        if not self.requires_grad:
            return
        order = _topological_order(self)
        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=DTYPE)
        # intermediate grads are scratch; only leaves keep them afterwards
        for node in order:
            if node._backward is not None:
                node.grad = None
        self._accumulate(seed)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            parent_grads = node._backward(node.grad)
            for parent, g in zip(node._parents, parent_grads):
                if g is not None and parent.requires_grad:
                    parent._accumulate(g)
            node.grad = None

    # operator sugar for the handful of elementwise ops used by the models
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

    def __getitem__(self, index):
        return getitem(self, index)


class Parameter(Tensor):
    """A named leaf tensor.  Gradients only flow into it while ``trainable``."""

    __slots__ = ("name", "trainable")

    def __init__(self, name: str, data, trainable: bool = True):
        super().__init__(np.array(data, dtype=DTYPE, copy=True))
        self.name = name
        self.trainable = trainable

    @property
    def requires_grad(self) -> bool:
        return self.trainable

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape}, trainable={self.trainable})"


@contextlib.contextmanager
def no_grad():
    """Build no tape inside the block (inference only)."""
    global _grad_enabled
    previous, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = previous


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``data`` as the output of a kernel with the given backward closure.

    ``backward(g)`` must return one gradient (or None) per parent.
    """
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return make_op(a.data * c, (a,), lambda g: (g * c,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return make_op(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return make_op(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return make_op(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


# ---------------------------------------------------------------- structural


def getitem(a: Tensor, index) -> Tensor:
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return make_op(a.data[index], (a,), backward)


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, slice, type(Ellipsis))) or p is None for p in parts)


def reshape(a: Tensor, shape) -> Tensor:
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_op(data, parts, backward)


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    data = np.stack([p.data for p in parts], axis=axis)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return make_op(data, parts, backward)


def where_rows(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Select ``a`` where ``mask`` (broadcast over the last axis) else ``b``."""
    m = np.asarray(mask, dtype=bool)[..., None]
    return make_op(np.where(m, a.data, b.data), (a, b),
                   lambda g: (_unbroadcast(np.where(m, g, 0.0), a.shape),
                              _unbroadcast(np.where(m, 0.0, g), b.shape)))


def scatter_rows(base: Tensor, index, rows: Tensor) -> Tensor:
    """Return a copy of ``base`` with ``base[index] = rows``."""
    data = base.data.copy()
    data[index] = rows.data

    def backward(g):
        gb = g.copy()
        gb[index] = 0.0
        return gb, g[index]

    return make_op(data, (base, rows), backward)


# ---------------------------------------------------------------- reductions


def sum_all(a: Tensor) -> Tensor:
    return make_op(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a: Tensor, axis: int) -> Tensor:
    n = a.shape[axis]

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, a.shape).copy(),)

    return make_op(a.data.mean(axis=axis), (a,), backward)


def weighted_sum(a: Tensor, weights: np.ndarray) -> Tensor:
    """Contract the leading axis of ``a`` with a fixed weight matrix: ``weights @ a``."""
    w = np.asarray(weights, dtype=DTYPE)
    return make_op(w @ a.data, (a,), lambda g: (w.T @ g,))


def logsumexp_values(scores, axis=None) -> np.ndarray:
    """Max-shifted log-sum-exp on a plain array."""
    s = np.asarray(scores, dtype=DTYPE)
    if s.size == 0:
        raise ValueError("empty-reduction")
    m = np.max(s, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(s - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis) if axis is not None else out.reshape(())


def logsumexp(scores) -> Tensor:
    """log sum exp over a vector, stable for large entries."""
    x = as_tensor(scores)
    if x.data.size == 0:
        raise ValueError("empty-reduction")
    val = logsumexp_values(x.data)
    soft = np.exp(x.data - val)
    return make_op(np.asarray(val), (x,), lambda g: (g * soft,))


# ---------------------------------------------------------------- affine / lookup


def embedding(table: Tensor, ids) -> Tensor:
    idx = np.asarray(ids, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return make_op(table.data[idx], (table,), backward)


def matmul(x: Tensor, w: Tensor) -> Tensor:
    """``x @ w`` for x of shape [..., in] and w of shape [in, out]."""
    x, w = as_tensor(x), as_tensor(w)

    def backward(g):
        gx = g @ w.data.T
        gw = x.data.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return gx, gw

    return make_op(x.data @ w.data, (x, w), backward)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"affine: expected input dim {w.shape[0]}, got {x.shape[-1]}")

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ w.data.T
        gw = x.data.reshape(-1, x.shape[-1]).T @ g2
        return gx, gw, g2.sum(axis=0)

    return make_op(x.data @ w.data + b.data, (x, w, b), backward)


# ---------------------------------------------------------------- convolution


def conv1d(x: Tensor, w: Tensor, b: Tensor, pad_left: int = 0, pad_right: int = 0) -> Tensor:
    """Cross-correlation over the time axis.

    x: [B, T, Cin], w: [k, Cin, Cout], b: [Cout]  ->  [B, T + pads - k + 1, Cout].
    Padding inserts zeros.
    """
    k, cin, cout = w.shape
    if x.shape[-1] != cin:
        raise ValueError(f"conv1d: expected {cin} input channels, got {x.shape[-1]}")
    xp = np.pad(x.data, ((0, 0), (pad_left, pad_right), (0, 0)))
    t_out = xp.shape[1] - k + 1
    if t_out < 1:
        raise ValueError("conv1d: input shorter than kernel")
    # windows: [B, t_out, k, Cin]
    windows = np.stack([xp[:, j:j + t_out, :] for j in range(k)], axis=2)
    flat_w = w.data.reshape(k * cin, cout)
    cols = windows.reshape(x.shape[0], t_out, k * cin)
    out = cols @ flat_w + b.data

    def backward(g):
        gw = cols.reshape(-1, k * cin).T @ g.reshape(-1, cout)
        gcols = (g @ flat_w.T).reshape(x.shape[0], t_out, k, cin)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, j:j + t_out, :] += gcols[:, :, j, :]
        gx = gxp[:, pad_left:pad_left + x.shape[1], :]
        return gx, gw.reshape(w.shape), g.sum(axis=(0, 1))

    return make_op(out, (x, w, b), backward)


def masked_max(x: Tensor, valid: np.ndarray) -> Tensor:
    """Max over axis 1 of x [B, T, C], ignoring positions where ``valid[B, T]`` is False."""
    v = np.asarray(valid, dtype=bool)
    masked = np.where(v[:, :, None], x.data, -np.inf)
    arg = masked.argmax(axis=1)  # first maximum wins
    out = np.take_along_axis(x.data, arg[:, None, :], axis=1)[:, 0, :]

    def backward(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, arg[:, None, :], g[:, None, :], axis=1)
        return (full,)

    return make_op(out, (x,), backward)


# ---------------------------------------------------------------- recurrent


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, w: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step with fused gates.

    Weight layout: ``w`` is [in + hidden, 4 * hidden], ``b`` is [4 * hidden];
    gate blocks are ordered input, forget, candidate, output.
    Returns ``(h, c)`` with ``c = f*c_prev + i*g`` and ``h = o*tanh(c)``.
    """
    n_in = x.shape[-1]
    hid = h_prev.shape[-1]
    if w.shape != (n_in + hid, 4 * hid):
        raise ValueError(f"lstm_cell: expected weights {(n_in + hid, 4 * hid)}, got {w.shape}")
    if c_prev.shape != h_prev.shape:
        raise ValueError(f"lstm_cell: cell state {c_prev.shape} vs hidden {h_prev.shape}")
    xh = np.concatenate([x.data, h_prev.data], axis=-1)
    z = xh @ w.data + b.data
    i = _sigmoid(z[..., :hid])
    f = _sigmoid(z[..., hid:2 * hid])
    gc = np.tanh(z[..., 2 * hid:3 * hid])
    o = _sigmoid(z[..., 3 * hid:])
    c = f * c_prev.data + i * gc
    tc = np.tanh(c)
    h = o * tc

    def backward(g):
        gh, gcell = g[..., :hid], g[..., hid:]
        dc = gcell + gh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dc * gc * i * (1.0 - i),
            dc * c_prev.data * f * (1.0 - f),
            dc * i * (1.0 - gc * gc),
            gh * tc * o * (1.0 - o),
        ], axis=-1)
        dxh = dz @ w.data.T
        dw = xh.reshape(-1, xh.shape[-1]).T @ dz.reshape(-1, dz.shape[-1])
        db = dz.reshape(-1, dz.shape[-1]).sum(axis=0)
        return dxh[..., :n_in], dxh[..., n_in:], dc * f, dw, db

    hc = make_op(np.concatenate([h, c], axis=-1), (x, h_prev, c_prev, w, b), backward)
    return hc[..., :hid], hc[..., hid:]


# ---------------------------------------------------------------- initialisation


def uniform_embedding(rng: np.random.Generator, rows: int, dim: int) -> np.ndarray:
    return rng.uniform(-0.1, 0.1, size=(rows, dim))


def glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def lstm_init(rng: np.random.Generator, n_in: int, hidden: int, forget_bias: float = 1.0):
    w = glorot(rng, (n_in + hidden, 4 * hidden), n_in + hidden, 4 * hidden)
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = forget_bias
    return w, b


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def like(cls, param: Parameter, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8) -> "AdamState":
        return cls(np.zeros_like(param.data), np.zeros_like(param.data), 0, lr, beta1, beta2, epsilon)


def adam_step(param: Parameter, state: AdamState) -> None:
    """Bias-corrected Adam update of ``param`` in place."""
    if not param.trainable:
        raise ValueError(f"adam_step on frozen parameter {param.name!r}")
    g = param.grad if param.grad is not None else np.zeros_like(param.data)
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradientError(f"nonfinite-gradient in parameter {param.name!r}")
    state.step_count += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * (g * g)
    denom = np.sqrt(state.v / (1.0 - state.beta2 ** state.step_count))
    denom += state.epsilon
    param.data -= (state.lr / (1.0 - state.beta1 ** state.step_count)) * state.m / denom


class Adam:
    """Adam over a fixed list of parameters.  Frozen parameters are skipped."""

    def __init__(self, params: Iterable[Parameter], lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = list(params)
        self.states = {id(p): AdamState.like(p, lr, beta1, beta2, epsilon) for p in self.params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for p in self.params:
            if p.trainable:
                adam_step(p, self.states[id(p)])


# ---------------------------------------------------------------- checking


@dataclass
class GradCheck:
    max_rel_error: float
    worst: str = ""
    per_param: dict = field(default_factory=dict)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise |a-n| / max(|a|+|n|, floor)."""
    return np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)


def check_gradients(loss_fn: Callable[[], Tensor], params: Sequence[Parameter], h: float = 1e-5) -> GradCheck:
    """Compare reverse-mode gradients of ``loss_fn`` against central differences."""
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = {p.name: p.grad.copy() for p in params}
    result = GradCheck(0.0)
    for p in params:
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            up = float(loss_fn().data)
            flat[j] = old - h
            down = float(loss_fn().data)
            flat[j] = old
            numeric.reshape(-1)[j] = (up - down) / (2 * h)
        err = float(relative_error(analytic[p.name], numeric).max()) if numeric.size else 0.0
        result.per_param[p.name] = err
        if err >= result.max_rel_error:
            result.max_rel_error, result.worst = err, p.name
    return result
