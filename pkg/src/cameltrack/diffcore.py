"""Minimal reverse-mode autodiff over float64 numpy arrays.

Operations are recorded on the active :class:`Tape` whenever one of their
inputs requires a gradient. Outside of a tape every op is a plain forward
computation, which is how inference runs.
"""
from __future__ import annotations

import threading
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

LAYER_NORM_EPS = 1e-5


class ShapeMismatch(ValueError):
    pass


class NonFiniteValue(ArithmeticError):
    pass


class NonScalarLoss(ValueError):
    pass


class TapeConsumed(RuntimeError):
    pass


class ZeroNormWarning(RuntimeWarning):
    """l2-normalization met an all-zero vector; the zero vector was returned."""


_state = threading.local()


def _tape_stack():
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def row_invariant_matmul(enabled=True):
    """Route matmul through einsum loops so each output row is computed
    identically regardless of its position in the batch (BLAS kernels are
    not bitwise row-position independent)."""
    prev = getattr(_state, "row_invariant", False)
    _state.row_invariant = enabled
    try:
        yield
    finally:
        _state.row_invariant = prev


def _row_invariant():
    return getattr(_state, "row_invariant", False)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "__weakref__")

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data.copy()

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of operations; backward visits them in exact reverse."""

    def __init__(self):
        self.records = []
        self.consumed = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def record(self, out, inputs, backward_fn):
        self.records.append((out, tuple(inputs), backward_fn))

    def backward(self, loss):
        backward(self, loss)


def _finish(op_kind, out_data, inputs, backward_fn):
    if not np.all(np.isfinite(out_data)):
        raise NonFiniteValue(f"{op_kind} produced a non-finite value")
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.requires_grad = needs
    if needs:
        if tape.consumed:
            raise TapeConsumed("cannot record on a consumed tape")
        tape.record(out, inputs, backward_fn)
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op_kind, *shapes):
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError as exc:
        raise ShapeMismatch(f"{op_kind}: incompatible shapes {shapes}") from exc


def _mm(a, b):
    if _row_invariant():
        return np.einsum("...ik,...kj->...ij", a, b, optimize=False)
    return np.matmul(a, b)


# ---------------------------------------------------------------- ops


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a.shape, b.shape)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _finish("add", a.data + b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a.shape, b.shape)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _finish("mul", a.data * b.data, (a, b), bw)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    _broadcast_shape("matmul", a.shape[:-2], b.shape[:-2])

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _finish("matmul", _mm(a.data, b.data), (a, b), bw)


def linear(x, weight, bias=None):
    """x @ weight + bias with weight laid out (in_features, out_features)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeMismatch(f"linear: {x.shape} with weight {weight.shape}")
    out = _mm(x.data, weight.data)
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[1],):
            raise ShapeMismatch(f"linear: bias {bias.shape} for weight {weight.shape}")
        out = out + bias.data
        inputs.append(bias)

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = np.matmul(g, weight.data.T)
        gw = np.matmul(x.data.reshape(-1, x.shape[-1]).T, g2)
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _finish("linear", out, inputs, bw)


def softmax_lastdim(x):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _finish("softmax_lastdim", s, (x,), bw)


def log_softmax_lastdim(x):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _finish("log_softmax_lastdim", out, (x,), bw)


def layer_norm(x, gamma=None, beta=None, eps=LAYER_NORM_EPS):
    x = as_tensor(x)
    n = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv_std = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv_std
    out = xhat
    inputs = [x]
    if gamma is not None:
        gamma = as_tensor(gamma)
        if gamma.shape != (n,):
            raise ShapeMismatch(f"layer_norm: gamma {gamma.shape} for width {n}")
        out = out * gamma.data
        inputs.append(gamma)
    if beta is not None:
        beta = as_tensor(beta)
        if beta.shape != (n,):
            raise ShapeMismatch(f"layer_norm: beta {beta.shape} for width {n}")
        out = out + beta.data
        inputs.append(beta)

    def bw(g):
        gxhat = g * gamma.data if gamma is not None else g
        gx = inv_std * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        grads = [gx]
        lead = tuple(range(g.ndim - 1))
        if gamma is not None:
            grads.append((g * xhat).sum(axis=lead))
        if beta is not None:
            grads.append(g.sum(axis=lead))
        return grads

    return _finish("layer_norm", out, inputs, bw)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x):
    """tanh approximation of GELU."""
    x = as_tensor(x)
    u = _GELU_C * (x.data + 0.044715 * x.data**3)
    t = np.tanh(u)
    out = 0.5 * x.data * (1.0 + t)

    def bw(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du),)

    return _finish("gelu", out, (x,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeMismatch("concat: no inputs")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return np.split(g, bounds, axis=axis)

    return _finish("concat", out, tensors, bw)


def slice_(x, index):
    """Basic or advanced numpy indexing; gradient scatters back with add."""
    x = as_tensor(x)
    try:
        out = np.array(x.data[index], dtype=np.float64)
    except IndexError as exc:
        raise ShapeMismatch(f"slice: {index!r} on {x.shape}") from exc

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _finish("slice", out, (x,), bw)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = np.asarray(x.data.mean(axis=axis, keepdims=keepdims), dtype=np.float64)
    count = x.data.size // max(out.size, 1) if axis is not None else x.data.size

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape) / count,)

    return _finish("mean", out, (x,), bw)


def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims), dtype=np.float64)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _finish("sum", out, (x,), bw)


def l2_normalize_lastdim(x):
    """Unit-normalize along the last axis. All-zero vectors map to zero and
    emit a :class:`ZeroNormWarning` instead of producing NaN."""
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    zero = norm == 0.0
    if zero.any():
        warnings.warn("l2_normalize_lastdim: zero vector", ZeroNormWarning, stacklevel=2)
    safe = np.where(zero, 1.0, norm)
    y = np.where(zero, 0.0, x.data / safe)

    def bw(g):
        gx = (g - y * (g * y).sum(axis=-1, keepdims=True)) / safe
        return (np.where(zero, 0.0, gx),)

    return _finish("l2_normalize_lastdim", y, (x,), bw)


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(f"reshape: {x.shape} -> {shape}") from exc

    def bw(g):
        return (g.reshape(x.shape),)

    return _finish("reshape", out, (x,), bw)


def transpose(x, axes):
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def bw(g):
        return (np.transpose(g, inverse),)

    return _finish("transpose", np.ascontiguousarray(np.transpose(x.data, axes)), (x,), bw)


_OPS = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "softmax_lastdim": softmax_lastdim,
    "log_softmax_lastdim": log_softmax_lastdim,
    "layer_norm": layer_norm,
    "gelu": gelu,
    "linear": linear,
    "concat": lambda *ts, **kw: concat(ts, **kw),
    "slice": slice_,
    "mean": mean,
    "sum": sum_,
    "l2_normalize_lastdim": l2_normalize_lastdim,
    "reshape": reshape,
    "transpose": transpose,
}


def forward_op(op_kind, inputs, **kwargs):
    """Dispatch by name, e.g. ``forward_op("matmul", [a, b])``."""
    try:
        fn = _OPS[op_kind]
    except KeyError:
        raise ValueError(f"unknown op {op_kind!r}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------- backward


def backward(tape: Tape, loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf
    seen on the tape. Leaves off every path to ``loss`` get exact zeros."""
    if tape.consumed:
        raise TapeConsumed("backward already ran on this tape")
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    tape.consumed = True

    produced = {id(out) for out, _, _ in tape.records}
    leaves = {}
    for _, inputs, _ in tape.records:
        for t in inputs:
            if t.requires_grad and id(t) not in produced:
                leaves[id(t)] = t
    if loss.requires_grad and id(loss) not in produced:
        leaves[id(loss)] = loss

    grads = {id(loss): np.ones_like(loss.data)}
    for out, inputs, bw in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, gi in zip(inputs, bw(g)):
            if not t.requires_grad:
                continue
            prev = grads.get(id(t))
            grads[id(t)] = gi if prev is None else prev + gi

    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(leaf.data)
        g = np.array(g, dtype=np.float64).reshape(leaf.shape)
        leaf.grad = g if leaf.grad is None else leaf.grad + g
    tape.records.clear()


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state: AdamState, params: Sequence[Tensor], grads: Sequence[np.ndarray]):
    """Bias-corrected Adam update. Parameter arrays are replaced, not mutated."""
    if len(params) != len(grads):
        raise ShapeMismatch(f"adam_step: {len(params)} params vs {len(grads)} grads")
    for p, g in zip(params, grads):
        if np.shape(g) != p.shape:
            raise ShapeMismatch(f"adam_step: grad {np.shape(g)} for param {p.shape}")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    elif len(state.m) != len(params) or any(m.shape != p.shape for m, p in zip(state.m, params)):
        raise ShapeMismatch("adam_step: parameter list changed shape between steps")

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        mhat = state.m[i] / c1
        vhat = state.v[i] / c2
        p.data = p.data - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return params


# ---------------------------------------------------------------- gradient check


def relative_error(analytic, numeric, floor=1e-6):
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def gradcheck(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    n_samples=200,
    h=1e-6,
    rng=None,
    floor=1e-6,
):
    """Compare tape gradients of ``fn()`` to central finite differences.

    ``fn`` must build its scalar output from ``params``. Up to ``n_samples``
    scalar coordinates are drawn uniformly over all parameter entries.
    Returns ``(max_relative_error, n_checked)``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for p in params:
        p.grad = None
        p.requires_grad = True
    with Tape() as tape:
        loss = fn()
    backward(tape, loss)
    analytic = [p.grad.copy() for p in params]

    sizes = np.array([p.data.size for p in params])
    total = int(sizes.sum())
    flat = rng.choice(total, size=min(n_samples, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    for f in flat:
        pi = int(np.searchsorted(offsets, f, side="right") - 1)
        idx = np.unravel_index(int(f - offsets[pi]), params[pi].shape)
        p = params[pi]
        orig = p.data[idx]
        p.data = p.data.copy()
        p.data[idx] = orig + h
        up = fn().item()
        p.data[idx] = orig - h
        down = fn().item()
        p.data[idx] = orig
        numeric = (up - down) / (2 * h)
        worst = max(worst, float(relative_error(analytic[pi][idx], numeric, floor)))
    return worst, len(flat)
