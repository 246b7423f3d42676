"""Minimal dense-tensor reverse-mode autodiff engine.

Tensors wrap real numpy arrays (float32 for training, float64 for
gradient checking). The computation graph is implicit: every tensor
produced by an operation keeps references to its parents and a backward
closure; ``backward()`` on a scalar loss walks the graph once in reverse
topological order and accumulates gradients into ``.grad``.

Deliberately restricted surface: elementwise arithmetic on identical
shapes (plus 0-dim scalars), 3x3 same-padding convolution, dense layers,
ReLU, softplus, per-channel scaling, reductions, reshape/narrow, and
user-supplied custom nodes. No general broadcasting.
"""

import contextlib

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, NumericError

_GRAD_ENABLED = True

_FLOAT_DTYPES = (np.float32, np.float64)


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, op="leaf", parents=(), backward_fn=None):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents = parents
        self._backward_fn = backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, dtype={self.data.dtype})"

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def item(self) -> float:
        return float(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_const_like(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)


def _const_like(value, ref: Tensor) -> Tensor:
    return Tensor(np.asarray(value, dtype=ref.data.dtype))


def _as_tensor(x, ref: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return _const_like(x, ref)


def _node(data, parents, op, backward_fn):
    req = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, op=op, parents=tuple(parents), backward_fn=backward_fn)


def _check_same_dtype(a: Tensor, b: Tensor, op: str):
    if a.data.dtype != b.data.dtype:
        raise DimensionError(f"{op}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")


def _pair_shapes(a: Tensor, b: Tensor, op: str):
    # identical shapes, or one operand is a 0-dim scalar
    if a.data.shape == b.data.shape or a.data.ndim == 0 or b.data.ndim == 0:
        return
    raise DimensionError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def _reduce_to(g, shape):
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b):
    a = a if isinstance(a, Tensor) else _const_like(a, b)
    b = _as_tensor(b, a)
    _check_same_dtype(a, b, "add")
    _pair_shapes(a, b, "add")
    out_data = a.data + b.data

    def _bwd(g):
        if a.requires_grad:
            a._accum(_reduce_to(g, a.data.shape))
        if b.requires_grad:
            b._accum(_reduce_to(g, b.data.shape))

    return _node(out_data, (a, b), "add", _bwd)


def sub(a, b):
    a = a if isinstance(a, Tensor) else _const_like(a, b)
    b = _as_tensor(b, a)
    _check_same_dtype(a, b, "sub")
    _pair_shapes(a, b, "sub")
    out_data = a.data - b.data

    def _bwd(g):
        if a.requires_grad:
            a._accum(_reduce_to(g, a.data.shape))
        if b.requires_grad:
            b._accum(_reduce_to(-g, b.data.shape))

    return _node(out_data, (a, b), "sub", _bwd)


def mul(a, b):
    a = a if isinstance(a, Tensor) else _const_like(a, b)
    b = _as_tensor(b, a)
    _check_same_dtype(a, b, "mul")
    _pair_shapes(a, b, "mul")
    out_data = a.data * b.data

    def _bwd(g):
        if a.requires_grad:
            a._accum(_reduce_to(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_reduce_to(g * a.data, b.data.shape))

    return _node(out_data, (a, b), "mul", _bwd)


def div(a, b):
    a = a if isinstance(a, Tensor) else _const_like(a, b)
    b = _as_tensor(b, a)
    _check_same_dtype(a, b, "div")
    _pair_shapes(a, b, "div")
    out_data = a.data / b.data

    def _bwd(g):
        if a.requires_grad:
            a._accum(_reduce_to(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_reduce_to(-g * a.data / (b.data * b.data), b.data.shape))

    return _node(out_data, (a, b), "div", _bwd)


def neg(a: Tensor):
    def _bwd(g):
        if a.requires_grad:
            a._accum(-g)

    return _node(-a.data, (a,), "neg", _bwd)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def relu(a: Tensor):
    mask = a.data > 0  # subgradient at 0 is 0
    out_data = np.where(mask, a.data, a.data.dtype.type(0))

    def _bwd(g):
        if a.requires_grad:
            a._accum(np.where(mask, g, g.dtype.type(0)))

    return _node(out_data, (a,), "relu", _bwd)


def softplus(a: Tensor):
    out_data = np.logaddexp(a.data.dtype.type(0), a.data)

    def _bwd(g):
        if a.requires_grad:
            x = a.data
            sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-x)), np.exp(x) / (1.0 + np.exp(x)))
            a._accum(g * sig.astype(x.dtype))

    return _node(out_data, (a,), "softplus", _bwd)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, w: Tensor, b: Tensor):
    """3x3 cross-correlation, zero padding 1, stride 1, per-channel bias."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-d input/kernel, got {x.data.shape} / {w.data.shape}")
    if w.data.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d: kernel must be 3x3, got {w.data.shape[2:]}")
    if w.data.shape[1] != x.data.shape[1]:
        raise DimensionError(
            f"conv2d: input channels {x.data.shape[1]} != kernel channels {w.data.shape[1]}"
        )
    if b.data.shape != (w.data.shape[0],):
        raise DimensionError(f"conv2d: bias shape {b.data.shape} != ({w.data.shape[0]},)")
    _check_same_dtype(x, w, "conv2d")
    _check_same_dtype(x, b, "conv2d")

    out_data = kernels.conv2d_forward(x.data, w.data, b.data)
    if not np.isfinite(out_data).all():
        raise NumericError("conv2d produced non-finite values")

    def _bwd(g):
        if x.requires_grad:
            x._accum(kernels.conv2d_grad_input(g, w.data))
        if w.requires_grad:
            w._accum(kernels.conv2d_grad_weight(g, x.data))
        if b.requires_grad:
            b._accum(g.sum(axis=(0, 2, 3)))

    return _node(out_data, (x, w, b), "conv2d", _bwd)


def dense(x: Tensor, w: Tensor, b: Tensor):
    """Affine map: x [N, Din] @ w [Dout, Din]^T + b [Dout]."""
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise DimensionError(f"dense: expected 2-d input/weight, got {x.data.shape} / {w.data.shape}")
    if x.data.shape[1] != w.data.shape[1]:
        raise DimensionError(f"dense: input dim {x.data.shape[1]} != weight dim {w.data.shape[1]}")
    if b.data.shape != (w.data.shape[0],):
        raise DimensionError(f"dense: bias shape {b.data.shape} != ({w.data.shape[0]},)")
    _check_same_dtype(x, w, "dense")

    out_data = x.data @ w.data.T + b.data

    def _bwd(g):
        if x.requires_grad:
            x._accum(g @ w.data)
        if w.requires_grad:
            w._accum(g.T @ x.data)
        if b.requires_grad:
            b._accum(g.sum(axis=0))

    return _node(out_data, (x, w, b), "dense", _bwd)


def channel_scale(x: Tensor, s: Tensor):
    """Multiply every spatial location of channel c by s[c]."""
    if x.data.ndim != 4:
        raise DimensionError(f"channel_scale: expected [N,C,H,W] input, got {x.data.shape}")
    if s.data.shape != (x.data.shape[1],):
        raise DimensionError(
            f"channel_scale: scale shape {s.data.shape} != ({x.data.shape[1]},)"
        )
    _check_same_dtype(x, s, "channel_scale")

    out_data = x.data * s.data[None, :, None, None]

    def _bwd(g):
        if x.requires_grad:
            x._accum(g * s.data[None, :, None, None])
        if s.requires_grad:
            s._accum((g * x.data).sum(axis=(0, 2, 3)))

    return _node(out_data, (x, s), "channel_scale", _bwd)


# ---------------------------------------------------------------------------
# reductions and views
# ---------------------------------------------------------------------------


def tsum(a: Tensor):
    out_data = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def _bwd(g):
        if a.requires_grad:
            a._accum(np.full(a.data.shape, g, dtype=a.data.dtype))

    return _node(out_data, (a,), "sum", _bwd)


def tmean(a: Tensor):
    n = a.data.size
    out_data = np.asarray(a.data.mean(), dtype=a.data.dtype)

    def _bwd(g):
        if a.requires_grad:
            a._accum(np.full(a.data.shape, g / n, dtype=a.data.dtype))

    return _node(out_data, (a,), "mean", _bwd)


def reshape(a: Tensor, shape):
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != a.data.size:
        raise DimensionError(f"reshape: cannot view {a.data.shape} as {shape}")
    out_data = a.data.reshape(shape)

    def _bwd(g):
        if a.requires_grad:
            a._accum(g.reshape(a.data.shape))

    return _node(out_data, (a,), "reshape", _bwd)


def narrow(a: Tensor, axis: int, start: int, length: int):
    """Contiguous slice along one axis (backward scatters into zeros)."""
    if not (0 <= start and start + length <= a.data.shape[axis]):
        raise DimensionError(
            f"narrow: [{start}:{start + length}] out of range for axis {axis} of {a.data.shape}"
        )
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out_data = a.data[idx].copy()

    def _bwd(g):
        if a.requires_grad:
            buf = np.zeros(a.data.shape, dtype=a.data.dtype)
            buf[idx] = g
            a._accum(buf)

    return _node(out_data, (a,), "narrow", _bwd)


# ---------------------------------------------------------------------------
# custom nodes
# ---------------------------------------------------------------------------


def custom_op(inputs, forward, backward, name="custom"):
    """Register a user-defined differentiable node.

    ``forward(*input_arrays) -> array`` runs immediately. ``backward(grad_out)
    -> sequence`` must return one gradient array (or None) per input; it may
    close over whatever state the forward saved.
    """
    inputs = tuple(inputs)
    out_data = forward(*(t.data for t in inputs))

    def _bwd(g):
        grads = backward(g)
        if len(grads) != len(inputs):
            raise ContractError(
                f"custom node '{name}': backward returned {len(grads)} grads for {len(inputs)} inputs"
            )
        for t, gi in zip(inputs, grads):
            if t.requires_grad and gi is not None:
                if np.shape(gi) != t.data.shape:
                    raise ContractError(
                        f"custom node '{name}': grad shape {np.shape(gi)} != input shape {t.data.shape}"
                    )
                t._accum(gi)

    return _node(out_data, inputs, name, _bwd)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor):
    """Populate ``.grad`` of every reachable tensor with d(loss)/d(tensor).

    Gradients accumulate additively across calls until zeroed.
    """
    if loss.data.shape != ():
        raise ContractError(f"backward requires a 0-dim scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return

    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss._accum(np.asarray(1.0, dtype=loss.data.dtype))
    for node in reversed(topo):
        if node._backward_fn is not None:
            node._backward_fn(node.grad)
