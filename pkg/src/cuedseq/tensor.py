"""Dense float64 tensors with tape-based reverse-mode differentiation.

All model math in this package runs through the primitives defined here.
Forward computation happens eagerly on the numpy arrays held by
:class:`Tensor`. When a :class:`Tape` is active (entered as a context
manager) and at least one input of an operation requires gradients, the
operation appends a record to the tape; :func:`backward` replays the
records in reverse execution order, which is a valid reverse-topological
order by construction, and accumulates gradients into ``Tensor.grad``.

Conventions:

* everything is double precision,
* ``relu`` has subgradient 0 at 0,
* binary elementwise primitives allow numpy broadcasting internally
  (gradients are summed back to the operand shapes); the public
  :func:`elementwise` dispatcher enforces equal shapes for binary ops,
* a tape can be consumed by :func:`backward` exactly once.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "tensor_from",
    "backward",
    "zero_grads",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "relu",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "sqrt",
    "matmul",
    "bmm",
    "permute",
    "transpose2d",
    "reshape",
    "concat",
    "slice_axis",
    "tsum",
    "tmean",
    "softmax_rows",
    "log_softmax_rows",
    "logaddexp",
    "gather_cols",
    "conv2d",
    "cross_entropy",
    "linear",
    "elementwise",
]

# Stand-in for log(0) that keeps every array finite. exp(NEG_INF - finite)
# underflows to exactly 0.0 in float64, so masked terms drop out of
# log-sum-exp computations without producing NaN in forward or backward.
NEG_INF = -1e30


class Tensor:
    """A dense float64 array, optionally participating in gradient taping."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(()))

    def copy(self) -> "Tensor":
        t = Tensor(self.data.copy(), self.requires_grad)
        if self.grad is not None:
            t.grad = self.grad.copy()
        return t

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the free functions do the real work
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor_from(data: Sequence[float], shape: Sequence[int]) -> Tensor:
    """Build a tensor from a flat row-major array and an explicit shape."""
    flat = np.asarray(data, dtype=np.float64).ravel()
    shape = tuple(int(d) for d in shape)
    if any(d <= 0 for d in shape):
        raise ValueError(f"shape entries must be positive, got {shape}")
    n = int(np.prod(shape)) if shape else 1
    if flat.size != n:
        raise ValueError(f"shape {shape} needs {n} values, got {flat.size}")
    t = Tensor(flat.reshape(shape))
    return t


class Tape:
    """Ordered record of executed operations, consumed by one backward pass."""

    _stack: list["Tape"] = []

    def __init__(self):
        # each record: (op name, output, inputs tuple, backward closure)
        self.records: list[tuple[str, Tensor, tuple[Tensor, ...], Callable]] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        Tape._stack.pop()
        return False

    @staticmethod
    def active() -> "Tape | None":
        return Tape._stack[-1] if Tape._stack else None


def _emit(op: str, out_data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(out_data)
    out.requires_grad = any(t.requires_grad for t in inputs)
    if out.requires_grad:
        tape = Tape.active()
        if tape is not None:
            tape.records.append((op, out, inputs, backward_fn))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Reverse-accumulate d(loss)/d(tensor) into ``.grad`` of participants.

    The loss must be a scalar. Every tensor with ``requires_grad`` that was
    used by an operation on the tape ends up with a gradient array (zeros if
    the loss does not depend on it). The tape is marked consumed; a second
    call raises ``RuntimeError`` instead of silently accumulating.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise RuntimeError("tape already consumed by a previous backward pass")
    tape.consumed = True

    loss.grad = np.ones_like(loss.data)
    for _, out, inputs, backward_fn in reversed(tape.records):
        g = out.grad
        if g is None:
            continue
        grads = backward_fn(g)
        for t, gt in zip(inputs, grads):
            if gt is None or not t.requires_grad:
                continue
            t.grad = gt if t.grad is None else t.grad + gt
    for _, _, inputs, _ in tape.records:
        for t in inputs:
            if t.requires_grad and t.grad is None:
                t.grad = np.zeros_like(t.data)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    return _emit("add", out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    return _emit("sub", out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    return _emit(
        "mul",
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data
    return _emit(
        "div",
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit("scale", a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # subgradient at 0 is 0
    return _emit("relu", a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _emit("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _emit("tanh", t, (a,), lambda g: (g * (1.0 - t * t),))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return _emit("exp", e, (a,), lambda g: (g * e,))


def log(a: Tensor) -> Tensor:
    return _emit("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    r = np.sqrt(a.data)
    return _emit("sqrt", r, (a,), lambda g: (g * 0.5 / r,))


def logaddexp(a: Tensor, b: Tensor) -> Tensor:
    out = np.logaddexp(a.data, b.data)

    def back(g):
        ga = g * np.exp(a.data - out)
        gb = g * np.exp(b.data - out)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit("logaddexp", out, (a, b), back)


# ---------------------------------------------------------------------------
# shape / linear algebra primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")
    out = a.data @ b.data

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return _emit("matmul", out, (a, b), back)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product of [B,m,k] and [B,k,n]."""
    if a.ndim != 3 or b.ndim != 3:
        raise ValueError(f"bmm expects 3-d operands, got {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ValueError(f"bmm shapes incompatible: {a.shape} vs {b.shape}")
    out = np.matmul(a.data, b.data)

    def back(g):
        return np.matmul(g, b.data.swapaxes(1, 2)), np.matmul(a.data.swapaxes(1, 2), g)

    return _emit("bmm", out, (a, b), back)


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _emit("permute", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def transpose2d(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ValueError(f"transpose2d expects a matrix, got {a.shape}")
    return permute(a, (1, 0))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(d) for d in shape)
    old = a.shape
    return _emit("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat of zero tensors")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit("concat", out, tuple(tensors), back)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = a.data[idx]

    def back(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _emit("slice", out, (a,), back)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            ax = axis if isinstance(axis, tuple) else (axis,)
            ax = tuple(x % a.ndim for x in ax)
            gshape = [1 if i in ax else s for i, s in enumerate(a.shape)]
            g = g.reshape(gshape)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit("sum", out, (a,), back)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[x % a.ndim] for x in ax]))
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# softmax family


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax along the last axis, with per-row max subtraction."""
    m = x.data.max(axis=-1, keepdims=True)
    e = np.exp(x.data - m)
    s = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    return _emit("softmax", s, (x,), back)


def log_softmax_rows(x: Tensor) -> Tensor:
    m = x.data.max(axis=-1, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse

    def back(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _emit("log_softmax", out, (x,), back)


def gather_cols(x: Tensor, idx: Sequence[int]) -> Tensor:
    """Select columns of a matrix: x[:, idx] with scatter-add backward."""
    if x.ndim != 2:
        raise ValueError(f"gather_cols expects a matrix, got {x.shape}")
    cols = np.asarray(idx, dtype=np.intp)
    out = x.data[:, cols]
    m = x.shape[0]

    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (np.arange(m)[:, None], cols[None, :]), g)
        return (full,)

    return _emit("gather_cols", out, (x,), back)


# ---------------------------------------------------------------------------
# convolution


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # [B,C,H',W',kh,kw]
    b, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * kh * kw, ho * wo)
    return np.ascontiguousarray(cols)


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation over [Cin,H,W] or batched [B,Cin,H,W] input."""
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be non-negative, got {padding}")
    if kernels.ndim != 4:
        raise ValueError(f"kernels must be [Cout,Cin,kh,kw], got {kernels.shape}")
    squeeze = x.ndim == 3
    if squeeze:
        x3 = reshape(x, (1,) + x.shape)
        out = conv2d(x3, kernels, stride, padding)
        return reshape(out, out.shape[1:])
    if x.ndim != 4:
        raise ValueError(f"input must be [Cin,H,W] or [B,Cin,H,W], got {x.shape}")
    b, cin, h, w = x.shape
    cout, kcin, kh, kw = kernels.shape
    if kcin != cin:
        raise ValueError(f"kernel expects {kcin} input channels, input has {cin}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(xp, kh, kw, stride)  # [B, Cin*kh*kw, ho*wo]
    kmat = kernels.data.reshape(cout, cin * kh * kw)
    out = np.matmul(kmat[None], cols).reshape(b, cout, ho, wo)

    def back(g):
        gr = g.reshape(b, cout, ho * wo)
        dk = np.matmul(gr, cols.transpose(0, 2, 1)).sum(axis=0).reshape(kernels.shape)
        dcols = np.matmul(kmat.T[None], gr)  # [B, Cin*kh*kw, ho*wo]
        d6 = dcols.reshape(b, cin, kh, kw, ho, wo)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += d6[:, :, i, j]
        if padding:
            dx = dxp[:, :, padding:-padding, padding:-padding]
        else:
            dx = dxp
        return dx, dk

    return _emit("conv2d", out, (x, kernels), back)


# ---------------------------------------------------------------------------
# losses and layers


def cross_entropy(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean negative log softmax probability of the target classes."""
    if logits.ndim != 2:
        raise ValueError(f"logits must be [m,K], got {logits.shape}")
    tgt = np.asarray(targets, dtype=np.intp)
    m, k = logits.shape
    if tgt.shape != (m,):
        raise ValueError(f"expected {m} targets, got shape {tgt.shape}")
    if tgt.min(initial=0) < 0 or tgt.max(initial=0) >= k:
        raise ValueError(f"target out of range [0,{k})")
    mx = logits.data.max(axis=1, keepdims=True)
    shifted = logits.data - mx
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    loss = -logp[np.arange(m), tgt].mean()

    def back(g):
        p = np.exp(logp)
        p[np.arange(m), tgt] -= 1.0
        return (g * p / m,)

    return _emit("cross_entropy", np.asarray(loss), (logits,), back)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Row-vector affine map: x @ w (+ b broadcast over rows)."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


_UNARY = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}
_BINARY = {"add": add, "mul": mul}


def elementwise(op_kind: str, *args):
    """Dispatch on the op kind; binary ops require exactly equal shapes."""
    if op_kind in _BINARY:
        a, b = args
        if a.shape != b.shape:
            raise ValueError(f"{op_kind} operands must share a shape: {a.shape} vs {b.shape}")
        return _BINARY[op_kind](a, b)
    if op_kind in _UNARY:
        (a,) = args
        return _UNARY[op_kind](a)
    if op_kind == "scale":
        a, c = args
        return scale(a, c)
    raise ValueError(f"unknown elementwise op kind: {op_kind!r}")
