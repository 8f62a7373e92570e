"""Dense tensors with reverse-mode automatic differentiation.

Just enough machinery for the representation and prediction networks:
row-major numpy storage, a handful of primitives that record themselves
onto the computation graph, topological-order backprop, Adam, and a
finite-difference gradient checker. No broadcasting beyond bias-add.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import MissingGrad, NonScalarLoss, ShapeMismatch

CHECKPOINT_VERSION = 1

BCE_CLAMP = 1e-7


class Tensor:
    """N-d value with an optional gradient slot.

    Tensors produced by primitives keep references to their inputs and a
    closure that pushes gradients backwards; ``backward`` replays those
    closures in reverse topological order.
    """

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            # adopt fresh arrays; views must be copied so later accumulation
            # into self.grad cannot write through to someone else's buffer
            self.grad = g.copy() if (g.base is not None or not g.flags.owndata) else g
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


@dataclass
class ComputationTape:
    """Tensors of one computation in topological order (inputs first)."""

    nodes: list[Tensor] = field(default_factory=list)


def trace(output: Tensor) -> ComputationTape:
    """Collect the graph below ``output`` in topological order, iteratively."""
    tape = ComputationTape()
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            tape.nodes.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return tape


def backward(loss: Tensor) -> None:
    """Populate grads of every tensor the scalar ``loss`` depends on."""
    if loss.values.size != 1:
        raise NonScalarLoss(f"loss has shape {loss.shape}, expected a scalar")
    tape = trace(loss)
    loss.grad = np.ones_like(loss.values)
    for node in reversed(tape.nodes):
        if node._backward is not None and node.grad is not None:
            node._backward()


def _make(values: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(values, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._backward = backward_fn(out)
    return out


def _as_values(x) -> np.ndarray:
    return x.values if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


# --- elementwise and structural primitives -----------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}")
    def bw(out):
        def fn():
            if a.requires_grad:
                a._accumulate(out.grad)
            if b.requires_grad:
                g = out.grad
                if a.requires_grad and b is not a:
                    g = g.copy()  # a may have adopted out.grad as its own buffer
                b._accumulate(g)
        return fn
    return _make(a.values + b.values, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}")
    def bw(out):
        def fn():
            if a.requires_grad:
                a._accumulate(out.grad * b.values)
            if b.requires_grad:
                b._accumulate(out.grad * a.values)
        return fn
    return _make(a.values * b.values, (a, b), bw)


def scale(x: Tensor, c: float) -> Tensor:
    def bw(out):
        def fn():
            if x.requires_grad:
                x._accumulate(out.grad * c)
        return fn
    return _make(x.values * c, (x,), bw)


def tensor_sum(x: Tensor) -> Tensor:
    def bw(out):
        def fn():
            if x.requires_grad:
                x._accumulate(np.full_like(x.values, out.grad.item()))
        return fn
    return _make(np.asarray(x.values.sum()), (x,), bw)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    def bw(out):
        def fn():
            if x.requires_grad:
                x._accumulate(out.grad.reshape(x.shape))
        return fn
    return _make(x.values.reshape(shape), (x,), bw)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    sizes = [t.values.shape[axis] for t in xs]
    def bw(out):
        def fn():
            offset = 0
            for t, size in zip(xs, sizes):
                if t.requires_grad:
                    index = [slice(None)] * out.grad.ndim
                    index[axis] = slice(offset, offset + size)
                    t._accumulate(out.grad[tuple(index)])
                offset += size
        return fn
    return _make(np.concatenate([t.values for t in xs], axis=axis), tuple(xs), bw)


def transpose_last2(x: Tensor) -> Tensor:
    def bw(out):
        def fn():
            if x.requires_grad:
                x._accumulate(np.swapaxes(out.grad, -1, -2))
        return fn
    return _make(np.swapaxes(x.values, -1, -2), (x,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(..., i, j) @ (..., j, k) with identical leading dims."""
    if a.values.shape[-1] != b.values.shape[-2] or a.values.shape[:-2] != b.values.shape[:-2]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    av, bv = a.values, b.values
    def bw(out):
        def fn():
            g = out.grad
            if a.requires_grad:
                a._accumulate(g @ np.swapaxes(bv, -1, -2))
            if b.requires_grad:
                b._accumulate(np.swapaxes(av, -1, -2) @ g)
        return fn
    return _make(av @ bv, (a, b), bw)


# --- activations --------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0
    def bw(out):
        def fn():
            if x.requires_grad:
                x._accumulate(out.grad * mask)
        return fn
    return _make(np.where(mask, x.values, 0.0), (x,), bw)


def sigmoid(x: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-x.values))
    def bw(out):
        def fn():
            if x.requires_grad:
                x._accumulate(out.grad * out.values * (1.0 - out.values))
        return fn
    return _make(y, (x,), bw)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.values)
    def bw(out):
        def fn():
            if x.requires_grad:
                x._accumulate(out.grad * (1.0 - out.values**2))
        return fn
    return _make(y, (x,), bw)


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis, shift-invariant by construction."""
    shifted = x.values - x.values.max(axis=-1, keepdims=True)
    y = np.exp(shifted, out=shifted)
    y /= y.sum(axis=-1, keepdims=True)
    def bw(out):
        def fn():
            if x.requires_grad:
                buf = out.grad * out.values
                buf -= out.values * buf.sum(axis=-1, keepdims=True)
                x._accumulate(buf)
        return fn
    return _make(y, (x,), bw)


def dropout(x: Tensor, rate: float, training: bool, rng=None) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-rate) at train time.

    ``rng`` may be a numpy Generator or an int seed; it is required only
    when a mask is actually drawn.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout needs an rng (or seed) when training with rate > 0")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    keep = rng.random(x.values.shape) >= rate
    factor = keep / (1.0 - rate)
    def bw(out):
        def fn():
            if x.requires_grad:
                x._accumulate(out.grad * factor)
        return fn
    return _make(x.values * factor, (x,), bw)


# --- layers -------------------------------------------------------------------


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b; accepts a single row (1-d x) or a batch (2-d x)."""
    single = x.values.ndim == 1
    xv = x.values[None, :] if single else x.values
    if xv.ndim != 2 or w.values.ndim != 2 or xv.shape[1] != w.values.shape[0]:
        raise ShapeMismatch(f"dense: x {x.shape} @ w {w.shape}")
    if b.values.shape != (w.values.shape[1],):
        raise ShapeMismatch(f"dense: bias {b.shape} vs output dim {w.values.shape[1]}")
    y = xv @ w.values + b.values
    def bw(out):
        def fn():
            g = out.grad[None, :] if single else out.grad
            if x.requires_grad:
                gx = g @ w.values.T
                x._accumulate(gx[0] if single else gx)
            if w.requires_grad:
                w._accumulate(xv.T @ g)
            if b.requires_grad:
                b._accumulate(g.sum(axis=0))
        return fn
    return _make(y[0] if single else y, (x, w, b), bw)


def _lift_to_3d(v: np.ndarray) -> tuple[np.ndarray, int]:
    """Return a (batch, channels, length) view and how many axes were added."""
    if v.ndim == 1:
        return v[None, None, :], 2
    if v.ndim == 2:
        return v[None, :, :], 1
    if v.ndim == 3:
        return v, 0
    raise ShapeMismatch(f"expected <=3 dims, got shape {v.shape}")


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """1-d convolution, zero-padded so stride-1 output keeps the input length.

    ``x`` is (batch, in_ch, L) (lower ranks are lifted), ``kernel`` is
    (out_ch, in_ch, k) with odd k.
    """
    xv, lifted = _lift_to_3d(x.values)
    kv = kernel.values
    if kv.ndim != 3 or kv.shape[1] != xv.shape[1]:
        raise ShapeMismatch(f"conv1d: input {x.shape} vs kernel {kernel.shape}")
    k = kv.shape[2]
    if k % 2 == 0:
        raise ShapeMismatch(f"conv1d kernel size must be odd, got {k}")
    pad = (k - 1) // 2
    n, in_ch, length = xv.shape
    out_ch = kv.shape[0]
    xp = np.pad(xv, ((0, 0), (0, 0), (pad, pad)))
    out_len = (length + 2 * pad - k) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    windows = windows[:, :, :out_len, :]
    # im2col: one big GEMM instead of an einsum loop
    cols = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(n * out_len, in_ch * k)
    kmat = kv.reshape(out_ch, in_ch * k)
    y = (cols @ kmat.T).reshape(n, out_len, out_ch).transpose(0, 2, 1)
    if bias is not None:
        if bias.values.shape != (out_ch,):
            raise ShapeMismatch(f"conv1d: bias {bias.shape} vs out channels {out_ch}")
        y = y + bias.values[None, :, None]
    if lifted:  # unbatched input: output is (out_ch, L')
        y = y[0]
    parents = (x, kernel) if bias is None else (x, kernel, bias)
    def bw(out):
        def fn():
            g = out.grad if not lifted else out.grad[None, ...]
            gmat = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(n * out_len, out_ch)
            if kernel.requires_grad:
                kernel._accumulate((gmat.T @ cols).reshape(out_ch, in_ch, k))
            if bias is not None and bias.requires_grad:
                bias._accumulate(g.sum(axis=(0, 2)))
            if x.requires_grad:
                gcols = (gmat @ kmat).reshape(n, out_len, in_ch, k).transpose(0, 2, 1, 3)
                gxp = np.zeros_like(xp)
                for w in range(k):
                    gxp[:, :, w : w + stride * out_len : stride] += gcols[:, :, :, w]
                x._accumulate(gxp[:, :, pad : pad + length].reshape(x.values.shape))
        return fn
    return _make(np.ascontiguousarray(y), parents, bw)


def maxpool1d(x: Tensor, window: int) -> Tensor:
    """Non-overlapping max pooling along the last axis; remainder dropped."""
    if window < 1:
        raise ShapeMismatch(f"maxpool1d window must be >= 1, got {window}")
    length = x.values.shape[-1]
    out_len = length // window
    if out_len == 0:
        raise ShapeMismatch(f"maxpool1d: window {window} exceeds length {length}")
    lead = x.values.shape[:-1]
    view = x.values[..., : out_len * window].reshape(*lead, out_len, window)
    arg = view.argmax(axis=-1)
    y = np.take_along_axis(view, arg[..., None], axis=-1)[..., 0]
    def bw(out):
        def fn():
            if x.requires_grad:
                gview = np.zeros_like(view)
                np.put_along_axis(gview, arg[..., None], out.grad[..., None], axis=-1)
                g = np.zeros_like(x.values)
                g[..., : out_len * window] = gview.reshape(*lead, out_len * window)
                x._accumulate(g)
        return fn
    return _make(y, (x,), bw)


# --- losses -------------------------------------------------------------------


def bce_loss(p: Tensor, y) -> Tensor:
    """Mean binary cross-entropy; p is clamped away from {0, 1}."""
    yv = _as_values(y)
    if yv.shape != p.values.shape:
        raise ShapeMismatch(f"bce_loss: {p.shape} vs {yv.shape}")
    inside = (p.values > BCE_CLAMP) & (p.values < 1.0 - BCE_CLAMP)
    pc = np.clip(p.values, BCE_CLAMP, 1.0 - BCE_CLAMP)
    n = pc.size
    loss = -(yv * np.log(pc) + (1.0 - yv) * np.log(1.0 - pc)).sum() / n
    def bw(out):
        def fn():
            if p.requires_grad:
                g = (pc - yv) / (pc * (1.0 - pc)) / n
                p._accumulate(out.grad.item() * g * inside)
        return fn
    return _make(np.asarray(loss), (p,), bw)


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error against a constant target."""
    tv = _as_values(target)
    if tv.shape != pred.values.shape:
        raise ShapeMismatch(f"mse_loss: {pred.shape} vs {tv.shape}")
    diff = pred.values - tv
    n = diff.size
    def bw(out):
        def fn():
            if pred.requires_grad:
                pred._accumulate(out.grad.item() * 2.0 * diff / n)
        return fn
    return _make(np.asarray((diff**2).sum() / n), (pred,), bw)


# --- optimizer ----------------------------------------------------------------


@dataclass
class AdamState:
    """Per-parameter first/second moment accumulators plus step counter."""

    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], learning_rate: float = 0.001,
                   beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        state = cls(learning_rate, beta1, beta2, epsilon)
        state.m = [np.zeros_like(p.values) for p in params]
        state.v = [np.zeros_like(p.values) for p in params]
        return state


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update; clears gradients afterwards."""
    if len(state.m) != len(params):
        raise ShapeMismatch(f"AdamState tracks {len(state.m)} params, got {len(params)}")
    for i, p in enumerate(params):
        if p.grad is None:
            raise MissingGrad(f"parameter {i} has no gradient")
        if state.m[i].shape != p.values.shape:
            raise ShapeMismatch(f"AdamState moment {i} shape {state.m[i].shape} vs {p.shape}")
    state.step += 1
    t = state.step
    for i, p in enumerate(params):
        g = p.grad
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / (1.0 - state.beta1**t)
        v_hat = state.v[i] / (1.0 - state.beta2**t)
        p.values -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
        p.grad = None


# --- verification -------------------------------------------------------------


def grad_check(fn: Callable[[Tensor], Tensor], point: Tensor, h: float = 1e-4) -> float:
    """Max relative error between backprop grads and central differences.

    ``fn`` must be scalar-valued and smooth at ``point`` (callers nudge
    away from relu kinks themselves).
    """
    x = Tensor(point.values.copy(), requires_grad=True)
    backward(fn(x))
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.values)
    worst = 0.0
    flat = x.values.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        fp = fn(Tensor(x.values)).values.item()
        flat[idx] = orig - h
        fm = fn(Tensor(x.values)).values.item()
        flat[idx] = orig
        numeric = (fp - fm) / (2.0 * h)
        a = analytic.reshape(-1)[idx]
        err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        worst = max(worst, err)
    return worst


# --- checkpoints --------------------------------------------------------------


def save_checkpoint(params: dict[str, Tensor], path: str | Path) -> None:
    """JSON checkpoint; float64 repr round-trips bit-exactly."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "params": {
            name: {"shape": list(t.values.shape), "values": t.values.reshape(-1).tolist()}
            for name, t in params.items()
        },
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
    return {
        name: np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in payload["params"].items()
    }
