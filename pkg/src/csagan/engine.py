"""Minimal reverse-mode tensor engine.

Tensors wrap numpy arrays and record the forward graph so that a single
backward() call accumulates gradients into every reachable leaf.  Precision
is a process-global setting (f32 for training speed, f64 for gradient and
oracle checks) fixed before building any graph.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EngineError",
    "Tensor",
    "set_precision",
    "get_precision",
    "current_dtype",
    "tensor",
    "parameter",
    "backward",
    "add", "sub", "neg", "mul", "reciprocal", "div",
    "log", "absolute", "clamp_floor",
    "relu", "leaky_relu", "sigmoid", "tanh",
    "mean", "total", "mean_last_axes",
    "matmul", "transpose_last", "reshape", "concat",
    "softmax_rows", "conv2d", "upsample_nearest", "avg_pool",
    "SpectralState", "init_spectral_state", "spectral_normalize", "sigma_estimate",
    "AdamState", "adam_step", "Adam",
]

_DTYPES = {"f32": np.float32, "f64": np.float64}
_precision = os.environ.get("CSAGAN_PRECISION", "f32")
if _precision not in _DTYPES:
    _precision = "f32"


class EngineError(ValueError):
    pass


def set_precision(name: str) -> None:
    if name not in _DTYPES:
        raise EngineError(f"unknown precision {name!r}, expected one of {sorted(_DTYPES)}")
    global _precision
    _precision = name


def get_precision() -> str:
    return _precision


def current_dtype():
    return _DTYPES[_precision]


class Tensor:
    """A numpy array plus optional gradient and graph record."""

    __slots__ = ("data", "grad", "op", "_parents", "_backward", "param", "name")

    def __init__(self, data, parents=(), backward=None, op=None, param=False, name=None):
        self.data = np.asarray(data, dtype=current_dtype())
        self.grad = None
        self.op = op
        self._parents = tuple(parents)
        self._backward = backward
        self.param = param
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        tag = f" op={self.op}" if self.op else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # convenience arithmetic (same-shape or broadcastable operands)
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)


def tensor(data) -> Tensor:
    return Tensor(data)


def parameter(data, name=None) -> Tensor:
    return Tensor(data, param=True, name=name)


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x))


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a gradient back to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor) -> None:
    """Reverse-mode accumulation from a recorded scalar."""
    if loss.op is None:
        raise EngineError("backward() called on a tensor with no graph record")
    if loss.data.size != 1:
        raise EngineError(f"backward() expects a scalar, got shape {loss.data.shape}")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise ops

def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, (a, b), op="add")

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    out._backward = bw
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data, (a,), op="neg")
    out._backward = lambda g: _accum(a, -g)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, neg(b))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, (a, b), op="mul")

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    out._backward = bw
    return out


def reciprocal(a: Tensor) -> Tensor:
    out = Tensor(1.0 / a.data, (a,), op="reciprocal")
    out._backward = lambda g: _accum(a, -g * out.data * out.data)
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    return mul(a, reciprocal(b))


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data), (a,), op="log")
    out._backward = lambda g: _accum(a, g / a.data)
    return out


def absolute(a: Tensor) -> Tensor:
    out = Tensor(np.abs(a.data), (a,), op="abs")
    out._backward = lambda g: _accum(a, g * np.sign(a.data))
    return out


def clamp_floor(a: Tensor, floor: float) -> Tensor:
    out = Tensor(np.maximum(a.data, floor), (a,), op="clamp_floor")
    mask = a.data > floor
    out._backward = lambda g: _accum(a, g * mask)
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), (a,), op="relu")
    mask = a.data > 0
    out._backward = lambda g: _accum(a, g * mask)
    return out


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    out = Tensor(np.where(a.data > 0, a.data, slope * a.data), (a,), op="leaky_relu")
    scale = np.where(a.data > 0, 1.0, slope).astype(a.data.dtype)
    out._backward = lambda g: _accum(a, g * scale)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-a.data)),
                 np.exp(a.data) / (1.0 + np.exp(a.data)))
    out = Tensor(y, (a,), op="sigmoid")
    out._backward = lambda g: _accum(a, g * out.data * (1.0 - out.data))
    return out


def tanh(a: Tensor) -> Tensor:
    out = Tensor(np.tanh(a.data), (a,), op="tanh")
    out._backward = lambda g: _accum(a, g * (1.0 - out.data * out.data))
    return out


# ---------------------------------------------------------------------------
# reductions

def mean(a: Tensor) -> Tensor:
    out = Tensor(a.data.mean(), (a,), op="mean")
    inv = 1.0 / a.data.size
    out._backward = lambda g: _accum(a, np.full_like(a.data, g * inv))
    return out


def total(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum(), (a,), op="sum")
    out._backward = lambda g: _accum(a, np.full_like(a.data, g))
    return out


def mean_last_axes(a: Tensor, n_axes: int) -> Tensor:
    """Mean over the trailing n_axes axes, keeping the leading ones."""
    axes = tuple(range(a.ndim - n_axes, a.ndim))
    out = Tensor(a.data.mean(axis=axes), (a,), op="mean_last_axes")
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]
    inv = 1.0 / count

    def bw(g):
        _accum(a, np.broadcast_to((g * inv).reshape(g.shape + (1,) * n_axes), a.data.shape).copy())

    out._backward = bw
    return out


# ---------------------------------------------------------------------------
# shape / linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise EngineError("matmul: both operands must be at least 2-D")
    out = Tensor(np.matmul(a.data, b.data), (a, b), op="matmul")

    def bw(g):
        ga = np.matmul(g, b.data.swapaxes(-1, -2))
        gb = np.matmul(a.data.swapaxes(-1, -2), g)
        _accum(a, _unbroadcast(ga, a.data.shape))
        _accum(b, _unbroadcast(gb, b.data.shape))

    out._backward = bw
    return out


def transpose_last(a: Tensor) -> Tensor:
    out = Tensor(a.data.swapaxes(-1, -2), (a,), op="transpose")
    out._backward = lambda g: _accum(a, g.swapaxes(-1, -2))
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), (a,), op="reshape")
    out._backward = lambda g: _accum(a, g.reshape(a.data.shape))
    return out


def concat(parts, axis: int) -> Tensor:
    parts = list(parts)
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), op="concat")
    sizes = [p.data.shape[axis] for p in parts]

    def bw(g):
        start = 0
        for p, n in zip(parts, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + n)
            _accum(p, g[tuple(sl)])
            start += n

    out._backward = bw
    return out


def softmax_rows(scores: Tensor) -> Tensor:
    """Row-stochastic softmax over the last axis, stabilized by row-max shift."""
    if np.isnan(scores.data).any():
        raise EngineError("softmax_rows: NaN in input")
    shifted = scores.data - scores.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y, (scores,), op="softmax_rows")

    def bw(g):
        dot = (g * out.data).sum(axis=-1, keepdims=True)
        _accum(scores, (g - dot) * out.data)

    out._backward = bw
    return out


# ---------------------------------------------------------------------------
# spatial ops: inputs are [C,H,W] or [B,C,H,W]

def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation via im2col.  kernel is [C_out, C_in, k, k]."""
    if kernel.ndim != 4:
        raise EngineError(f"conv2d: kernel must be 4-D, got shape {kernel.shape}")
    c_out, c_in, kh, kw = kernel.shape
    if kh != kw:
        raise EngineError("conv2d: only square kernels are supported")
    k = kh
    if k < 1 or stride < 1 or pad < 0:
        raise EngineError("conv2d: need k >= 1, stride >= 1, pad >= 0")
    if x.ndim not in (3, 4):
        raise EngineError(f"conv2d: input must be [C,H,W] or [B,C,H,W], got shape {x.shape}")
    if x.shape[-3] != c_in:
        raise EngineError(f"conv2d: input has {x.shape[-3]} channels, kernel expects {c_in}")
    h, w = x.shape[-2], x.shape[-1]
    if h + 2 * pad < k or w + 2 * pad < k:
        raise EngineError("conv2d: padded input smaller than kernel")

    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    lead = x.shape[:-3]

    pads = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    xp = np.pad(x.data, pads)
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(-2, -1))
    win = win[..., ::stride, ::stride, :, :]           # [..., C, Ho, Wo, k, k]
    cols = np.moveaxis(win, (-2, -1), (-4, -3))        # [..., C, k, k, Ho, Wo]
    cols = cols.reshape(lead + (c_in * k * k, ho * wo))
    w2 = kernel.data.reshape(c_out, c_in * k * k)
    out_flat = np.matmul(w2, cols)
    out = Tensor(out_flat.reshape(lead + (c_out, ho, wo)), (x, kernel), op="conv2d")

    hp, wp = h + 2 * pad, w + 2 * pad

    def bw(g):
        gf = g.reshape(lead + (c_out, ho * wo))
        gw2 = np.matmul(gf, cols.swapaxes(-1, -2))
        if gw2.ndim > 2:
            gw2 = gw2.sum(axis=tuple(range(gw2.ndim - 2)))
        _accum(kernel, gw2.reshape(kernel.data.shape))

        gcols = np.matmul(w2.T, gf).reshape(lead + (c_in, k, k, ho, wo))
        gxp = np.zeros(lead + (c_in, hp, wp), dtype=x.data.dtype)
        for i in range(k):
            for j in range(k):
                gxp[..., :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[..., :, i, j, :, :]
        if pad:
            gxp = gxp[..., :, pad:hp - pad, pad:wp - pad]
        _accum(x, gxp)

    out._backward = bw
    return out


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise EngineError("upsample_nearest: factor must be >= 1")
    y = np.repeat(np.repeat(x.data, factor, axis=-2), factor, axis=-1)
    out = Tensor(y, (x,), op="upsample_nearest")
    h, w = x.shape[-2], x.shape[-1]

    def bw(g):
        g = g.reshape(g.shape[:-2] + (h, factor, w, factor))
        _accum(x, g.sum(axis=(-3, -1)))

    out._backward = bw
    return out


def avg_pool(x: Tensor, factor: int) -> Tensor:
    h, w = x.shape[-2], x.shape[-1]
    if factor < 1 or h % factor or w % factor:
        raise EngineError(f"avg_pool: factor {factor} must divide extents {h}x{w}")
    r = x.data.reshape(x.shape[:-2] + (h // factor, factor, w // factor, factor))
    out = Tensor(r.mean(axis=(-3, -1)), (x,), op="avg_pool")
    inv = 1.0 / (factor * factor)

    def bw(g):
        g = np.repeat(np.repeat(g, factor, axis=-2), factor, axis=-1)
        _accum(x, g * inv)

    out._backward = bw
    return out


# ---------------------------------------------------------------------------
# spectral normalization

_SIGMA_FLOOR = 1e-12


@dataclass
class SpectralState:
    """Power-iteration left singular vector for one weight matrix."""
    u: np.ndarray
    n_power_iterations: int = 1


def _l2normalize(v: np.ndarray) -> np.ndarray:
    return v / max(float(np.linalg.norm(v)), _SIGMA_FLOOR)


def init_spectral_state(rows: int, rng: np.random.Generator, warmup_matrix: np.ndarray | None = None,
                        warmup_iterations: int = 5) -> SpectralState:
    state = SpectralState(u=_l2normalize(rng.standard_normal(rows)))
    if warmup_matrix is not None:
        for _ in range(warmup_iterations):
            v = _l2normalize(warmup_matrix.T @ state.u)
            state.u = _l2normalize(warmup_matrix @ v)
    return state


def spectral_normalize(w: Tensor, state: SpectralState, update: bool = True):
    """Divide a weight matrix by the power-iteration estimate of its top
    singular value.  Returns (w_sn, state); u is advanced only when update
    is true, so evaluation passes are repeatable."""
    if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
        raise EngineError(f"spectral_normalize: expected a matrix, got shape {w.shape}")
    wd = w.data
    u = state.u
    if update:
        for _ in range(state.n_power_iterations):
            v = _l2normalize(wd.T @ u)
            u = _l2normalize(wd @ v)
        state.u = u
        v = _l2normalize(wd.T @ u)
    else:
        v = _l2normalize(wd.T @ u)
    # sigma enters the graph as u^T W v with u, v held constant
    ut = Tensor(u.reshape(1, -1))
    vt = Tensor(v.reshape(-1, 1))
    sigma = clamp_floor(reshape(matmul(matmul(ut, w), vt), ()), _SIGMA_FLOOR)
    w_sn = mul(w, reciprocal(sigma))
    return w_sn, state


def sigma_estimate(w: np.ndarray, state: SpectralState) -> float:
    v = _l2normalize(w.T @ state.u)
    return float(state.u @ (w @ v))


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8


def adam_state_for(param: np.ndarray, beta1: float = 0.5, beta2: float = 0.999) -> AdamState:
    return AdamState(m=np.zeros_like(param), v=np.zeros_like(param), beta1=beta1, beta2=beta2)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float):
    """Bias-corrected Adam update.  Rejects NaN gradients with state intact."""
    if param.shape != grad.shape:
        raise EngineError(f"adam_step: shape mismatch {param.shape} vs {grad.shape}")
    if lr <= 0:
        raise EngineError("adam_step: lr must be positive")
    if np.isnan(grad).any():
        raise EngineError("adam_step: NaN gradient")
    state.t += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = state.m / (1 - state.beta1 ** state.t)
    v_hat = state.v / (1 - state.beta2 ** state.t)
    return param - lr * m_hat / (np.sqrt(v_hat) + state.eps), state


class Adam:
    """Adam over a named set of parameter tensors."""

    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float = 0.5, beta2: float = 0.999):
        self.params = dict(params)
        self.lr = lr
        self.states = {name: adam_state_for(p.data, beta1, beta2) for name, p in self.params.items()}

    def step(self) -> None:
        for name, p in self.params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            p.data, self.states[name] = adam_step(p.data, grad, self.states[name], self.lr)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
