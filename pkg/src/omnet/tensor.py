"""Dense float32 tensors with reverse-mode automatic differentiation.

Tensors are numpy arrays in channel-last layout: a single sample is
``[W, H, L, C]`` and a batch is ``[N, W, H, L, C]``. Every op records a
closure that maps the upstream gradient to gradients for its inputs; the
implicit DAG of these records is traversed in reverse topological order by
:func:`backward`.
"""
from __future__ import annotations

import itertools
import os
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DegenerateGuidanceError, NumericalError, ShapeError

DTYPE = np.float32

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Run ops without recording them (inference, guidance forward passes)."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.ndim > 5:
            raise ShapeError(f"tensor order {arr.ndim} exceeds 5: shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op: str | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self, grad=None) -> None:
        backward(self, grad)

    def __repr__(self) -> str:
        tag = f" op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"{op} produced non-finite values")
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
    return out


def stop_grad(x: Tensor) -> Tensor:
    """Detach: same values, no gradient path back to ``x``."""
    return Tensor(x.data, requires_grad=False)


# --------------------------------------------------------------------------
# graph traversal


@dataclass
class OpRecord:
    op: str
    output: Tensor
    inputs: tuple[Tensor, ...]


def trace(root: Tensor) -> list[OpRecord]:
    """Op records reachable from ``root`` in topological order (inputs first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    on_stack: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if expanded:
            on_stack.discard(key)
            order.append(node)
            continue
        if key in seen:
            if key in on_stack:
                raise RuntimeError("cycle detected in autodiff graph")
            continue
        seen.add(key)
        on_stack.add(key)
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad:
                stack.append((parent, False))
    return [OpRecord(n._op, n, n._parents) for n in order if n._backward is not None]


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Each leaf's ``grad`` is assigned once per call; leaves outside the graph,
    or behind a :func:`stop_grad`, are left untouched.
    """
    if not loss.requires_grad:
        return
    seed = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=DTYPE)
    grads: dict[int, np.ndarray] = {id(loss): seed}
    leaves: dict[int, Tensor] = {}
    records = trace(loss)
    if loss.is_leaf:
        leaves[id(loss)] = loss
    for rec in reversed(records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        in_grads = rec.output._backward(g)
        for parent, pg in zip(rec.inputs, in_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
            if parent.is_leaf:
                leaves[key] = parent
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is not None:
            leaf.grad = np.asarray(g, dtype=DTYPE).reshape(leaf.shape)


# --------------------------------------------------------------------------
# elementwise


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(out, (a, b), bw, "add")


def residual_add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"residual_add shape mismatch: {a.shape} vs {b.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "residual_add")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(out, (a, b), bw, "mul")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    out = (1.0 / (1.0 + np.exp(-x.data.astype(np.float64)))).astype(DTYPE)
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(dtype=np.float64), dtype=DTYPE)
    return _result(out, (x,), lambda g: (np.broadcast_to(g, x.shape).astype(DTYPE),), "sum")


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    out = np.asarray(x.data.mean(dtype=np.float64), dtype=DTYPE)
    return _result(out, (x,), lambda g: (np.full(x.shape, g / n, dtype=DTYPE),), "mean")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)
    return _result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose_last(x: Tensor) -> Tensor:
    """Swap the two trailing axes."""
    if x.ndim < 2:
        raise ShapeError(f"transpose_last needs order >= 2, got {x.shape}")
    out = np.swapaxes(x.data, -1, -2)
    return _result(out, (x,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if len(tensors) == 1:
        return tensors[0]
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _result(out, tensors, bw, "concat")


def take(x: Tensor, indices) -> Tensor:
    """Gather rows along the batch axis."""
    idx = np.asarray(indices, dtype=np.int64)
    out = x.data[idx]

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _result(out, (x,), bw, "take")


def batch_slice(x: Tensor, start: int, stop: int) -> Tensor:
    out = x.data[start:stop]

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[start:stop] = g
        return (gx,)

    return _result(out, (x,), bw, "slice")


# --------------------------------------------------------------------------
# linear algebra and normalisation


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` over the trailing two axes; leading (batch) axes must match."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        return np.matmul(g, np.swapaxes(b.data, -1, -2)), np.matmul(np.swapaxes(a.data, -1, -2), g)

    return _result(out, (a, b), bw, "matmul")


def l1_normalize(v: Tensor) -> Tensor:
    """Divide each vector (trailing axis) by its signed sum."""
    s = v.data.sum(axis=-1, keepdims=True, dtype=np.float64)
    if np.any(s == 0):
        raise DegenerateGuidanceError("l1_normalize: vector entries sum to zero")
    s = s.astype(DTYPE)
    out = v.data / s

    def bw(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return ((g - dot) / s,)

    return _result(out, (v,), bw, "l1_normalize")


def scale_channels(f: Tensor, m: Tensor) -> Tensor:
    """Multiply channel ``i`` of ``f`` by ``m[i]`` (``m`` is ``[C]`` or ``[N, C]``)."""
    c = f.shape[-1]
    if m.shape[-1] != c or (m.ndim == 2 and (f.ndim != 5 or m.shape[0] != f.shape[0])) or m.ndim > 2:
        raise ShapeError(f"scale_channels: weights {m.shape} do not match features {f.shape}")
    view = m.data if m.ndim == 1 else m.data[:, None, None, None, :]
    out = f.data * view

    def bw(g):
        gf = g * view
        prod = g * f.data
        if m.ndim == 1:
            gm = prod.reshape(-1, c).sum(axis=0)
        else:
            gm = prod.reshape(f.shape[0], -1, c).sum(axis=1)
        return gf, gm

    return _result(out, (f, m), bw, "scale_channels")


def mean_spatial(f: Tensor) -> Tensor:
    """Global average pool: ``[N, W, H, L, C] -> [N, C]`` (or ``[W, H, L, C] -> [C]``)."""
    axes = tuple(range(f.ndim - 4, f.ndim - 1))
    n = int(np.prod([f.shape[a] for a in axes]))
    out = f.data.mean(axis=axes, dtype=np.float64).astype(DTYPE)

    def bw(g):
        g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, f.shape).astype(DTYPE),)

    return _result(out, (f,), bw, "mean_spatial")


# --------------------------------------------------------------------------
# softmax family


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_channels(x: Tensor) -> Tensor:
    if x.shape[-1] == 0:
        raise ShapeError("softmax over an empty channel axis")
    p = _softmax(x.data)

    def bw(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - dot),)

    return _result(p, (x,), bw, "softmax")


def softmax_with_loss(logits: Tensor, labels) -> Tensor:
    """Mean over voxels of ``-log softmax(logits)[label]``."""
    labels = np.asarray(labels)
    c = logits.shape[-1]
    if c == 0:
        raise ShapeError("softmax over an empty channel axis")
    if labels.shape != logits.shape[:-1]:
        raise ShapeError(f"labels {labels.shape} do not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels out of range [0, {c})")
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logsum
    flat_logp = logp.reshape(-1, c)
    flat_labels = labels.reshape(-1).astype(np.int64)
    n = flat_labels.size
    loss = -flat_logp[np.arange(n), flat_labels].mean()

    def bw(g):
        grad = np.exp(flat_logp)
        grad[np.arange(n), flat_labels] -= 1.0
        grad *= float(g) / n
        return (grad.reshape(logits.shape).astype(DTYPE),)

    return _result(np.asarray(loss, dtype=DTYPE), (logits,), bw, "softmax_with_loss")


# --------------------------------------------------------------------------
# convolution

# Convolution kernels: "numpy" is the reference implementation; "torch" hands
# the dense kernel (forward and input/weight gradients) to torch's CPU conv.
# Graph recording and every other op stay in numpy either way.
_CONV_BACKENDS = ("numpy", "torch")


def _default_backend() -> str:
    env = os.environ.get("OMNET_CONV_BACKEND")
    if env:
        return env
    try:
        import torch  # noqa: F401
    except ImportError:
        return "numpy"
    return "torch"


_conv_backend = _default_backend()


def set_conv_backend(name: str) -> None:
    global _conv_backend
    if name not in _CONV_BACKENDS:
        raise ValueError(f"unknown conv backend {name!r}; choose from {_CONV_BACKENDS}")
    if name == "torch":
        import torch  # noqa: F401
    _conv_backend = name


def get_conv_backend() -> str:
    return _conv_backend


@contextmanager
def conv_backend(name: str):
    prev = _conv_backend
    set_conv_backend(name)
    try:
        yield
    finally:
        set_conv_backend(prev)


def _torch_weight(w: np.ndarray, transposed: bool):
    import torch
    wt = torch.from_numpy(w)
    # ours: [kx, ky, kz, Cin, Cout]; torch: [Cout, Cin, k..] or [Cin, Cout, k..] when transposed
    return wt.permute(3, 4, 0, 1, 2) if transposed else wt.permute(4, 3, 0, 1, 2)


def _torch_conv(xd, w, bias, s, p, transposed):
    import torch
    xt = torch.from_numpy(np.ascontiguousarray(xd)).permute(0, 4, 1, 2, 3)
    bt = torch.from_numpy(bias) if bias is not None else None
    out = torch.ops.aten.convolution(xt, _torch_weight(w, transposed), bt, list(s), list(p), [1, 1, 1],
                                     transposed, [0, 0, 0], 1)
    return out.permute(0, 2, 3, 4, 1).contiguous().numpy()


def _torch_conv_backward(g, xd, w, has_bias, s, p, transposed, need_x, need_w):
    import torch
    gt = torch.from_numpy(np.ascontiguousarray(g)).permute(0, 4, 1, 2, 3)
    xt = torch.from_numpy(np.ascontiguousarray(xd)).permute(0, 4, 1, 2, 3)
    wt = _torch_weight(w, transposed)
    cout = w.shape[4]
    gx, gw, gb = torch.ops.aten.convolution_backward(
        gt, xt, wt, [cout] if has_bias else None, list(s), list(p), [1, 1, 1], transposed, [0, 0, 0], 1,
        [need_x, need_w, has_bias])
    gx = gx.permute(0, 2, 3, 4, 1).contiguous().numpy() if need_x else None
    if need_w:
        gw = gw.permute(2, 3, 4, 0, 1) if transposed else gw.permute(2, 3, 4, 1, 0)
        gw = gw.contiguous().numpy()
    else:
        gw = None
    gb = gb.numpy() if has_bias else None
    return gx, gw, gb


def _conv_torch_op(x, weight, bias, s, p, transposed, op):
    batched = x.ndim == 5
    xd = x.data if batched else x.data[None]
    w = weight.data
    out = _torch_conv(xd, w, bias.data if bias is not None else None, s, p, transposed)

    def bw(g):
        gb_ = g if batched else g[None]
        gx, gw, gbias = _torch_conv_backward(gb_, xd, w, bias is not None, s, p, transposed,
                                             x.requires_grad, weight.requires_grad)
        if gx is not None and not batched:
            gx = gx[0]
        return (gx, gw, gbias) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _result(out if batched else out[0], parents, bw, op)



def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, (int, np.integer)):
        return (int(v),) * 3
    t = tuple(int(i) for i in v)
    if len(t) != 3:
        raise ShapeError(f"expected 3 values, got {v}")
    return t


def _batched(x: Tensor) -> bool:
    if x.ndim == 5:
        return True
    if x.ndim == 4:
        return False
    raise ShapeError(f"expected [W,H,L,C] or [N,W,H,L,C], got {x.shape}")


def _window(start: int, count: int, step: int) -> slice:
    return slice(start, start + step * (count - 1) + 1, step)


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """3D cross-correlation. ``weight`` is ``[kx, ky, kz, Cin, Cout]``."""
    batched = _batched(x)
    xd = x.data if batched else x.data[None]
    w = weight.data
    if w.ndim != 5 or w.shape[3] != xd.shape[-1]:
        raise ShapeError(f"conv3d input {x.shape} incompatible with weights {weight.shape}")
    if bias is not None and bias.shape != (w.shape[4],):
        raise ShapeError(f"conv3d bias {bias.shape} incompatible with weights {weight.shape}")
    s, p, k = _triple(stride), _triple(padding), w.shape[:3]
    if min(s) < 1:
        raise ShapeError(f"stride must be >= 1, got {s}")
    if any(q < 0 for q in p):
        raise ShapeError(f"padding must be >= 0, got {p}")
    xp = np.pad(xd, ((0, 0),) + tuple((q, q) for q in p) + ((0, 0),)) if any(p) else xd
    out_ext = [(xp.shape[i + 1] - k[i]) // s[i] + 1 for i in range(3)]
    if any(xp.shape[i + 1] < k[i] for i in range(3)):
        raise ShapeError(f"conv3d kernel {weight.shape} does not fit padded input {xp.shape}")
    if _conv_backend == "torch":
        return _conv_torch_op(x, weight, bias, s, p, False, "conv3d")
    n, cout = xd.shape[0], w.shape[4]
    offsets = list(itertools.product(*(range(kk) for kk in k)))

    def win(a, b, c):
        return (slice(None), _window(a, out_ext[0], s[0]), _window(b, out_ext[1], s[1]),
                _window(c, out_ext[2], s[2]))

    out = np.zeros((n, *out_ext, cout), dtype=DTYPE)
    for a, b, c in offsets:
        out += xp[win(a, b, c)] @ w[a, b, c]
    if bias is not None:
        out += bias.data
    if not batched:
        out = out[0]

    def bw(g):
        gb = g if batched else g[None]
        g2 = gb.reshape(-1, cout)
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gw = np.empty_like(w) if weight.requires_grad else None
        for a, b, c in offsets:
            sl = win(a, b, c)
            if gw is not None:
                gw[a, b, c] = xp[sl].reshape(-1, w.shape[3]).T @ g2
            if gxp is not None:
                gxp[sl] += gb @ w[a, b, c].T
        gx = None
        if gxp is not None:
            gx = gxp[(slice(None),) + tuple(slice(q, gxp.shape[i + 1] - q) for i, q in enumerate(p))]
            if not batched:
                gx = gx[0]
        gbias = g2.sum(axis=0) if bias is not None else None
        return (gx, gw, gbias) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _result(out, parents, bw, "conv3d")


def deconv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Transposed 3D convolution; output extent ``stride*(in-1) + k - 2*padding``."""
    batched = _batched(x)
    xd = x.data if batched else x.data[None]
    w = weight.data
    if w.ndim != 5 or w.shape[3] != xd.shape[-1]:
        raise ShapeError(f"deconv3d input {x.shape} incompatible with weights {weight.shape}")
    if bias is not None and bias.shape != (w.shape[4],):
        raise ShapeError(f"deconv3d bias {bias.shape} incompatible with weights {weight.shape}")
    s, p, k = _triple(stride), _triple(padding), w.shape[:3]
    if min(s) < 1:
        raise ShapeError(f"stride must be >= 1, got {s}")
    n, cin, cout = xd.shape[0], w.shape[3], w.shape[4]
    in_ext = xd.shape[1:4]
    full = [s[i] * (in_ext[i] - 1) + k[i] for i in range(3)]
    if any(full[i] - 2 * p[i] < 1 for i in range(3)):
        raise ShapeError(f"deconv3d padding {p} too large for input {x.shape}, weights {weight.shape}")
    if _conv_backend == "torch":
        return _conv_torch_op(x, weight, bias, s, p, True, "deconv3d")
    offsets = list(itertools.product(*(range(kk) for kk in k)))

    def win(a, b, c):
        return (slice(None), _window(a, in_ext[0], s[0]), _window(b, in_ext[1], s[1]),
                _window(c, in_ext[2], s[2]))

    crop = (slice(None),) + tuple(slice(p[i], full[i] - p[i]) for i in range(3))
    out_full = np.zeros((n, *full, cout), dtype=DTYPE)
    for a, b, c in offsets:
        out_full[win(a, b, c)] += xd @ w[a, b, c]
    out = out_full[crop]
    if bias is not None:
        out = out + bias.data
    else:
        out = np.ascontiguousarray(out)
    if not batched:
        out = out[0]

    def bw(g):
        gb = g if batched else g[None]
        g_full = np.zeros((n, *full, cout), dtype=DTYPE)
        g_full[crop] = gb
        x2 = xd.reshape(-1, cin)
        gx = np.zeros_like(xd) if x.requires_grad else None
        gw = np.empty_like(w) if weight.requires_grad else None
        for a, b, c in offsets:
            gs = g_full[win(a, b, c)]
            if gw is not None:
                gw[a, b, c] = x2.T @ gs.reshape(-1, cout)
            if gx is not None:
                gx += gs @ w[a, b, c].T
        if gx is not None and not batched:
            gx = gx[0]
        gbias = gb.reshape(-1, cout).sum(axis=0) if bias is not None else None
        return (gx, gw, gbias) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _result(out, parents, bw, "deconv3d")


# --------------------------------------------------------------------------
# optimisation


def sgd_momentum_step(params: Iterable[Tensor], grads: Iterable[np.ndarray | None], state: dict,
                      lr: float, mu: float, lr_scales: dict[int, float] | None = None) -> None:
    """In-place update ``v <- mu*v - lr*g; w <- w + v``.

    ``state`` maps ``id(param)`` to its velocity and persists across calls.
    ``lr_scales`` optionally multiplies the rate for individual parameters.
    """
    lr_scales = lr_scales or {}
    for p, g in zip(params, grads):
        v = state.get(id(p))
        if v is None:
            v = np.zeros_like(p.data)
        if g is None:
            g = 0.0
        v = (mu * v - lr * lr_scales.get(id(p), 1.0) * g).astype(DTYPE)
        state[id(p)] = v
        p.data = p.data + v


class SGD:
    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.99,
                 lr_scales: dict[int, float] | None = None):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.lr_scales = dict(lr_scales or {})
        self.state: dict[int, np.ndarray] = {}

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        sgd_momentum_step(self.params, [p.grad for p in self.params], self.state, self.lr, self.momentum,
                          self.lr_scales)
