"""Dense tensors with reverse-mode differentiation.

Only the handful of operations the refinement network and the diffusion
solver need. Arrays are NCHW numpy arrays; every forward op checks its
output for NaN/Inf and raises :class:`NumericFaultError` naming itself.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, NumericFaultError, ShapeError

_dtype = np.dtype(np.float32)


def get_dtype() -> np.dtype:
    return _dtype


def set_dtype(dtype) -> None:
    global _dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported compute dtype {dtype}")
    _dtype = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the compute dtype, e.g. to float64 for gradient checks."""
    old = _dtype
    set_dtype(dtype)
    try:
        yield
    finally:
        set_dtype(old)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

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
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float("nan")

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def custom_op(
    name: str,
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> Tensor:
    """Wrap a forward result as a graph node.

    ``backward_fn`` maps the upstream gradient to one gradient (or None) per
    parent, in order.
    """
    if not np.all(np.isfinite(data)):
        raise NumericFaultError(name)
    out = Tensor(data, dtype=data.dtype)
    out.op = name
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order[::-1]


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Calling twice without zeroing adds the gradients.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in _topo_order(loss):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise ShapeError(f"{node.op} produced grad {pg.shape} for input {parent.shape}")
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# --------------------------------------------------------------------------
# Elementwise


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return custom_op(
        "add", a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return custom_op(
        "sub", a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return custom_op(
        "mul", a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return custom_op("relu", np.where(mask, x.data, 0).astype(x.data.dtype), (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope).astype(x.data.dtype)
    return custom_op("leaky_relu", x.data * scale, (x,), lambda g: (g * scale,))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return custom_op(
        "sum", np.asarray(x.data.sum(), dtype=x.data.dtype), (x,),
        lambda g: (np.broadcast_to(g, x.shape).copy(),),
    )


def mean(x: Tensor) -> Tensor:
    n = x.size
    return custom_op(
        "mean", np.asarray(x.data.mean(), dtype=x.data.dtype), (x,),
        lambda g: (np.full(x.shape, g / n, dtype=x.data.dtype),),
    )


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return custom_op("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute difference; gradient is sign(pred - target) / N."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss: pred {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    sign = np.sign(diff)

    def bwd(g):
        gp = (g / n * sign).astype(diff.dtype)
        return gp, -gp

    return custom_op("l1_loss", np.asarray(np.abs(diff).mean(), dtype=diff.dtype), (pred, target), bwd)


# --------------------------------------------------------------------------
# Structural


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 4 or b.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: incompatible shapes {a.shape} and {b.shape}")
    ca = a.shape[1]
    return custom_op(
        "concat_channels", np.concatenate([a.data, b.data], axis=1), (a, b),
        lambda g: (g[:, :ca], g[:, ca:]),
    )


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    if x.ndim != 4 or factor < 1:
        raise ShapeError(f"upsample_nearest: need NCHW input and factor >= 1, got {x.shape}, {factor}")
    n, c, h, w = x.shape
    out = np.broadcast_to(x.data[:, :, :, None, :, None], (n, c, h, factor, w, factor))
    return custom_op(
        "upsample_nearest", out.reshape(n, c, h * factor, w * factor), (x,),
        lambda g: (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),),
    )


def _pool_sum(a: np.ndarray, factor: int) -> np.ndarray:
    n, c, h, w = a.shape
    # pairwise halving keeps block-constant sums exact for power-of-two factors
    while factor > 1 and factor % 2 == 0:
        h, w, factor = h // 2, w // 2, factor // 2
        a = a.reshape(n, c, h, 2, w, 2)
        a = (a[:, :, :, 0] + a[:, :, :, 1])
        a = a[..., 0] + a[..., 1]
    if factor > 1:
        a = a.reshape(n, c, h // factor, factor, w // factor, factor).sum(axis=(3, 5))
    return a


def avgpool(x: Tensor, factor: int) -> Tensor:
    if x.ndim != 4 or factor < 1 or x.shape[2] % factor or x.shape[3] % factor:
        raise ShapeError(f"avgpool: {x.shape} not divisible by factor {factor}")
    n, c, h, w = x.shape
    inv = 1.0 / (factor * factor)
    out = _pool_sum(x.data, factor) * np.asarray(inv, dtype=x.data.dtype)

    def bwd(g):
        g = g * np.asarray(inv, dtype=g.dtype)
        return (np.broadcast_to(g[:, :, :, None, :, None], (n, c, h // factor, factor, w // factor, factor))
                .reshape(n, c, h, w).copy(),)

    return custom_op("avgpool", out, (x,), bwd)


# --------------------------------------------------------------------------
# Convolution


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of an NCHW input with a KCkhkw kernel."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: invalid stride {stride} / padding {padding}")
    n, c, h, w = x.shape
    k, _, kh, kw = weight.shape
    if bias is not None and bias.shape != (k,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match weight {weight.shape}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(f"conv2d: kernel {weight.shape} larger than padded input {x.shape}")
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1

    # im2col over an NHWC copy, columns ordered (kh, kw, c)
    xh = x.data.transpose(0, 2, 3, 1)
    xp = np.pad(xh, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else xh
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :oh, :ow]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * oh * ow, kh * kw * c)
    wmat = weight.data.transpose(0, 2, 3, 1).reshape(k, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, oh, ow, k).transpose(0, 3, 1, 2)

    def bwd(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, k)
        gw = None
        if weight.requires_grad:
            gw = (gmat.T @ cols).reshape(k, kh, kw, c).transpose(0, 3, 1, 2)
        gb = gmat.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (gmat @ wmat).reshape(n, oh, ow, kh, kw, c)
            gxp = np.zeros((n, hp, wp, c), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + stride * oh:stride, j:j + stride * ow:stride] += dcols[:, :, :, i, j]
            gx = gxp[:, padding:padding + h, padding:padding + w].transpose(0, 3, 1, 2)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return custom_op("conv2d", out, parents, bwd)


# --------------------------------------------------------------------------
# Optimizer


@dataclass
class Parameter:
    name: str
    tensor: Tensor
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)
    step: int = 0

    def __post_init__(self):
        self.tensor.requires_grad = True
        if self.m is None:
            self.m = np.zeros_like(self.tensor.data)
        if self.v is None:
            self.v = np.zeros_like(self.tensor.data)
        if self.m.shape != self.tensor.shape or self.v.shape != self.tensor.shape:
            raise ShapeError(f"moment accumulators of {self.name} do not match {self.tensor.shape}")

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.tensor.grad = None


def adam_step(
    params: Iterable[Parameter],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update, no weight decay."""
    params = list(params)
    missing = [p.name for p in params if p.tensor.grad is None]
    if missing:
        raise ContractError(f"adam_step: no gradient for {missing}")
    for p in params:
        g = p.tensor.grad.astype(np.float64)
        p.step += 1
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * g * g
        m_hat = p.m / (1.0 - beta1 ** p.step)
        v_hat = p.v / (1.0 - beta2 ** p.step)
        update = lr * m_hat / (np.sqrt(v_hat) + eps)
        new = p.tensor.data - update
        if not np.all(np.isfinite(new)):
            raise NumericFaultError("adam_step", f"parameter {p.name} became non-finite")
        p.tensor.data = new.astype(p.tensor.data.dtype)
