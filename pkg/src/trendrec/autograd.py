"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation records its inputs and a backward closure on
the output tensor; ``backward`` on a scalar loss walks that implicit graph
once in reverse topological order and accumulates gradients into the
``grad`` buffer of each tensor that requires them.

Layout is row-major, values are double precision, and broadcasting is
restricted to the trailing-suffix cases the model actually uses. A graph is
meant to be built, differentiated, and discarded on a single thread; the
tensors themselves can be handed between threads freely.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    DegenerateRowError,
    GradientError,
    NonFiniteError,
    NormalizationError,
    ShapeError,
)

Scalar = Union[int, float]


def _as_float_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("tensor contains NaN or Inf values")
    return arr


class Tensor:
    """A dense real array, optionally tracked by the differentiation tape.

    ``grad`` is populated (same shape as ``data``) after a backward pass if
    ``requires_grad`` is set. Values are validated to be finite on creation;
    an op that produces NaN/Inf therefore fails loudly instead of poisoning
    downstream computation.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_float_array(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Optional[Callable[[np.ndarray], Sequence]] = None

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
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A view of the same data outside the graph."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._parents = ()
        out._backward_fn = None
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return tmean(self)

    def reshape(self, *shape: int) -> "Tensor":
        return reshape(self, shape)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return _affine(self, 1.0, float(other))

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return _affine(self, float(other), 0.0)

    __rmul__ = __mul__

    def __neg__(self):
        return _affine(self, -1.0, 0.0)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, -other)
        return _affine(self, 1.0, -float(other))

    def __rsub__(self, other):
        return _affine(self, -1.0, float(other))

    def __truediv__(self, other: Scalar):
        return _affine(self, 1.0 / float(other), 0.0)


def _make(
    data: np.ndarray,
    parents: tuple[Tensor, ...],
    backward_fn: Callable[[np.ndarray], Sequence],
) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` for every requires_grad tensor the loss depends on.

    The loss must be scalar. Traversal order is a deterministic reverse
    topological sort, so repeated runs over the same graph produce
    bit-identical gradients. Gradients accumulate; call ``zero_grad`` on the
    leaves between passes.
    """
    if loss.data.size != 1:
        raise GradientError(f"backward requires a scalar loss, got shape {loss.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward_fn is None or node.grad is None:
            continue
        grads = node._backward_fn(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += g


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# elementwise and affine ops
# ---------------------------------------------------------------------------


def _affine(x: Tensor, scale: float, shift: float) -> Tensor:
    data = x.data * scale + shift

    def bwd(g):
        return (g * scale,)

    return _make(data, (x,), bwd)


def _suffix_axes(a_shape: tuple[int, ...], b_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Leading axes of ``a`` that ``b`` is broadcast across, or raise."""
    k = len(a_shape) - len(b_shape)
    if k < 0 or a_shape[k:] != b_shape:
        raise ShapeError(f"operand shapes {a_shape} and {b_shape} are not suffix-compatible")
    return tuple(range(k))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a trailing-suffix shape of ``a``."""
    axes = _suffix_axes(a.shape, b.shape)
    data = a.data + b.data

    def bwd(g):
        gb = g.sum(axis=axes) if axes else g
        return g, gb

    return _make(data, (a, b), bwd)


def mul(a: Tensor, b: Union[Tensor, np.ndarray, Scalar]) -> Tensor:
    """Elementwise product.

    When ``b`` is a plain array or scalar it is treated as a constant (no
    gradient flows into it) and may broadcast up to ``a``'s shape; a Tensor
    ``b`` must be ``a``'s shape or a trailing suffix of it.
    """
    if not isinstance(b, Tensor):
        const = np.asarray(b, dtype=np.float64)
        if np.broadcast_shapes(a.shape, const.shape) != a.shape:
            raise ShapeError(f"constant of shape {const.shape} does not broadcast to {a.shape}")
        data = a.data * const

        def bwd_const(g):
            return (g * const,)

        return _make(data, (a,), bwd_const)

    axes = _suffix_axes(a.shape, b.shape)
    data = a.data * b.data
    a_data, b_data = a.data, b.data

    def bwd(g):
        ga = g * b_data
        gb = g * a_data
        if axes:
            gb = gb.sum(axis=axes)
        return ga, gb

    return _make(data, (a, b), bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0
    data = np.where(mask, x.data, 0.0)

    def bwd(g):
        return (g * mask,)

    return _make(data, (x,), bwd)


def log(x: Tensor) -> Tensor:
    """Natural log; the caller must keep values positive (clamp first)."""
    data = np.log(x.data)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("log of a non-positive value")
    x_data = x.data

    def bwd(g):
        return (g / x_data,)

    return _make(data, (x,), bwd)


def clamp(x: Tensor, min_value: Optional[float] = None, max_value: Optional[float] = None) -> Tensor:
    data = np.clip(x.data, min_value, max_value)
    passthrough = np.ones_like(x.data, dtype=bool)
    if min_value is not None:
        passthrough &= x.data >= min_value
    if max_value is not None:
        passthrough &= x.data <= max_value

    def bwd(g):
        return (g * passthrough,)

    return _make(data, (x,), bwd)


def power(x: Tensor, exponent: float) -> Tensor:
    """``x ** exponent`` for ``x >= 0``; exponent is a constant."""
    data = np.power(x.data, exponent)
    x_data = x.data

    def bwd(g):
        return (g * exponent * np.power(x_data, exponent - 1.0),)

    return _make(data, (x,), bwd)


def dropout(
    x: Tensor,
    rate: float,
    rng: Optional[np.random.Generator] = None,
    train: bool = False,
) -> Tensor:
    """Inverted dropout: zero with probability ``rate`` and rescale survivors
    by 1/(1-rate) in training mode; the identity (same object) in eval mode.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode requires an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    data = x.data * keep

    def bwd(g):
        return (g * keep,)

    return _make(data, (x,), bwd)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def tsum(x: Tensor) -> Tensor:
    data = np.sum(x.data)
    shape = x.shape

    def bwd(g):
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(data), (x,), bwd)


def tmean(x: Tensor) -> Tensor:
    data = np.mean(x.data)
    shape, n = x.shape, x.size

    def bwd(g):
        return (np.broadcast_to(g / n, shape).copy(),)

    return _make(np.asarray(data), (x,), bwd)


# ---------------------------------------------------------------------------
# shape manipulation and indexing
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    data = x.data.reshape(shape)
    old = x.shape

    def bwd(g):
        return (g.reshape(old),)

    return _make(data, (x,), bwd)


def transpose_last(x: Tensor) -> Tensor:
    """Swap the final two axes."""
    if x.ndim < 2:
        raise ShapeError(f"transpose_last needs ndim >= 2, got shape {x.shape}")
    data = np.swapaxes(x.data, -1, -2)

    def bwd(g):
        return (np.swapaxes(g, -1, -2),)

    return _make(data, (x,), bwd)


def gather_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]`` for a 2-D table; duplicate IDs accumulate
    gradient into the same row on backward.
    """
    if table.ndim != 2:
        raise ShapeError(f"gather_rows expects a 2-D table, got {table.shape}")
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise DataError("gather_rows indices must be integers")
    rows = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= rows):
        raise DataError(
            f"index out of range: ids span [{ids.min()}, {ids.max()}] for table of {rows} rows"
        )
    data = table.data[ids]
    tshape = table.shape

    def bwd(g):
        gt = np.zeros(tshape)
        np.add.at(gt, ids, g)
        return (gt,)

    return _make(data, (table,), bwd)


def select_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Per-batch pick along axis 1: out[b] = x[b, idx[b]]."""
    idx = np.asarray(idx)
    if x.ndim < 2:
        raise ShapeError(f"select_rows expects ndim >= 2, got {x.shape}")
    if idx.shape != (x.shape[0],):
        raise ShapeError(f"index of shape {idx.shape} does not match batch {x.shape[0]}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[1]):
        raise DataError(f"select_rows index out of range for axis of size {x.shape[1]}")
    batch = np.arange(x.shape[0])
    data = x.data[batch, idx]
    xshape = x.shape

    def bwd(g):
        gx = np.zeros(xshape)
        np.add.at(gx, (batch, idx), g)
        return (gx,)

    return _make(data, (x,), bwd)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product; grad_a = g @ b^T, grad_b = a^T @ g."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    data = a.data @ b.data
    a_data, b_data = a.data, b.data

    def bwd(g):
        return g @ b_data.T, a_data.T @ g

    return _make(data, (a, b), bwd)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched 3-D matrix product with identical batch dimension."""
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm: incompatible shapes {a.shape} @ {b.shape}")
    data = a.data @ b.data
    a_data, b_data = a.data, b.data

    def bwd(g):
        return g @ np.swapaxes(b_data, -1, -2), np.swapaxes(a_data, -1, -2) @ g

    return _make(data, (a, b), bwd)


# ---------------------------------------------------------------------------
# normalization and attention building blocks
# ---------------------------------------------------------------------------


def softmax(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction.

    ``mask`` is a boolean keep-mask; masked positions get exactly zero
    weight and exactly zero gradient. A fully masked row is an error.
    """
    if mask is None:
        shifted = x.data - x.data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError(f"mask shape {mask.shape} differs from input {x.shape}")
        if not mask.any(axis=-1).all():
            raise DegenerateRowError("softmax row with every position masked")
        neg = np.where(mask, x.data, -np.inf)
        shifted = neg - neg.max(axis=-1, keepdims=True)
        with np.errstate(invalid="ignore"):
            e = np.exp(shifted)
        e = np.where(mask, e, 0.0)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - inner),)

    return _make(y, (x,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row standardization over the last axis, then affine transform."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm parameters {gain.shape}/{bias.shape} do not match width {d}")
    if eps <= 0.0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    data = xhat * gain.data + bias.data
    lead_axes = tuple(range(x.ndim - 1))
    gain_data = gain.data

    def bwd(g):
        gbias = g.sum(axis=lead_axes) if lead_axes else g
        ggain = (g * xhat).sum(axis=lead_axes) if lead_axes else g * xhat
        gxhat = g * gain_data
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, ggain, gbias

    return _make(data, (x, gain, bias), bwd)


def l2_normalize(x: Tensor, floor: float = 1e-12) -> Tensor:
    """Scale each row (last axis) to unit Euclidean norm.

    Rows with norm below ``floor`` are rejected rather than silently blown
    up.
    """
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    if (norm < floor).any():
        raise NormalizationError(f"row norm below {floor} cannot be normalized")
    y = x.data / norm

    def bwd(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return ((g - y * inner) / norm,)

    return _make(y, (x,), bwd)


# ---------------------------------------------------------------------------
# gradient oracle
# ---------------------------------------------------------------------------


def finite_diff_grad(f: Callable[[Tensor], Union[Tensor, float]], x: Tensor, h: float = 1e-4) -> Tensor:
    """Central-difference gradient estimate of a scalar function.

    ``f`` must be pure and deterministic (disable dropout); ``x.data`` is
    perturbed in place one element at a time and restored afterwards.
    """

    def evaluate() -> float:
        out = f(x)
        return out.item() if isinstance(out, Tensor) else float(out)

    flat = x.data.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        up = evaluate()
        flat[i] = original - h
        down = evaluate()
        flat[i] = original
        grad[i] = (up - down) / (2.0 * h)
    return Tensor(grad.reshape(x.shape))
