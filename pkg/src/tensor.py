"""Dense numpy tensors with reverse-mode automatic differentiation.

Every op builds its output eagerly and records a :class:`Node` holding the
parent tensors and a backward rule mapping the output gradient to one
gradient per parent. :meth:`Tensor.backward` walks the graph in reverse
topological order and accumulates into ``.grad`` of leaf tensors that
require gradients.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from .errors import ShapeError

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float64
LAYER_NORM_EPS = 1e-12
GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715

Backward = Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Node:
    op: str
    parents: Tuple["Tensor", ...]
    backward: Backward


class Tensor:
    def __init__(
        self,
        data,
        requires_grad: bool = False,
        dtype=None,
        name: str = "",
        node: Node | None = None,
    ) -> None:
        array = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
        if not array.flags.c_contiguous:
            array = np.ascontiguousarray(array)
        self.data = array
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node = node
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.data.dtype})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.size != 1:
                raise ShapeError(
                    f"backward: implicit gradient needs a scalar, got {self.shape}"
                )
            grad = np.ones_like(self.data)
        grads: Dict[int, np.ndarray] = {id(self): np.asarray(grad, self.data.dtype)}
        for t in reversed(_topological(self)):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t.node is None:
                if t.requires_grad:
                    t.grad = g.copy() if t.grad is None else t.grad + g
                continue
            for parent, pg in zip(t.node.parents, t.node.backward(g)):
                if pg is None or not _needs_grad(parent):
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

    # operator sugar
    def __add__(self, other) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, key) -> "Tensor":
        return select(self, key)


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t.node is not None


def _topological(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    seen = set()
    stack = [(root, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for parent in t.node.parents:
                if id(parent) not in seen and _needs_grad(parent):
                    stack.append((parent, False))
    return order


def as_tensor(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.data.dtype if like is not None else None
    return Tensor(value, dtype=dtype)


def _result(data: np.ndarray, op: str, parents, backward: Backward) -> Tensor:
    parents = tuple(parents)
    if not any(_needs_grad(p) for p in parents):
        return Tensor(data, dtype=data.dtype)
    return Tensor(data, dtype=data.dtype, node=Node(op, parents, backward))


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` over the axes broadcasting expanded."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(
            f"{op}: shapes {a.shape} and {b.shape} do not broadcast"
        ) from None


def add(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _broadcast_shape("add", a, b)
    return _result(
        a.data + b.data,
        "add",
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _broadcast_shape("mul", a, b)
    return _result(
        a.data * b.data,
        "mul",
        (a, b),
        lambda g: (
            unbroadcast(g * b.data, a.shape),
            unbroadcast(g * a.data, b.shape),
        ),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(
            f"matmul: batch axes of {a.shape} and {b.shape} differ"
        ) from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _result(out, "matmul", (a, b), backward)


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = list(range(x.ndim - 2)) + [x.ndim - 1, x.ndim - 2]
    axes = list(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inverse = np.argsort(axes)
    return _result(
        np.transpose(x.data, axes),
        "transpose",
        (x,),
        lambda g: (np.transpose(g, inverse),),
    )


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(
            f"reshape: cannot reshape {x.shape} to {tuple(shape)}"
        ) from None
    return _result(out, "reshape", (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    if not tensors:
        raise ShapeError("concat: nothing to concatenate")
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError(
                f"concat: leading axes differ, {tensors[0].shape} and {t.shape}"
            )
    widths = [t.shape[-1] for t in tensors]
    splits = np.cumsum(widths)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=-1))

    return _result(
        np.concatenate([t.data for t in tensors], axis=-1), "concat", tensors, backward
    )


def select(x: Tensor, key) -> Tensor:
    """Basic or fancy indexing; repeated indices accumulate on the way back."""
    try:
        out = x.data[key]
    except IndexError as exc:
        raise ShapeError(f"slice: {exc} for shape {x.shape}") from None

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        return (full,)

    return _result(np.array(out, copy=True), "slice", (x,), backward)


def embedding_gather(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding_gather: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding_gather: ids outside 0..{table.shape[0] - 1} for table "
            f"{table.shape}"
        )

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _result(table.data[ids], "embedding_gather", (table,), backward)


def softmax(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _result(s, "softmax", (x,), backward)


def layer_norm(
    x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS
) -> Tensor:
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(
            f"layer_norm: gain {gain.shape} and bias {bias.shape} must be ({n},) "
            f"for input {x.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    out = xhat * gain.data + bias.data
    return _result(out, "layer_norm", (x, gain, bias), backward)


def gelu(x: Tensor) -> Tensor:
    """tanh approximation: 0.5·x·(1 + tanh(c·(x + 0.044715·x³)))."""
    v = x.data
    t = np.tanh(GELU_C * (v + GELU_A * v**3))

    def backward(g):
        dt = (1.0 - t**2) * GELU_C * (1.0 + 3.0 * GELU_A * v**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * dt),)

    return _result(0.5 * v * (1.0 + t), "gelu", (x,), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``p == 0`` or no generator is given."""
    if p <= 0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return _result(x.data * keep, "dropout", (x,), lambda g: (g * keep,))


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean softmax cross-entropy of ``logits [M×V]`` against ids ``[M]``."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(
            f"cross_entropy: logits {logits.shape} and targets {targets.shape} "
            "do not align"
        )
    m = logits.shape[0]
    if m == 0:
        raise ShapeError("cross_entropy: no rows")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_z
    rows = np.arange(m)
    loss = -log_probs[rows, targets].mean()

    def backward(g):
        grad = np.exp(log_probs)
        grad[rows, targets] -= 1.0
        return (grad * (g / m),)

    return _result(
        np.asarray(loss, dtype=logits.data.dtype), "cross_entropy", (logits,), backward
    )


def sum_all(x: Tensor) -> Tensor:
    return _result(
        np.asarray(x.data.sum(), dtype=x.data.dtype),
        "sum",
        (x,),
        lambda g: (np.broadcast_to(g, x.shape).copy(),),
    )


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    max_elements: int = 10_000,
    floor: float = 1e-4,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between backprop and central differences.

    ``f`` must be deterministic. Parameters with more than ``max_elements``
    entries are checked on a random subsample. The relative error of one
    element is ``|a - n| / max(|a| + |n|, floor)``.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.zero_grad()
    f().backward()
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params
    ]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        if flat.size > max_elements:
            indices = rng.choice(flat.size, size=max_elements, replace=False)
        else:
            indices = np.arange(flat.size)
        a_flat = a.reshape(-1)
        for i in indices:
            orig = flat[i]
            flat[i] = orig + h
            plus = f().item()
            flat[i] = orig - h
            minus = f().item()
            flat[i] = orig
            numeric = (plus - minus) / (2 * h)
            err = abs(a_flat[i] - numeric) / max(abs(a_flat[i]) + abs(numeric), floor)
            if err > worst:
                worst = err
                logger.debug(
                    "grad_check %s[%d]: analytic %.6g numeric %.6g",
                    p.name or "param",
                    i,
                    a_flat[i],
                    numeric,
                )
    return float(worst)
