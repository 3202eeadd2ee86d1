"""A small reverse-mode autodiff engine over float64 numpy arrays.

Only the primitives needed by the encoder, the contrastive objective and the
attention-masked forecasters are provided: linear maps, matmul, elementwise
add/sub/mul, moving average, sigmoid, cosine similarity, squared error,
mean/sum reduction, reshape and stop-gradient.

Leaf gradients accumulate across ``backward`` calls until ``zero_grad``.
"""
from __future__ import annotations

import functools
import json
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import NonFiniteError, ShapeError, UnsupportedPrimitive

CHECKPOINT_VERSION = 1


class Value:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 parents: tuple["Value", ...] = (), backward: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward = backward
        self.grad = np.zeros_like(self.data) if (requires_grad and not parents) else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Value(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, grad=None) -> None:
        """Propagate d(self)/d(leaf) into every ``requires_grad`` leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return
        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise ShapeError(f"{node.op}: gradient shape {pg.shape} != {parent.shape}")
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological(root: Value) -> list[Value]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def as_value(x) -> Value:
    if isinstance(x, Value):
        return x
    if isinstance(x, (np.ndarray, float, int, np.floating, np.integer, list, tuple)):
        return Value(x)
    raise UnsupportedPrimitive(f"cannot lift {type(x).__name__} into the graph")


def parameter(data) -> Value:
    return Value(np.array(data, dtype=np.float64), requires_grad=True)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _node(data, op, parents, backward) -> Value:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Value(data, op=op)
    return Value(data, requires_grad=True, op=op, parents=parents, backward=backward)


def _broadcast_shape(a: Value, b: Value, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape(a, b, "add")
    return _node(a.data + b.data, "add", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape(a, b, "sub")
    return _node(a.data - b.data, "sub", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def neg(a) -> Value:
    a = as_value(a)
    return _node(-a.data, "neg", (a,), lambda g: (-g,))


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape(a, b, "mul")
    return _node(a.data * b.data, "mul", (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def matmul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _node(out, "matmul", (a, b), backward)


def linear(x, weight, bias=None) -> Value:
    """``x @ weight^T + bias`` with ``weight`` shaped (..., out, in)."""
    x, weight = as_value(x), as_value(weight)
    if weight.data.ndim < 2 or x.shape[-1] != weight.shape[-1]:
        raise ShapeError(f"linear: input width {x.shape[-1:]} vs weight {weight.shape}")
    wt = np.swapaxes(weight.data, -1, -2)
    out = np.matmul(x.data, wt)
    parents = (x, weight)
    if bias is not None:
        bias = as_value(bias)
        if bias.shape[-1] != weight.shape[-2]:
            raise ShapeError(f"linear: bias {bias.shape} vs weight {weight.shape}")
        out = out + bias.data
        parents = (x, weight, bias)

    def backward(g):
        gx = _unbroadcast(np.matmul(g, weight.data), x.shape) if x.requires_grad else None
        gw = _unbroadcast(np.swapaxes(np.matmul(np.swapaxes(x.data, -1, -2), g), -1, -2), weight.shape)
        if bias is None:
            return gx, gw
        return gx, gw, _unbroadcast(g, bias.shape)

    return _node(out, "linear", parents, backward)


@functools.lru_cache(maxsize=256)
def moving_average_matrix(length: int, k: int) -> np.ndarray:
    """(length, length) operator of a centred width-``k`` mean with edge replication."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"moving-average kernel must be odd and positive, got {k}")
    half = (k - 1) // 2
    rows = np.repeat(np.arange(length), k)
    cols = np.clip(rows + np.tile(np.arange(-half, half + 1), length), 0, length - 1)
    A = np.zeros((length, length))
    np.add.at(A, (rows, cols), 1.0 / k)
    A.setflags(write=False)
    return A


def moving_average(x, k: int) -> Value:
    """Centred moving average along the last axis, edges padded by replication."""
    x = as_value(x)
    A = moving_average_matrix(x.shape[-1], k)
    out = np.matmul(x.data, A.T)
    return _node(out, "moving_average", (x,), lambda g: (np.matmul(g, A),))


def sigmoid(x) -> Value:
    x = as_value(x)
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _node(s, "sigmoid", (x,), lambda g: (g * s * (1.0 - s),))


def _axis_count(shape, axis) -> int:
    if axis is None:
        return int(np.prod(shape)) if shape else 1
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return int(np.prod([shape[a] for a in axes]))


def _expand(g: np.ndarray, shape, axis) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    return np.broadcast_to(np.expand_dims(g, axes), shape)


def sum(x, axis=None) -> Value:  # noqa: A001 - mirrors numpy naming
    x = as_value(x)
    out = x.data.sum(axis=axis)
    return _node(out, "sum", (x,), lambda g: (np.array(_expand(g, x.shape, axis)),))


def mean(x, axis=None) -> Value:
    x = as_value(x)
    n = _axis_count(x.shape, axis)
    out = x.data.mean(axis=axis)
    return _node(out, "mean", (x,), lambda g: (np.array(_expand(g, x.shape, axis)) / n,))


def reshape(x, shape) -> Value:
    x = as_value(x)
    out = x.data.reshape(shape)
    return _node(out, "reshape", (x,), lambda g: (g.reshape(x.shape),))


def stopgrad(x) -> Value:
    """Identity in the forward pass; no gradient reaches ``x``."""
    x = as_value(x)
    return Value(x.data.copy(), op="stopgrad")


def cosine_similarity(a, b, axis: int = -1, eps: float = 1e-8) -> Value:
    """Cosine along ``axis``; each norm is floored at ``eps``."""
    a, b = as_value(a), as_value(b)
    if a.shape != b.shape:
        raise ShapeError(f"cosine_similarity: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a.data, axis=axis, keepdims=True)
    nb = np.linalg.norm(b.data, axis=axis, keepdims=True)
    ca, cb = np.maximum(na, eps), np.maximum(nb, eps)
    dot = np.sum(a.data * b.data, axis=axis, keepdims=True)
    cos = dot / (ca * cb)

    def backward(g):
        g = np.expand_dims(g, axis)
        # the clamped norm has zero derivative below eps
        ga = g * (b.data / (ca * cb) - cos * a.data / ca**2 * (na >= eps))
        gb = g * (a.data / (ca * cb) - cos * b.data / cb**2 * (nb >= eps))
        return ga, gb

    return _node(np.squeeze(cos, axis=axis), "cosine_similarity", (a, b), backward)


def mse(pred, target, axis=None) -> Value:
    """Mean squared error, reduced over ``axis`` (all elements by default)."""
    pred, target = as_value(pred), as_value(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = _axis_count(diff.shape, axis)
    out = np.mean(diff**2, axis=axis)

    def backward(g):
        gp = np.array(_expand(g, diff.shape, axis)) * (2.0 / n) * diff
        return gp, -gp

    return _node(out, "mse", (pred, target), backward)


def forward_backward(fn: Callable[..., Value], params: Mapping[str, Value], *inputs) -> tuple[float, dict[str, np.ndarray]]:
    """Run ``fn(*inputs)`` to a scalar loss and return it with fresh gradients."""
    for p in params.values():
        p.zero_grad()
    loss = fn(*inputs)
    if not isinstance(loss, Value):
        raise UnsupportedPrimitive(f"loss must be a Value, got {type(loss).__name__}")
    loss.backward()
    return loss.item(), {name: p.grad.copy() for name, p in params.items()}


def zero_grad(params: Iterable[Value]) -> None:
    for p in params:
        p.zero_grad()


class Adam:
    """Adaptive-moment optimizer with bias correction.

    Moments live per parameter name; ``step`` reads ``.grad`` of each
    parameter and updates ``.data`` in place.
    """

    def __init__(self, params: Mapping[str, Value], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        zero_grad(self.params.values())

    def step(self) -> None:
        for name, p in self.params.items():
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def save_checkpoint(path: str | Path, params: Mapping[str, np.ndarray | Value], meta: dict | None = None) -> None:
    arrays = {k: (v.data if isinstance(v, Value) else np.asarray(v, dtype=np.float64)) for k, v in params.items()}
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "shapes": {k: list(a.shape) for k, a in arrays.items()},
        "params": {k: [float(x) for x in a.ravel(order="C")] for k, a in arrays.items()},
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    doc = json.loads(Path(path).read_text())
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version!r}")
    params = {}
    for name, shape in doc["shapes"].items():
        flat = np.asarray(doc["params"][name], dtype=np.float64)
        if flat.size != int(np.prod(shape)):
            raise ShapeError(f"checkpoint parameter {name!r}: {flat.size} values for shape {shape}")
        params[name] = flat.reshape(shape)
    return params, doc.get("meta", {})
