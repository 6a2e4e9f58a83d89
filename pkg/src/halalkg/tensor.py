"""Dense float64 tensors with reverse-mode automatic differentiation.

Only what the model needs is provided: elementwise arithmetic with exact-shape
or scalar broadcasting, 2-D matmul, a few activations, reductions, row
gather/scatter over edge lists and a segment softmax. Every op checks that its
forward result is finite and raises :class:`NonFiniteValue` otherwise.
"""
from __future__ import annotations

import contextlib
import json
import math
import os
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .errors import (
    DoubleBackward,
    EmptySegment,
    NonFiniteValue,
    NonScalarLoss,
    ShapeMismatch,
)

LEAKY_SLOPE = 0.01

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording a backward graph."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "_consumed")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, "leaf")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self.op = "leaf"
        self._consumed = False

    @classmethod
    def _result(cls, data, parents, backward, op):
        data = np.asarray(data, dtype=np.float64)
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._consumed = False
        out.op = op
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self):
        return len(self.data)

    # operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise TypeError("only division by a Python scalar is supported")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every tracked leaf.

        Gradients add to whatever the leaves already hold; clear them with
        :meth:`zero_grad` between steps.
        """
        if self.data.size != 1:
            raise NonScalarLoss(f"backward needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise DoubleBackward("backward already ran on this loss; rebuild the graph")
        if not self.requires_grad:
            raise ValueError("loss does not depend on any tensor with requires_grad=True")
        self._consumed = True
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(_topological_order(self)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _topological_order(root: Tensor) -> list:
    order, visited = [], {id(root)}
    stack = [(root, iter(root._parents))]
    while stack:
        node, parents = stack[-1]
        for p in parents:
            if p.requires_grad and id(p) not in visited:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                break
        else:
            stack.pop()
            order.append(node)
    return order


def _check_finite(arr: np.ndarray, op: str) -> None:
    # a finite sum implies finite entries; only an overflowing sum needs the full scan
    if not math.isfinite(arr.sum()) and not np.isfinite(arr).all():
        raise NonFiniteValue(f"non-finite value produced by {op}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _is_scalar(t: Tensor) -> bool:
    return t.data.size == 1 and t.data.ndim <= 1


def _broadcast(a: Tensor, b: Tensor, op: str):
    if a.shape == b.shape or _is_scalar(a) or _is_scalar(b):
        return
    raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} (only exact or scalar broadcast)")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    if g.shape == t.shape:
        return g
    return np.asarray(g.sum()).reshape(t.shape)


# elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast(a, b, "add")
    return Tensor._result(
        a.data + b.data, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(g, b)), "add"
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast(a, b, "sub")
    return Tensor._result(
        a.data - b.data, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(-g, b)), "sub"
    )


def mul(a, b) -> Tensor:
    """Hadamard product."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast(a, b, "mul")
    return Tensor._result(
        a.data * b.data,
        (a, b),
        lambda g: (_reduce_to(g * b.data, a), _reduce_to(g * a.data, b)),
        "mul",
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor._result(a.data * c, (a,), lambda g: (g * c,), "scale")


def elementwise(op: str, a, b) -> Tensor:
    if op == "add":
        return add(a, b)
    if op == "sub":
        return sub(a, b)
    if op == "hadamard":
        return mul(a, b)
    if op == "scale":
        return scale(as_tensor(a), float(b))
    raise ValueError(f"unknown elementwise op {op!r}")


# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    return Tensor._result(
        a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul"
    )


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    return Tensor._result(out, (a,), lambda g: (g.reshape(old),), "reshape")


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeMismatch("concat of zero tensors")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {exc}") from None
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._result(out, parts, backward, "concat")


# activations

def sigmoid(x: Tensor) -> Tensor:
    y = np.exp(-np.logaddexp(0.0, -x.data))
    return Tensor._result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return Tensor._result(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    d = np.where(x.data > 0, 1.0, slope)
    return Tensor._result(x.data * d, (x,), lambda g: (g * d,), "leaky_relu")


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


def activation(kind: str, x: Tensor) -> Tensor:
    fn = {"sigmoid": sigmoid, "tanh": tanh, "leaky_relu": leaky_relu, "relu": relu}.get(kind)
    if fn is None:
        raise ValueError(f"unknown activation {kind!r}")
    return fn(x)


def log(x: Tensor) -> Tensor:
    if (x.data <= 0).any():
        raise NonFiniteValue("log of non-positive value")
    return Tensor._result(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def log_sigmoid(x: Tensor) -> Tensor:
    """``ln sigmoid(x)`` computed without overflow."""
    out = -np.logaddexp(0.0, -x.data)
    return Tensor._result(
        out, (x,), lambda g: (g * np.exp(-np.logaddexp(0.0, x.data)),), "log_sigmoid"
    )


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return Tensor._result(
        np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clamp"
    )


# reductions

def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    shape = x.shape
    if axis is None:
        return Tensor._result(
            x.data.sum(), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum"
        )
    out = x.data.sum(axis=axis)
    return Tensor._result(
        out,
        (x,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),),
        "sum_axis",
    )


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    if n == 0:
        raise ShapeMismatch("mean of an empty tensor")
    return scale(sum(x), 1.0 / n)


def l2_norm_sq(x: Tensor) -> Tensor:
    return Tensor._result(
        np.dot(x.data.ravel(), x.data.ravel()), (x,), lambda g: (2.0 * g * x.data,), "l2_norm_sq"
    )


# gather / scatter over edge lists

def gather(x: Tensor, index) -> Tensor:
    """Rows ``x[index]``; the backward pass scatter-adds into ``x``."""
    index = np.asarray(index, dtype=np.int64)
    n = x.shape[0]

    def backward(g):
        flat = g.reshape(len(index), -1)
        return (kernels.segment_sum(flat, index, n).reshape(x.shape),)

    return Tensor._result(x.data[index], (x,), backward, "gather")


def scatter_add(x: Tensor, index, n: int) -> Tensor:
    """``out[index[i]] += x[i]`` into ``n`` rows."""
    index = np.asarray(index, dtype=np.int64)
    if x.shape[0] != len(index):
        raise ShapeMismatch(f"scatter_add: {x.shape[0]} rows vs {len(index)} indices")
    flat = x.data.reshape(len(index), -1)
    out = kernels.segment_sum(flat, index, n).reshape((n,) + x.shape[1:])
    return Tensor._result(out, (x,), lambda g: (g[index],), "scatter_add")


def scale_rows(x: Tensor, w: Tensor) -> Tensor:
    """Multiply row ``i`` of a 2-D ``x`` by the scalar ``w[i]``."""
    if x.ndim != 2 or w.shape != (x.shape[0],):
        raise ShapeMismatch(f"scale_rows: {x.shape} by {w.shape}")
    col = w.data[:, None]
    return Tensor._result(
        x.data * col,
        (x, w),
        lambda g: (g * col, (g * x.data).sum(axis=1)),
        "scale_rows",
    )


def broadcast_rows(b: Tensor, n: int) -> Tensor:
    """Stack ``n`` copies of the vector ``b`` into an ``n x len(b)`` matrix."""
    if b.ndim != 1:
        raise ShapeMismatch(f"broadcast_rows expects a vector, got {b.shape}")
    out = np.broadcast_to(b.data, (n, b.shape[0])).copy()
    return Tensor._result(out, (b,), lambda g: (g.sum(axis=0),), "broadcast_rows")


def segment_softmax(logits: Tensor, segments, n_segments: int | None = None) -> Tensor:
    """Softmax of ``logits`` within groups sharing a segment id.

    ``segments[e]`` names the group (the target entity) of entry ``e``. Every
    group in ``range(n_segments)`` must own at least one entry. A 2-D
    ``E x K`` input is normalised column by column.
    """
    segments = np.asarray(segments, dtype=np.int64)
    if logits.ndim not in (1, 2) or logits.shape[0] != len(segments):
        raise ShapeMismatch(f"segment_softmax: logits {logits.shape}, {len(segments)} segments")
    if n_segments is None:
        n_segments = int(segments.max()) + 1 if len(segments) else 0
    counts = np.bincount(segments, minlength=n_segments)
    if len(counts) > n_segments or (counts == 0).any():
        raise EmptySegment("every segment needs at least one entry")
    y = kernels.segment_softmax(logits.data, segments, n_segments)
    return Tensor._result(
        y,
        (logits,),
        lambda g: (kernels.segment_softmax_grad(y, g, segments, n_segments),),
        "segment_softmax",
    )


def edge_aggregate(feats: Tensor, rel: Tensor, att: Tensor, src, typ, tgt, n: int) -> Tensor:
    """Attention-weighted relational messages summed per target.

    ``out[tgt[e]] += att[e, k] * (feats[src[e]] * rel[typ[e]])`` on each of
    the ``K = att.shape[1]`` channel blocks of the ``d`` feature columns.
    Equivalent to gather, Hadamard, :func:`scale_rows` and
    :func:`scatter_add`, fused into one kernel.
    """
    if feats.ndim != 2 or rel.ndim != 2 or att.ndim != 2:
        raise ShapeMismatch("edge_aggregate expects 2-D feats, rel and att")
    if feats.shape[1] != rel.shape[1] or feats.shape[1] % att.shape[1]:
        raise ShapeMismatch(f"edge_aggregate: feats {feats.shape}, rel {rel.shape}, att {att.shape}")
    src, typ, tgt = (np.asarray(a, dtype=np.int64) for a in (src, typ, tgt))
    out = kernels.edge_aggregate(feats.data, rel.data, att.data, src, typ, tgt, n)

    def backward(g):
        return kernels.edge_aggregate_grad(g, feats.data, rel.data, att.data, src, typ, tgt)

    return Tensor._result(out, (feats, rel, att), backward, "edge_aggregate")


# checkpoints

def save_checkpoint(directory, tensors: Mapping[str, object], meta: dict | None = None) -> None:
    """Write ``weights.bin`` (raw little-endian float64) and ``manifest.json``."""
    os.makedirs(directory, exist_ok=True)
    entries, offset = [], 0
    with open(os.path.join(directory, "weights.bin"), "wb") as fh:
        for name, value in tensors.items():
            arr = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
            raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            fh.write(raw)
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += len(raw)
    manifest = {"format": "halalkg-f64le", "version": 1, "tensors": entries, "meta": meta or {}}
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict]:
    with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    with open(os.path.join(directory, "weights.bin"), "rb") as fh:
        blob = fh.read()
    out = {}
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=entry["offset"])
        out[entry["name"]] = arr.astype(np.float64).reshape(entry["shape"])
    return out, manifest.get("meta", {})


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
