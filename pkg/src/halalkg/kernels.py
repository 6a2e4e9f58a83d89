"""Segment kernels with a compiled backend chosen at import time.

The Cython module ``halalkg._ckernels`` is used when it was built; otherwise
the numpy versions in ``halalkg._kernels_py`` are used. Setting the
environment variable ``HALALKG_PURE_PYTHON=1`` forces the fallback.

Every function accepts 1-D ``values`` of shape ``(E,)`` or 2-D ``(E, C)`` and
an integer ``index`` of length ``E`` mapping each row to a segment in
``range(n)``. Outputs keep the dimensionality of the input.
"""
import os

import numpy as np

from . import _kernels_py

try:
    if os.environ.get("HALALKG_PURE_PYTHON"):
        raise ImportError("fallback forced by HALALKG_PURE_PYTHON")
    from . import _ckernels as _impl
except ImportError:
    _impl = _kernels_py
    BACKEND = "python"
else:
    BACKEND = "cython"

try:
    from . import _ckernels
except ImportError:
    _ckernels = None

HAVE_COMPILED = _ckernels is not None


def backend(name=None):
    """Kernel module for ``"cython"`` or ``"python"``; ``None`` gives the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _ckernels is None:
            raise ImportError("halalkg._ckernels is not built")
        return _ckernels
    if hasattr(name, "segment_sum"):
        return name
    raise ValueError(f"unknown kernel backend {name!r}")


def _prep(values, index, n):
    values = np.ascontiguousarray(values, dtype=np.float64)
    index = np.ascontiguousarray(index, dtype=np.int64)
    if values.ndim not in (1, 2):
        raise ValueError(f"expected 1-D or 2-D values, got shape {values.shape}")
    if index.shape != (values.shape[0],):
        raise ValueError(f"index length {index.shape} does not match {values.shape[0]} rows")
    if index.size and (index.min() < 0 or index.max() >= n):
        raise IndexError("segment index out of range")
    flat = values.ndim == 1
    if flat:
        values = values.reshape(-1, 1)
    return values, index, flat


def _finish(out, flat):
    return out[:, 0] if flat else out


def segment_sum(values, index, n, impl=None):
    """Sum rows of ``values`` that share a segment id (scatter-add)."""
    impl = backend(impl)
    values, index, flat = _prep(values, index, n)
    return _finish(impl.segment_sum(values, index, int(n)), flat)


def segment_max(values, index, n, impl=None):
    impl = backend(impl)
    values, index, flat = _prep(values, index, n)
    return _finish(impl.segment_max(values, index, int(n)), flat)


def segment_softmax(logits, index, n, impl=None):
    """Softmax within each segment, stabilised by the per-segment maximum."""
    impl = backend(impl)
    logits, index, flat = _prep(logits, index, n)
    return _finish(impl.segment_softmax(logits, index, int(n)), flat)


def segment_softmax_grad(y, g, index, n, impl=None):
    impl = backend(impl)
    y, index, flat = _prep(y, index, n)
    g = np.ascontiguousarray(g, dtype=np.float64).reshape(y.shape)
    return _finish(impl.segment_softmax_grad(y, g, index, int(n)), flat)


def _index(a, bound, name):
    a = np.ascontiguousarray(a, dtype=np.int64)
    if a.size and (a.min() < 0 or a.max() >= bound):
        raise IndexError(f"{name} index out of range")
    return a


def _edge_args(feats, rel, att, src, typ, tgt, n):
    feats = np.ascontiguousarray(feats, dtype=np.float64)
    rel = np.ascontiguousarray(rel, dtype=np.float64)
    att = np.ascontiguousarray(att, dtype=np.float64)
    if att.ndim == 1:
        att = att.reshape(-1, 1)
    if feats.shape[1] != rel.shape[1] or feats.shape[1] % att.shape[1]:
        raise ValueError("feature/relation widths must match and split evenly into channels")
    n_edges = att.shape[0]
    if not (len(src) == len(typ) == len(tgt) == n_edges):
        raise ValueError("edge arrays differ in length")
    return (feats, rel, att, _index(src, feats.shape[0], "source"),
            _index(typ, rel.shape[0], "type"), _index(tgt, n, "target"))


def edge_aggregate(feats, rel, att, src, typ, tgt, n, impl=None):
    """``out[tgt[e], c] += att[e, c // dk] * feats[src[e], c] * rel[typ[e], c]``.

    ``feats`` is ``V x d`` laid out as ``K`` channel blocks of width
    ``dk = d / K``; ``att`` is ``E x K``.
    """
    impl = backend(impl)
    args = _edge_args(feats, rel, att, src, typ, tgt, n)
    return impl.edge_aggregate(*args, int(n))


def edge_aggregate_grad(g, feats, rel, att, src, typ, tgt, impl=None):
    """Gradients of :func:`edge_aggregate` w.r.t. ``(feats, rel, att)``."""
    impl = backend(impl)
    g = np.ascontiguousarray(g, dtype=np.float64)
    args = _edge_args(feats, rel, att, src, typ, tgt, g.shape[0])
    return impl.edge_aggregate_grad(g, *args)
