# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled segment kernels over edge lists.

All functions take 2-D C-contiguous float64 arrays and an int64 segment index
already validated by :mod:`halalkg.kernels`.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp, INFINITY

cnp.import_array()


def segment_sum(const double[:, ::1] values, const cnp.int64_t[::1] index, Py_ssize_t n):
    cdef Py_ssize_t n_rows = values.shape[0], width = values.shape[1]
    cdef Py_ssize_t e, c, t
    out = np.zeros((n, width), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for e in range(n_rows):
            t = index[e]
            for c in range(width):
                o[t, c] += values[e, c]
    return out


def segment_max(const double[:, ::1] values, const cnp.int64_t[::1] index, Py_ssize_t n):
    cdef Py_ssize_t n_rows = values.shape[0], width = values.shape[1]
    cdef Py_ssize_t e, c, t
    out = np.full((n, width), -np.inf, dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for e in range(n_rows):
            t = index[e]
            for c in range(width):
                if values[e, c] > o[t, c]:
                    o[t, c] = values[e, c]
    return out


def segment_softmax(const double[:, ::1] logits, const cnp.int64_t[::1] index, Py_ssize_t n):
    cdef Py_ssize_t n_rows = logits.shape[0], width = logits.shape[1]
    cdef Py_ssize_t e, c, t
    out = np.empty((n_rows, width), dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double[:, ::1] mx = np.full((n, width), -INFINITY, dtype=np.float64)
    cdef double[:, ::1] tot = np.zeros((n, width), dtype=np.float64)
    with nogil:
        for e in range(n_rows):
            t = index[e]
            for c in range(width):
                if logits[e, c] > mx[t, c]:
                    mx[t, c] = logits[e, c]
        for e in range(n_rows):
            t = index[e]
            for c in range(width):
                y[e, c] = exp(logits[e, c] - mx[t, c])
                tot[t, c] += y[e, c]
        for e in range(n_rows):
            t = index[e]
            for c in range(width):
                y[e, c] /= tot[t, c]
    return out


def segment_softmax_grad(const double[:, ::1] y, const double[:, ::1] g,
                         const cnp.int64_t[::1] index, Py_ssize_t n):
    cdef Py_ssize_t n_rows = y.shape[0], width = y.shape[1]
    cdef Py_ssize_t e, c, t
    out = np.empty((n_rows, width), dtype=np.float64)
    cdef double[:, ::1] dx = out
    cdef double[:, ::1] dot = np.zeros((n, width), dtype=np.float64)
    with nogil:
        for e in range(n_rows):
            t = index[e]
            for c in range(width):
                dot[t, c] += y[e, c] * g[e, c]
        for e in range(n_rows):
            t = index[e]
            for c in range(width):
                dx[e, c] = y[e, c] * (g[e, c] - dot[t, c])
    return out


def edge_aggregate(const double[:, ::1] feats, const double[:, ::1] rel, const double[:, ::1] att,
                   const cnp.int64_t[::1] src, const cnp.int64_t[::1] typ,
                   const cnp.int64_t[::1] tgt, Py_ssize_t n):
    cdef Py_ssize_t n_edges = src.shape[0], width = feats.shape[1], n_chan = att.shape[1]
    cdef Py_ssize_t dk = width // n_chan
    cdef Py_ssize_t e, k, c, s, r, t
    cdef double a
    out = np.zeros((n, width), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for e in range(n_edges):
            s = src[e]
            r = typ[e]
            t = tgt[e]
            for k in range(n_chan):
                a = att[e, k]
                for c in range(k * dk, (k + 1) * dk):
                    o[t, c] += a * feats[s, c] * rel[r, c]
    return out


def edge_aggregate_grad(const double[:, ::1] g, const double[:, ::1] feats,
                        const double[:, ::1] rel, const double[:, ::1] att,
                        const cnp.int64_t[::1] src, const cnp.int64_t[::1] typ,
                        const cnp.int64_t[::1] tgt):
    cdef Py_ssize_t n_edges = src.shape[0], width = feats.shape[1], n_chan = att.shape[1]
    cdef Py_ssize_t dk = width // n_chan
    cdef Py_ssize_t e, k, c, s, r, t
    cdef double a, acc, gm
    d_feats_arr = np.zeros((feats.shape[0], width), dtype=np.float64)
    d_rel_arr = np.zeros((rel.shape[0], width), dtype=np.float64)
    d_att_arr = np.empty((n_edges, n_chan), dtype=np.float64)
    cdef double[:, ::1] d_feats = d_feats_arr
    cdef double[:, ::1] d_rel = d_rel_arr
    cdef double[:, ::1] d_att = d_att_arr
    with nogil:
        for e in range(n_edges):
            s = src[e]
            r = typ[e]
            t = tgt[e]
            for k in range(n_chan):
                a = att[e, k]
                acc = 0.0
                for c in range(k * dk, (k + 1) * dk):
                    gm = g[t, c]
                    d_feats[s, c] += gm * a * rel[r, c]
                    d_rel[r, c] += gm * a * feats[s, c]
                    acc += gm * feats[s, c] * rel[r, c]
                d_att[e, k] = acc
    return d_feats_arr, d_rel_arr, d_att_arr
