"""Numpy implementations of the segment kernels (fallback for ``_ckernels``)."""
import numpy as np


def segment_sum(values, index, n):
    out = np.zeros((n, values.shape[1]), dtype=np.float64)
    np.add.at(out, index, values)
    return out


def segment_max(values, index, n):
    out = np.full((n, values.shape[1]), -np.inf, dtype=np.float64)
    np.maximum.at(out, index, values)
    return out


def segment_softmax(logits, index, n):
    shifted = logits - segment_max(logits, index, n)[index]
    y = np.exp(shifted)
    return y / segment_sum(y, index, n)[index]


def segment_softmax_grad(y, g, index, n):
    dot = segment_sum(y * g, index, n)
    return y * (g - dot[index])


def edge_aggregate(feats, rel, att, src, typ, tgt, n):
    dk = feats.shape[1] // att.shape[1]
    msg = feats[src] * rel[typ] * np.repeat(att, dk, axis=1)
    return segment_sum(msg, tgt, n)


def edge_aggregate_grad(g, feats, rel, att, src, typ, tgt):
    n_edges, n_chan = att.shape
    dk = feats.shape[1] // n_chan
    gt = g[tgt]
    fs = feats[src]
    rt = rel[typ]
    ga = gt * np.repeat(att, dk, axis=1)
    d_feats = segment_sum(ga * rt, src, feats.shape[0])
    d_rel = segment_sum(ga * fs, typ, rel.shape[0])
    d_att = (gt * fs * rt).reshape(n_edges, n_chan, dk).sum(axis=2)
    return d_feats, d_rel, d_att
