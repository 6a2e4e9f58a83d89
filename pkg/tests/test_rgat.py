import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import grad_rel_error, random_edges, small_model
from halalkg import tensor as T
from halalkg.errors import ShapeMismatch, UnknownRelation, WrongLayerCount
from halalkg.model import ModelParams
from halalkg.rgat import (
    GraphIndex,
    ReadoutParams,
    RgatLayerParams,
    attend_and_aggregate,
    attention_logits,
    attention_weights,
    encode,
    gcn_propagate,
    readout,
    residual_combine,
)


def _layer(seed, d, K):
    return RgatLayerParams.init(np.random.default_rng(seed), d, K)


def _as_lists(layer):
    return ([p.data for p in layer.proj], [w.data for w in layer.att_w],
            [b.data for b in layer.att_b], [r.data for r in layer.rel])


def test_zero_scorer_gives_bias():
    layer = _layer(0, 4, 2)
    layer.att_w[1].data[:] = 0.0
    layer.att_b[1].data[:] = 0.37
    g = GraphIndex.from_edges(random_edges(np.random.default_rng(1), 5), 5)
    feats = T.Tensor(np.random.default_rng(2).normal(size=(5, 4)))
    np.testing.assert_array_equal(attention_logits(layer, 1, g, feats).data, 0.37)


def test_single_self_loop_entity():
    layer = _layer(0, 4, 2)
    g = GraphIndex.from_edges([(0, 10, 0)], 1)
    feats = T.Tensor([[0.3, -0.2, 0.5, 1.0]])
    assert attention_logits(layer, 0, g, feats).shape == (1,)
    out = attend_and_aggregate(layer, g, feats).data[0]
    expected = []
    for k in range(2):
        ek = feats.data[0] @ layer.proj[k].data
        m = ek * layer.rel[k].data[10]
        expected.extend(np.where(m > 0, m, 0.01 * m))
    np.testing.assert_allclose(out, expected, atol=1e-15)


def test_identical_neighbours_split_attention_evenly():
    layer = _layer(4, 4, 2)
    feats = np.random.default_rng(0).normal(size=(3, 4))
    feats[2] = feats[1]
    g = GraphIndex.from_edges([(0, 0, 1), (0, 0, 2)], 3)
    # entities 1 and 2 have no in-edges of their own, so only score target 0
    g = GraphIndex(g.tgt, g.src, g.typ, 3)
    att = T.segment_softmax(attention_logits(layer, 0, g, T.Tensor(feats)), g.tgt, 1).data
    np.testing.assert_allclose(att, [0.5, 0.5], atol=1e-15)


def test_logits_match_scalar_oracle_seed3():
    rng = np.random.default_rng(3)
    layer = RgatLayerParams.init(rng, 4, 2)
    edges = random_edges(rng, 5)
    feats = rng.normal(size=(5, 4))
    g = GraphIndex.from_edges(edges, 5)
    for k in range(2):
        ours = attention_logits(layer, k, g, T.Tensor(feats)).data
        P, w, b, R = (x[k] for x in _as_lists(layer))
        ek = oracles.tolist(feats @ P)
        ref = [oracles.edge_logit(w.tolist(), float(b[0]), ek[v], R[t].tolist(), ek[u]) for v, t, u in edges]
        np.testing.assert_allclose(ours, ref, rtol=0, atol=1e-12)


def test_aggregate_matches_scalar_oracle_seed11():
    rng = np.random.default_rng(11)
    layer = RgatLayerParams.init(rng, 4, 2)
    edges = random_edges(rng, 6, n_types=2)
    feats = rng.normal(size=(6, 4))
    ours = attend_and_aggregate(layer, GraphIndex.from_edges(edges, 6), T.Tensor(feats)).data
    ref, att = oracles.layer_forward(*_as_lists(layer), edges, feats)
    np.testing.assert_allclose(ours, ref, rtol=0, atol=1e-12)
    np.testing.assert_allclose(attention_weights(layer, GraphIndex.from_edges(edges, 6), T.Tensor(feats)),
                               np.array(att).T, atol=1e-12)


def test_unknown_edge_type():
    layer = _layer(0, 4, 2)
    g = GraphIndex.from_edges([(0, 11, 0)], 1)
    with pytest.raises(UnknownRelation):
        attention_logits(layer, 0, g, T.Tensor(np.ones((1, 4))))


def test_channels_must_divide_width():
    with pytest.raises(ValueError):
        RgatLayerParams.init(np.random.default_rng(0), 6, 4)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.sampled_from([1, 2, 4]), st.integers(0, 10**6))
def test_attention_normalises_per_entity_and_channel(n, K, seed):
    rng = np.random.default_rng(seed)
    layer = RgatLayerParams.init(rng, 8, K)
    g = GraphIndex.from_edges(random_edges(rng, n, density=0.2), n)
    att = attention_weights(layer, g, T.Tensor(rng.normal(size=(n, 8)) * 3))
    sums = np.zeros((n, K))
    np.add.at(sums, g.tgt, att)
    np.testing.assert_allclose(sums, 1.0, atol=1e-9)


def test_residual_examples(rng):
    out, e0 = T.Tensor(rng.normal(size=(3, 4))), T.Tensor(rng.normal(size=(3, 4)))
    leaky = lambda x: np.where(x > 0, x, 0.01 * x)  # noqa: E731
    np.testing.assert_allclose(residual_combine(1.0, out, e0).data, leaky(e0.data), atol=1e-15)
    np.testing.assert_allclose(residual_combine(0.0, out, e0).data, leaky(out.data), atol=1e-15)
    np.testing.assert_allclose(residual_combine(0.5, e0, e0).data, leaky(e0.data), atol=1e-15)
    with pytest.raises(ValueError):
        residual_combine(1.5, out, e0)
    with pytest.raises(ShapeMismatch):
        residual_combine(0.5, out, T.Tensor(np.ones((2, 4))))


def test_readout_examples(rng):
    x = T.Tensor(rng.uniform(0, 1, (3, 4)))
    ident = ReadoutParams(T.Tensor(np.eye(4)), T.Tensor(np.zeros(4)))
    np.testing.assert_array_equal(readout(ident, [x]).data, x.data)
    zero = ReadoutParams(T.Tensor(np.zeros((8, 4))), T.Tensor(np.zeros(4)))
    assert np.all(readout(zero, [x, x]).data == 0)
    with pytest.raises(WrongLayerCount):
        readout(zero, [x])


def test_readout_matches_oracle(rng):
    params = ReadoutParams.init(rng, 4, 2)
    params.b.data[:] = rng.normal(size=4)
    xs = [rng.normal(size=(5, 4)) for _ in range(2)]
    ours = readout(params, [T.Tensor(x) for x in xs]).data
    ref = oracles.readout(params.W.data, params.b.data, [oracles.tolist(x) for x in xs])
    np.testing.assert_allclose(ours, ref, rtol=0, atol=1e-12)


def test_encode_matches_oracle():
    rng = np.random.default_rng(5)
    edges = random_edges(rng, 6)
    params = small_model(6, hidden=4, layers=2, channels=2, seed=5)
    ours = encode(params, GraphIndex.from_edges(edges, 6)).data
    np.testing.assert_allclose(ours, oracles.encode(params, edges), rtol=0, atol=1e-12)


def test_zero_layers_rejected():
    params = small_model(3, layers=0)
    with pytest.raises(WrongLayerCount):
        encode(params, GraphIndex.from_edges([(v, 10, v) for v in range(3)], 3))


def test_single_entity_graph_is_finite():
    params = small_model(1, hidden=8, layers=2, channels=4)
    out = encode(params, GraphIndex.from_edges([(0, 10, 0)], 1)).data
    assert out.shape == (1, 8) and np.isfinite(out).all()


def test_catalog_encode_is_deterministic(catalog_kg):
    digests = set()
    for _ in range(2):
        params = ModelParams.init(catalog_kg.numeric_matrix(), hidden=8, layers=2, channels=2, seed=9)
        out = encode(params, GraphIndex.from_kg(catalog_kg.message_passing_graph())).data
        digests.add(hashlib.sha256(out.tobytes()).hexdigest())
    assert len(digests) == 1


def test_end_to_end_gradient():
    rng = np.random.default_rng(8)
    edges = random_edges(rng, 7)
    params = small_model(7, hidden=4, layers=2, channels=2, seed=8)
    for b in [params.readout.b] + [b for layer in params.layers for b in layer.att_b]:
        b.data[:] = rng.normal(size=b.shape) * 0.1
    g = GraphIndex.from_edges(edges, 7)
    leaves = [t for name, t in params.named().items() if not name.startswith(("mlp.", "relspace."))]
    assert grad_rel_error(lambda: T.sum(encode(params, g)), leaves) < 1e-4


def test_relabeling_permutes_rows():
    rng = np.random.default_rng(2)
    n = 7
    edges = random_edges(rng, n)
    params = small_model(n, seed=2)
    base = encode(params, GraphIndex.from_edges(edges, n)).data
    perm = rng.permutation(n)
    moved = [(int(perm[v]), t, int(perm[u])) for v, t, u in edges]
    inv = np.argsort(perm)
    params.initial.entity_embed.data = params.initial.entity_embed.data[inv]
    params.initial.numeric = params.initial.numeric[inv]
    out = encode(params, GraphIndex.from_edges(moved, n)).data
    np.testing.assert_allclose(out[perm], base, atol=1e-13)


def test_locality_beyond_layer_count():
    n = 6
    path = [(v, 10, v) for v in range(n)]
    for v in range(n - 1):
        path += [(v + 1, 0, v), (v, 5, v + 1)]
    g = GraphIndex.from_edges(path, n)
    params = small_model(n, hidden=4, layers=2, channels=2, seed=4)
    before = encode(params, g).data
    params.initial.entity_embed.data[5] += 3.0
    after = encode(params, g).data
    # entity 5 is 3 hops from entity 2 and 5 hops from entity 0
    np.testing.assert_array_equal(after[:3], before[:3])
    assert not np.allclose(after[3:], before[3:])


def test_gcn_propagate_matches_dense_formula(rng):
    n = 5
    edges = random_edges(rng, n)
    g = GraphIndex.from_edges(edges, n)
    A = np.zeros((n, n))
    for v, _, u in edges:
        A[v, u] += 1.0
    d = A.sum(axis=1)
    P = A / np.sqrt(np.outer(d, d))
    x = rng.normal(size=(n, 3))
    np.testing.assert_allclose(gcn_propagate(g, T.Tensor(x)).data, P @ x, atol=1e-13)


def test_gcn_flag_changes_output():
    rng = np.random.default_rng(1)
    g = GraphIndex.from_edges(random_edges(rng, 5), 5)
    params = small_model(5, seed=1)
    a = encode(params, g).data
    b = encode(params, g, gcn_step=True).data
    assert not np.allclose(a, b)
