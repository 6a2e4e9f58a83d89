"""Pre-training triplet ranking, negative sampling and fine-tuning scoring."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import NoCandidates, ShapeMismatch, UnknownRelation
from .fusion import glorot
from .kgraph import CosmeticKG, RelationKind, Triple
from .tensor import Tensor

BCE_EPS = 1e-12


@dataclass
class RelationSpace:
    """Per forward relation: projection ``W_r`` (d x d) and translation ``r`` (d)."""

    W: list
    r: list

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int):
        n = len(RelationKind)
        bound = 1.0 / np.sqrt(hidden)
        return cls(
            [glorot(rng, hidden, hidden) for _ in range(n)],
            [Tensor(rng.uniform(-bound, bound, hidden), requires_grad=True) for _ in range(n)],
        )

    def _index(self, relation) -> int:
        idx = relation.index if isinstance(relation, RelationKind) else int(relation)
        if not 0 <= idx < len(self.W):
            raise UnknownRelation(relation)
        return idx

    def named(self, prefix: str = "relspace") -> dict[str, Tensor]:
        out = {}
        for rel, W, r in zip(RelationKind, self.W, self.r):
            out[f"{prefix}.{rel.value}.W"] = W
            out[f"{prefix}.{rel.value}.r"] = r
        return out


@dataclass
class MlpHead:
    """``2d -> d -> 1`` with leaky-relu hidden layer and sigmoid output."""

    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int):
        return cls(
            glorot(rng, 2 * hidden, hidden),
            Tensor(np.zeros(hidden), requires_grad=True),
            glorot(rng, hidden, 1),
            Tensor(np.zeros(1), requires_grad=True),
        )

    def named(self, prefix: str = "mlp") -> dict[str, Tensor]:
        return {f"{prefix}.W1": self.W1, f"{prefix}.b1": self.b1,
                f"{prefix}.W2": self.W2, f"{prefix}.b2": self.b2}


def transr_score(space: RelationSpace, h_vec: Tensor, relation, t_vec: Tensor) -> Tensor:
    """Squared distance ``||h W_r + r - t W_r||^2``; lower is more plausible."""
    i = space._index(relation)
    d = space.W[i].shape[0]
    if h_vec.shape != (d,) or t_vec.shape != (d,):
        raise ShapeMismatch(f"transr_score expects vectors of length {d}")
    diff = T.reshape(h_vec - t_vec, (1, d)) @ space.W[i]
    return T.l2_norm_sq(T.reshape(diff, (d,)) + space.r[i])


def transr_scores(space: RelationSpace, heads: Tensor, relations, tails: Tensor) -> Tensor:
    """Batched :func:`transr_score`; ``relations`` holds relation indices (0-4)."""
    relations = np.asarray(relations, dtype=np.int64)
    if heads.shape != tails.shape or heads.ndim != 2 or heads.shape[0] != len(relations):
        raise ShapeMismatch(f"transr_scores: heads {heads.shape}, tails {tails.shape}")
    parts, order = [], []
    diff = heads - tails
    for i in np.unique(relations):
        space._index(int(i))
        rows = np.flatnonzero(relations == i)
        proj = T.gather(diff, rows) @ space.W[i] + T.broadcast_rows(space.r[i], len(rows))
        parts.append(T.sum(proj * proj, axis=1))
        order.append(rows)
    scores = T.concat(parts) if len(parts) > 1 else parts[0]
    inverse = np.empty(len(relations), dtype=np.int64)
    inverse[np.concatenate(order)] = np.arange(len(relations))
    return T.gather(scores, inverse)


def ranking_term(pos_scores: Tensor, neg_scores: Tensor) -> Tensor:
    """Mean of ``-ln sigmoid(neg - pos)`` over aligned pairs."""
    if pos_scores.shape != neg_scores.shape:
        raise ShapeMismatch(f"pos {pos_scores.shape} vs neg {neg_scores.shape}")
    return -T.mean(T.log_sigmoid(neg_scores - pos_scores))


def l2_penalty(params) -> Tensor:
    terms = [T.l2_norm_sq(p) for p in params]
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def pretrain_loss(pos_scores: Tensor, neg_scores: Tensor, params, lam: float) -> Tensor:
    loss = ranking_term(pos_scores, neg_scores)
    params = list(params)
    if lam and params:
        loss = loss + l2_penalty(params) * lam
    return loss


def finetune_scores(space: RelationSpace, head: MlpHead, h_vecs: Tensor, t_vecs: Tensor) -> Tensor:
    """Probability for each (product, status) row pair, projected in the ``r_s`` space."""
    if h_vecs.shape != t_vecs.shape or h_vecs.ndim != 2:
        raise ShapeMismatch(f"finetune_scores: {h_vecs.shape} vs {t_vecs.shape}")
    W = space.W[RelationKind.HAS_STATUS.index]
    n = h_vecs.shape[0]
    x = T.concat([h_vecs @ W, t_vecs @ W], axis=1)
    hidden = T.leaky_relu(x @ head.W1 + T.broadcast_rows(head.b1, n))
    out = hidden @ head.W2 + T.broadcast_rows(head.b2, n)
    return T.sigmoid(T.reshape(out, (n,)))


def finetune_score(space: RelationSpace, head: MlpHead, h_vec: Tensor, t_vec: Tensor) -> Tensor:
    d = h_vec.shape[0]
    probs = finetune_scores(space, head, T.reshape(h_vec, (1, d)), T.reshape(t_vec, (1, d)))
    return T.reshape(probs, ())


def finetune_loss(preds: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy; predictions are clamped to ``[1e-12, 1 - 1e-12]``."""
    labels = np.asarray(labels, dtype=np.float64)
    if preds.shape != labels.shape:
        raise ShapeMismatch(f"preds {preds.shape} vs labels {labels.shape}")
    p = T.clamp(preds, BCE_EPS, 1.0 - BCE_EPS)
    y = Tensor(labels)
    ll = y * T.log(p) + (1.0 - y) * T.log(1.0 - p)
    return -T.mean(ll)


class NegativeSampler:
    """Tail corruption ``(h, r, t')`` with ``t'`` drawn from entities of ``t``'s kind."""

    def __init__(self, kg: CosmeticKG, seed: int = 0, max_retries: int = 20):
        self.kg = kg
        self.rng = np.random.default_rng(seed)
        self.max_retries = max_retries
        self._candidates = {k: np.asarray(v, dtype=np.int64) for k, v in kg.type_index.items()}

    def sample(self, triple: Triple) -> Triple:
        h, r, t = triple
        pool = self._candidates[self.kg.entity(t).kind]
        if len(pool) < 2:
            raise NoCandidates(f"only one {self.kg.entity(t).kind.name} entity to corrupt into")
        for _ in range(self.max_retries):
            cand = int(pool[self.rng.integers(len(pool))])
            if not self.kg.has_triple(h, r, cand):
                return Triple(h, r, cand)
        # may return a false negative, but never the input triple itself
        j = int(self.rng.integers(len(pool) - 1))
        cand = int(pool[j])
        if cand == t:
            cand = int(pool[len(pool) - 1])
        return Triple(h, r, cand)

    def sample_many(self, triples) -> list[Triple]:
        return [self.sample(t) for t in triples]


def sample_negative(sampler: NegativeSampler, triple: Triple) -> Triple:
    return sampler.sample(triple)
