"""TransE and TransR baselines scored on the same status splits."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..kgraph import CosmeticKG, RelationKind, StatusSplit
from ..objectives import NegativeSampler
from ..tensor import Tensor
from .config import TrainConfig
from .metrics import MetricsReport, evaluate
from .optim import AdamState, adam_step


@dataclass
class BaselineParams:
    kind: str
    entity: Tensor  # |V| x d
    relation: Tensor  # 5 x d
    projection: list | None = None  # TransR: 5 tensors d x d

    def parameters(self) -> list[Tensor]:
        return [self.entity, self.relation] + list(self.projection or [])

    def snapshot(self):
        return [p.data.copy() for p in self.parameters()]

    def restore(self, snap) -> None:
        for p, s in zip(self.parameters(), snap):
            p.data = s.copy()


@dataclass
class BaselineResult:
    params: BaselineParams
    report: MetricsReport
    val_report: MetricsReport
    loss_curve: list
    epochs_run: int


def init_baseline(kind: str, n_entities: int, hidden: int, seed: int) -> BaselineParams:
    kind = kind.lower()
    if kind not in ("transe", "transr"):
        raise ValueError(f"unknown baseline {kind!r}")
    rng = np.random.default_rng([seed, 4])
    bound = 6.0 / np.sqrt(hidden)
    ent = rng.uniform(-bound, bound, (n_entities, hidden))
    ent /= np.linalg.norm(ent, axis=1, keepdims=True)
    rel = rng.uniform(-bound, bound, (len(RelationKind), hidden))
    rel /= np.linalg.norm(rel, axis=1, keepdims=True)
    proj = None
    if kind == "transr":
        proj = [Tensor(np.eye(hidden), requires_grad=True) for _ in RelationKind]
    return BaselineParams(kind, Tensor(ent, requires_grad=True), Tensor(rel, requires_grad=True), proj)


def distances(params: BaselineParams, heads, rels, tails) -> Tensor:
    """Squared distance ``||M_r h + r - M_r t||^2`` (``M_r = I`` for TransE)."""
    heads, rels, tails = (np.asarray(a, dtype=np.int64) for a in (heads, rels, tails))
    diff = T.gather(params.entity, heads) - T.gather(params.entity, tails)
    if params.projection is None:
        x = diff + T.gather(params.relation, rels)
        return T.sum(x * x, axis=1)
    parts, order = [], []
    for i in np.unique(rels):
        rows = np.flatnonzero(rels == i)
        x = (T.gather(diff, rows) @ params.projection[i]
             + T.broadcast_rows(_row(params.relation, i), len(rows)))
        parts.append(T.sum(x * x, axis=1))
        order.append(rows)
    out = T.concat(parts) if len(parts) > 1 else parts[0]
    inverse = np.empty(len(rels), dtype=np.int64)
    inverse[np.concatenate(order)] = np.arange(len(rels))
    return T.gather(out, inverse)


def _row(matrix: Tensor, i: int) -> Tensor:
    return T.reshape(T.gather(matrix, np.array([i])), (matrix.shape[1],))


def margin_loss(pos: Tensor, neg: Tensor, margin: float) -> Tensor:
    return T.mean(T.relu(pos - neg + margin))


def _renormalize(params: BaselineParams) -> None:
    norms = np.linalg.norm(params.entity.data, axis=1, keepdims=True)
    if params.kind == "transe":
        params.entity.data = params.entity.data / np.maximum(norms, 1e-12)
    else:
        params.entity.data = params.entity.data / np.maximum(norms, 1.0)


def status_probabilities(params: BaselineParams, kg: CosmeticKG, products) -> np.ndarray:
    """``sigmoid(d_haram - d_halal)``: above 0.5 exactly when halal is the closer status."""
    products = np.asarray(products, dtype=np.int64)
    halal, haram = kg.status_ids()
    rs = np.full(len(products), RelationKind.HAS_STATUS.index)
    with T.no_grad():
        d_halal = distances(params, products, rs, np.full(len(products), halal)).data
        d_haram = distances(params, products, rs, np.full(len(products), haram)).data
    return np.exp(-np.logaddexp(0.0, d_halal - d_haram))


def train_baseline(kind: str, kg: CosmeticKG, config: TrainConfig, split: StatusSplit) -> BaselineResult:
    """Margin-ranking training, then status prediction by the closer status entity.

    ``kg`` is the training graph (validation/test status edges removed). The
    epoch with the best validation F1 is kept, mirroring the main model.
    """
    config.validate()
    params = init_baseline(kind, kg.n_entities, config.hidden_dim, config.seed)
    triples = list(kg.triples)
    if config.baseline_mode == "status":
        triples = [t for t in triples if t.relation is RelationKind.HAS_STATUS]
    arr = np.array([(h, r.index, t) for h, r, t in triples], dtype=np.int64)
    sampler = NegativeSampler(kg, seed=config.seed)
    rng = np.random.default_rng([config.seed, 5])
    val_p = np.array([p.product for p in split.val], dtype=np.int64)
    val_y = np.array([p.label for p in split.val], dtype=np.int64)
    test_p = np.array([p.product for p in split.test], dtype=np.int64)
    test_y = np.array([p.label for p in split.test], dtype=np.int64)
    weights = params.parameters()
    state = AdamState()
    best_key, best_snap, since, curve = None, params.snapshot(), 0, []
    for epoch in range(config.baseline_epochs):
        perm = rng.permutation(len(arr))
        losses = []
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start:start + config.batch_size]
            neg = np.array([sampler.sample(triples[i]).tail for i in idx], dtype=np.int64)
            h, r, t = arr[idx, 0], arr[idx, 1], arr[idx, 2]
            T.zero_grads(weights)
            loss = margin_loss(distances(params, h, r, t), distances(params, h, r, neg), config.margin)
            loss.backward()
            adam_step(state, weights, config.learning_rate, allow_missing=True)
            _renormalize(params)
            losses.append(loss.item())
        curve.append(float(np.mean(losses)))
        rep = evaluate(status_probabilities(params, kg, val_p), val_y, config.threshold)
        key = (rep.f1, rep.accuracy)
        if best_key is None or key > best_key:
            best_key, best_snap, since = key, params.snapshot(), 0
        else:
            since += 1
            if since >= config.patience:
                break
    params.restore(best_snap)
    return BaselineResult(
        params,
        evaluate(status_probabilities(params, kg, test_p), test_y, config.threshold),
        evaluate(status_probabilities(params, kg, val_p), val_y, config.threshold),
        curve,
        len(curve),
    )
