"""Pre-training, fine-tuning, ablations and grid search."""
from __future__ import annotations

import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T
from ..kgraph import CosmeticKG, StatusSplit, split_status_pairs
from ..model import ModelParams
from ..objectives import (
    NegativeSampler,
    finetune_loss,
    finetune_scores,
    l2_penalty,
    ranking_term,
    transr_scores,
)
from ..rgat import GraphIndex, encode
from .config import TrainConfig
from .metrics import MetricsReport, evaluate
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

ABLATIONS = ("no_pretrain", "no_numeric", "no_residual")
PRETRAIN_VAL_FRACTION = 0.05


@dataclass
class PretrainResult:
    params: ModelParams
    loss_curve: list  # mean ranking term per epoch, regulariser excluded
    val_curve: list
    best_epoch: int
    epochs_run: int


@dataclass
class FinetuneResult:
    params: ModelParams
    report: MetricsReport  # test split
    val_report: MetricsReport
    val_f1_curve: list
    epochs_run: int
    test_products: np.ndarray
    test_probs: np.ndarray
    test_labels: np.ndarray


@dataclass
class PipelineResult:
    config: TrainConfig
    split: StatusSplit
    finetune: FinetuneResult
    pretrain: PretrainResult | None = None
    wall_seconds: float = 0.0
    switches: frozenset = field(default_factory=frozenset)

    @property
    def report(self) -> MetricsReport:
        return self.finetune.report


def _triple_arrays(triples):
    arr = np.array([(h, r.index, t) for h, r, t in triples], dtype=np.int64).reshape(-1, 3)
    return arr[:, 0], arr[:, 1], arr[:, 2]


def init_params(kg: CosmeticKG, config: TrainConfig, numeric=None) -> ModelParams:
    return ModelParams.init(
        kg.numeric_matrix() if numeric is None else numeric,
        hidden=config.hidden_dim,
        layers=config.layers,
        channels=config.channels,
        residual_alpha=config.residual_alpha,
        gcn_step=config.gcn_step,
        seed=config.seed,
    )


def _ranking_loss(params, graph, heads, rels, tails, neg_tails, lam=0.0, reg_params=()):
    emb = encode(params, graph)
    pos = transr_scores(params.space, T.gather(emb, heads), rels, T.gather(emb, tails))
    neg = transr_scores(params.space, T.gather(emb, heads), rels, T.gather(emb, neg_tails))
    rank = ranking_term(pos, neg)
    if lam and reg_params:
        return rank, rank + l2_penalty(reg_params) * lam
    return rank, rank


def pretrain(kg: CosmeticKG, config: TrainConfig, params: ModelParams | None = None) -> PretrainResult:
    """Triplet-ranking pre-training over every triple of ``kg``.

    ``kg`` must already exclude the status edges of validation/test products.
    Propagation runs over ``kg.message_passing_graph()``; a seeded 5% of the
    triples (with fixed negatives) is held out of the gradient to pick the
    best epoch.
    """
    config.validate()
    params = params if params is not None else init_params(kg, config)
    graph = GraphIndex.from_kg(kg.message_passing_graph())
    rng = np.random.default_rng([config.seed, 1])
    sampler = NegativeSampler(kg, seed=config.seed)
    triples = list(kg.triples)
    if not triples:
        raise ValueError("pre-training needs at least one triple")
    order = rng.permutation(len(triples))
    n_val = int(PRETRAIN_VAL_FRACTION * len(triples))
    val = [triples[i] for i in order[:n_val]]
    train = [triples[i] for i in order[n_val:]]
    h_tr, r_tr, t_tr = _triple_arrays(train)
    if val:
        h_va, r_va, t_va = _triple_arrays(val)
        n_va = np.array([sampler.sample(t).tail for t in val], dtype=np.int64)
    encoder = params.encoder_parameters()
    state = AdamState()
    loss_curve, val_curve = [], []
    best, best_epoch, best_snap, since = np.inf, 0, params.snapshot(), 0
    for epoch in range(config.pretrain_epochs):
        perm = rng.permutation(len(train))
        batch_losses = []
        for start in range(0, len(train), config.batch_size):
            idx = perm[start:start + config.batch_size]
            neg = np.array([sampler.sample(train[i]).tail for i in idx], dtype=np.int64)
            T.zero_grads(encoder)
            rank, loss = _ranking_loss(params, graph, h_tr[idx], r_tr[idx], t_tr[idx], neg,
                                       config.lam, encoder)
            loss.backward()
            adam_step(state, encoder, config.learning_rate, allow_missing=True)
            batch_losses.append(rank.item())
        loss_curve.append(float(np.mean(batch_losses)))
        if val:
            with T.no_grad():
                score = _ranking_loss(params, graph, h_va, r_va, t_va, n_va)[0].item()
        else:
            score = loss_curve[-1]
        val_curve.append(score)
        log.info("pretrain epoch %d loss %.5f val %.5f", epoch, loss_curve[-1], score)
        if score < best:
            best, best_epoch, best_snap, since = score, epoch, params.snapshot(), 0
        else:
            since += 1
            if since > config.pretrain_patience:
                break
    params.restore(best_snap)
    return PretrainResult(params, loss_curve, val_curve, best_epoch, len(loss_curve))


def _pair_arrays(pairs):
    arr = np.array([(p.product, p.status, p.label) for p in pairs], dtype=np.int64).reshape(-1, 3)
    return arr[:, 0], arr[:, 1], arr[:, 2]


def predict_pairs(params: ModelParams, graph: GraphIndex, products, statuses, emb=None) -> np.ndarray:
    with T.no_grad():
        emb = encode(params, graph) if emb is None else emb
        probs = finetune_scores(params.space, params.head, T.gather(emb, products),
                                T.gather(emb, statuses))
    return probs.data.copy()


def finetune(kg: CosmeticKG, pretrained: ModelParams | None, config: TrainConfig,
             split: StatusSplit) -> FinetuneResult:
    """BCE training on the (product, halal) pairs of ``split.train``.

    Early stopping keeps the epoch with the best validation F1 (validation
    BCE breaks ties). ``pretrained=None`` trains from a fresh initialisation.
    """
    config.validate()
    params = pretrained.copy() if pretrained is not None else init_params(kg, config)
    graph = GraphIndex.from_kg(kg.message_passing_graph())
    rng = np.random.default_rng([config.seed, 2])
    p_tr, s_tr, y_tr = _pair_arrays(split.train)
    p_va, s_va, y_va = _pair_arrays(split.val)
    p_te, s_te, y_te = _pair_arrays(split.test)
    weights = params.parameters()
    state = AdamState()
    best_key, best_snap, since = None, params.snapshot(), 0
    f1_curve = []
    for epoch in range(config.max_epochs):
        perm = rng.permutation(len(p_tr))
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start:start + config.batch_size]
            T.zero_grads(weights)
            emb = encode(params, graph)
            probs = finetune_scores(params.space, params.head, T.gather(emb, p_tr[idx]),
                                    T.gather(emb, s_tr[idx]))
            finetune_loss(probs, y_tr[idx]).backward()
            adam_step(state, weights, config.learning_rate, allow_missing=True)
        val_probs = predict_pairs(params, graph, p_va, s_va)
        val_rep = evaluate(val_probs, y_va, config.threshold)
        with T.no_grad():
            val_bce = finetune_loss(T.Tensor(val_probs), y_va).item()
        f1_curve.append(val_rep.f1)
        key = (val_rep.f1, -val_bce)
        if best_key is None or key > best_key:
            best_key, best_snap, since = key, params.snapshot(), 0
        else:
            since += 1
        log.info("finetune epoch %d val f1 %.4f bce %.4f", epoch, val_rep.f1, val_bce)
        if since >= config.patience:
            break
    params.restore(best_snap)
    emb = None
    with T.no_grad():
        emb = encode(params, graph)
    val_probs = predict_pairs(params, graph, p_va, s_va, emb)
    test_probs = predict_pairs(params, graph, p_te, s_te, emb)
    return FinetuneResult(
        params,
        evaluate(test_probs, y_te, config.threshold),
        evaluate(val_probs, y_va, config.threshold),
        f1_curve,
        len(f1_curve),
        p_te,
        test_probs,
        y_te,
    )


def random_numeric(kg: CosmeticKG, seed: int) -> np.ndarray:
    """Numeric matrix with every attribute-bearing row replaced by U[0, 1) noise."""
    numeric = kg.numeric_matrix()
    rows = np.array([e.id for e in kg.entities if e.numeric_attrs is not None], dtype=np.int64)
    rng = np.random.default_rng([seed, 3])
    numeric[rows] = rng.uniform(0.0, 1.0, size=(len(rows), numeric.shape[1]))
    return numeric


def run_pipeline(kg: CosmeticKG, config: TrainConfig, switches=()) -> PipelineResult:
    """Split, pre-train (unless ``no_pretrain``) and fine-tune on a full graph."""
    switches = frozenset(switches)
    unknown = switches - set(ABLATIONS)
    if unknown:
        raise ValueError(f"unknown ablation switches {sorted(unknown)}")
    config.validate()
    started = time.perf_counter()
    if "no_residual" in switches:
        config = config.replace(residual_alpha=0.0)
    split = split_status_pairs(kg, config.split_ratios, config.effective_split_seed)
    train_kg = split.training_graph(kg)
    numeric = random_numeric(kg, config.seed) if "no_numeric" in switches else None
    params = init_params(kg, config, numeric)
    pre = None
    if "no_pretrain" not in switches:
        pre = pretrain(train_kg, config, params)
        params = pre.params
    fin = finetune(train_kg, params, config, split)
    return PipelineResult(config, split, fin, pre, time.perf_counter() - started, switches)


def ablate(kg: CosmeticKG, config: TrainConfig, switches=ABLATIONS) -> dict[str, MetricsReport]:
    """Test metrics of the full model plus one run per ablation switch."""
    out = {"full": run_pipeline(kg, config).report}
    for switch in switches:
        out[switch] = run_pipeline(kg, config, {switch}).report
    return out


@dataclass
class GridResult:
    best_config: TrainConfig
    rows: list  # dicts, one per configuration


def expand_grid(base: TrainConfig, grid: dict) -> list[TrainConfig]:
    if not grid:
        return [base]
    keys = sorted(grid)
    return [base.replace(**dict(zip(keys, values)))
            for values in itertools.product(*(grid[k] for k in keys))]


def _grid_row(kg, config, keys, train_fn):
    res = train_fn(kg, config)
    rep = res.report
    row = {k: getattr(config, k) for k in keys}
    row.update(val_f1=res.finetune.val_report.f1, test_accuracy=rep.accuracy,
               test_precision=rep.precision, test_recall=rep.recall, test_f1=rep.f1,
               epochs_run=res.finetune.epochs_run)
    return row


def grid_search(kg: CosmeticKG, base: TrainConfig, grid: dict, train_fn=run_pipeline,
                workers: int = 1) -> GridResult:
    """Exhaustive sweep; the configuration with the highest validation F1 wins."""
    configs = expand_grid(base, grid)
    if not configs:
        raise ValueError("empty grid")
    for c in configs:
        c.validate()
    keys = sorted(grid)
    if workers > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_grid_row, itertools.repeat(kg), configs,
                                 itertools.repeat(keys), itertools.repeat(train_fn)))
    else:
        rows = [_grid_row(kg, c, keys, train_fn) for c in configs]
    best = max(range(len(rows)), key=lambda i: (rows[i]["val_f1"], -i))
    return GridResult(configs[best], rows)
