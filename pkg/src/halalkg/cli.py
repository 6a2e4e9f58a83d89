"""Command-line entry point: ``halalkg <command> [options]``.

Every command writes its outputs under ``--out`` and appends one line to
``<out>/manifests.jsonl`` recording inputs, config, seed, output hashes and
timing. Reports themselves contain no timestamps, so identical inputs give
byte-identical reports.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone

import numpy as np

from . import __version__
from . import tensor as T
from .errors import (
    ConfigInvalid,
    HalalKGError,
    HeaderMismatch,
    InsufficientData,
    UnknownIngredient,
    UnknownProduct,
)
from .kgraph import (
    STATUS_HALAL,
    CosmeticKG,
    EntityKind,
    ProductRecord,
    build_from_records,
    split_status_pairs,
)
from .model import ModelParams
from .rgat import GraphIndex, encode
from .synthdata import SynthConfig, generate, ingest_csv, read_ingredient_csv, write_csvs
from .trainer import (
    ABLATIONS,
    TrainConfig,
    evaluate,
    finetune,
    grid_search,
    pretrain,
    run_pipeline,
    train_baseline,
)
from .trainer.loop import init_params, predict_pairs, random_numeric
from .trainer.metrics import threshold_sweep

log = logging.getLogger("halalkg")

USAGE_ERRORS = (ConfigInvalid, HeaderMismatch, InsufficientData, UnknownProduct,
                UnknownIngredient, FileNotFoundError, IsADirectoryError, ValueError)


class UsageError(Exception):
    """Bad flag combination detected after parsing."""


# hashing and manifests

def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def blob_hash(data: bytes) -> str:
    """Content hash in the style of ``git hash-object``."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _output_hashes(paths) -> dict[str, str]:
    out = {}
    for path in paths:
        if os.path.isdir(path):
            for root, _, files in os.walk(path):
                for name in sorted(files):
                    full = os.path.join(root, name)
                    with open(full, "rb") as fh:
                        out[full] = blob_hash(fh.read())
        elif os.path.exists(path):
            with open(path, "rb") as fh:
                out[path] = blob_hash(fh.read())
    return dict(sorted(out.items()))


def write_json(path, payload) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def append_manifest(out_dir, record: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "manifests.jsonl"), "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


# shared argument handling

def _config(args) -> TrainConfig:
    config = TrainConfig.load(args.config) if args.config else TrainConfig()
    changes = {}
    for item in args.set or ():
        key, sep, raw = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        try:
            changes[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            changes[key.strip()] = raw
    if args.seed is not None:
        changes["seed"] = args.seed
    if changes:
        data = config.to_dict()
        data.update(changes)
        config = TrainConfig.from_dict(data)
    return config.validate()


def _data_paths(args) -> tuple[str, str]:
    products = args.products or (os.path.join(args.data, "products.csv") if args.data else None)
    ingredients = args.ingredients or (os.path.join(args.data, "ingredients.csv") if args.data else None)
    if not products or not ingredients:
        raise UsageError("give --data DIR or both --products and --ingredients")
    for path in (products, ingredients):
        if not os.path.isfile(path):
            raise FileNotFoundError(f"no such file: {path}")
    return products, ingredients


def _load_kg(args) -> CosmeticKG:
    products, ingredients = _data_paths(args)
    kg, diagnostics = ingest_csv(products, ingredients, property_nodes=args.property_nodes)
    args._inputs = {products: file_digest(products), ingredients: file_digest(ingredients)}
    args._diagnostics = diagnostics
    return kg


def _metrics_report(config: TrainConfig, split, report, epochs_run: int, **extra) -> dict:
    out = {"config": config.to_dict(), "split_sizes": split.sizes(), "epochs_run": epochs_run}
    out.update(report.to_dict())
    out.update(extra)
    return out


# commands

def cmd_synth(args):
    cfg = SynthConfig(
        n_products=args.n_products,
        n_ingredients=args.n_ingredients,
        n_brands=args.n_brands,
        n_categories=args.n_categories,
        ingredients_per_product=(args.min_ingredients, args.max_ingredients),
        haram_ingredient_fraction=args.haram_fraction,
        label_noise=args.label_noise,
        seed=args.seed if args.seed is not None else 42,
    ).validate()
    data = generate(cfg)
    paths = write_csvs(data, args.out)
    return list(paths.values()), {"stats": data.stats}


def cmd_build_kg(args):
    kg = _load_kg(args)
    tsv = os.path.join(args.out, "triples.tsv")
    os.makedirs(args.out, exist_ok=True)
    with open(tsv, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(kg.to_tsv())
    stats = dict(kg.stats(), diagnostics=args._diagnostics)
    return [tsv, write_json(os.path.join(args.out, "stats.json"), stats)], {"stats": kg.stats()}


def cmd_pretrain(args):
    kg = _load_kg(args)
    config = _config(args)
    split = split_status_pairs(kg, config.split_ratios, config.effective_split_seed)
    result = pretrain(split.training_graph(kg), config, init_params(kg, config))
    ckpt = os.path.join(args.out, "pretrain")
    result.params.save(ckpt, {"config": config.to_dict(), "stage": "pretrain"})
    report = {
        "config": config.to_dict(),
        "split_sizes": split.sizes(),
        "loss_curve": result.loss_curve,
        "val_curve": result.val_curve,
        "best_epoch": result.best_epoch,
        "epochs_run": result.epochs_run,
    }
    return [ckpt, write_json(os.path.join(args.out, "pretrain_report.json"), report)], {}


def _load_params(path, kg: CosmeticKG) -> tuple[ModelParams, dict]:
    if not os.path.isfile(os.path.join(path, "manifest.json")):
        raise FileNotFoundError(f"no checkpoint at {path}")
    return ModelParams.load(path, kg.numeric_matrix())


def cmd_finetune(args):
    if bool(args.checkpoint) == bool(args.from_scratch):
        raise UsageError("finetune needs exactly one of --checkpoint or --from-scratch")
    kg = _load_kg(args)
    config = _config(args)
    split = split_status_pairs(kg, config.split_ratios, config.effective_split_seed)
    params = None
    if args.checkpoint:
        params, _ = _load_params(args.checkpoint, kg)
    result = finetune(split.training_graph(kg), params, config, split)
    ckpt = os.path.join(args.out, "finetune")
    result.params.save(ckpt, {"config": config.to_dict(), "stage": "finetune"})
    report = _metrics_report(config, split, result.report, result.epochs_run,
                             val_f1_curve=result.val_f1_curve)
    return [ckpt, write_json(os.path.join(args.out, "report.json"), report)], {}


def cmd_evaluate(args):
    kg = _load_kg(args)
    params, meta = _load_params(args.checkpoint, kg)
    config = _config(args) if args.config or args.seed is not None or args.set else \
        TrainConfig.from_dict(meta["config"])
    split = split_status_pairs(kg, config.split_ratios, config.effective_split_seed)
    graph = GraphIndex.from_kg(kg.message_passing_graph())
    pairs = {"train": split.train, "val": split.val, "test": split.test}[args.split]
    products = np.array([p.product for p in pairs], dtype=np.int64)
    labels = np.array([p.label for p in pairs], dtype=np.int64)
    probs = predict_pairs(params, graph, products, np.full(len(products), kg.status_ids()[0]))
    report = _metrics_report(config, split, evaluate(probs, labels, config.threshold), 0,
                             evaluated_split=args.split)
    if args.sweep:

        report["threshold_sweep"] = [
            {"threshold": t, **r.to_dict()} for t, r in threshold_sweep(probs, labels)
        ]
    return [write_json(os.path.join(args.out, f"evaluate_{args.split}.json"), report)], {}


def _parse_grid(text: str) -> dict:
    if os.path.isfile(text):
        with open(text, encoding="utf-8") as fh:
            text = fh.read()
    try:
        grid = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"grid is not valid JSON ({exc})") from None
    if not isinstance(grid, dict) or not grid or not all(isinstance(v, list) and v for v in grid.values()):
        raise ConfigInvalid("grid must map config keys to non-empty lists")
    return grid


def cmd_gridsearch(args):
    kg = _load_kg(args)
    config = _config(args)
    grid = _parse_grid(args.grid)
    result = grid_search(kg, config, grid, workers=args.workers)
    table = os.path.join(args.out, "grid.csv")
    os.makedirs(args.out, exist_ok=True)
    with open(table, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(result.rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(result.rows)
    report = {"grid": grid, "best_config": result.best_config.to_dict(), "rows": result.rows}
    return [table, write_json(os.path.join(args.out, "grid_report.json"), report)], {}


def cmd_ablate(args):
    kg = _load_kg(args)
    config = _config(args)
    switches = args.switches or list(ABLATIONS)
    bad = sorted(set(switches) - set(ABLATIONS))
    if bad:
        raise UsageError(f"unknown ablation switches {bad}")
    runs = {"full": run_pipeline(kg, config)}
    for switch in switches:
        runs[switch] = run_pipeline(kg, config, {switch})
    report = {
        "config": config.to_dict(),
        "results": {
            name: _metrics_report(res.config, res.split, res.report, res.finetune.epochs_run)
            for name, res in runs.items()
        },
    }
    return [write_json(os.path.join(args.out, "ablation_report.json"), report)], {}


def cmd_baseline(args):
    kg = _load_kg(args)
    config = _config(args)
    split = split_status_pairs(kg, config.split_ratios, config.effective_split_seed)
    result = train_baseline(args.kind, split.training_graph(kg), config, split)
    report = _metrics_report(config, split, result.report, result.epochs_run, kind=args.kind)
    return [write_json(os.path.join(args.out, f"baseline_{args.kind}.json"), report)], {}


def _parse_record(text: str) -> ProductRecord:
    """``name,brand,category,ing1;ing2;...`` (the product CSV columns without status)."""
    row = next(csv.reader([text]))
    if len(row) != 4 or not all(c.strip() for c in row[:3]):
        raise UsageError("--new-product expects 'name,brand,category,ing1;ing2;...'")
    ings = tuple(i.strip() for i in row[3].split(";") if i.strip())
    return ProductRecord(row[0].strip(), row[1].strip(), row[2].strip(), ings, {}, None)


def attach_product(kg: CosmeticKG, records, ingredient_props, record: ProductRecord,
                   property_nodes: str = "auto") -> CosmeticKG:
    """Rebuild the graph with ``record`` appended; existing entity ids are unchanged."""
    known = {e.name.casefold() for e in kg.entities if e.kind is EntityKind.INGREDIENT}
    missing = [i for i in record.ingredients if i.casefold() not in known]
    if missing:
        raise UnknownIngredient(f"ingredients not in the graph: {missing}")
    if kg.find(EntityKind.COSMETIC, record.product) is not None:
        raise UsageError(f"product {record.product!r} already exists; predict it by --product")
    folded = {k.casefold(): v for k, v in ingredient_props.items()}
    record = ProductRecord(record.product, record.brand, record.category, record.ingredients,
                           {i: folded[i.casefold()] for i in record.ingredients if i.casefold() in folded},
                           None)
    extended = build_from_records(list(records) + [record], property_nodes=property_nodes)
    for old, new in zip(kg.entities, extended.entities):
        if (old.kind, old.name) != (new.kind, new.name):
            raise RuntimeError("attaching the product reordered existing entities")
    return extended


def _extend_params(params: ModelParams, kg: CosmeticKG, extended: CosmeticKG) -> ModelParams:
    """Initial embeddings for the new rows: the mean embedding of their entity kind."""
    params = params.copy()
    old = params.initial.entity_embed.data
    rows = [old]
    for ent in extended.entities[kg.n_entities:]:
        same = [e.id for e in kg.entities if e.kind is ent.kind]
        rows.append(old[same].mean(axis=0, keepdims=True) if same else np.zeros((1, old.shape[1])))
    params.initial.entity_embed = T.Tensor(np.vstack(rows))
    params.initial.numeric = extended.numeric_matrix()
    return params


def _records_from_csv(products_csv, ingredients_csv):
    diag: list[str] = []
    props = read_ingredient_csv(ingredients_csv, diag)
    folded = {k.casefold(): v for k, v in props.items()}
    records = []
    with open(products_csv, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            fields = {k: (v or "").strip() for k, v in row.items() if k}
            ings = tuple(i.strip() for i in fields.get("ingredients", "").split(";") if i.strip())
            status = fields.get("status", "").casefold() or None
            records.append(ProductRecord(
                fields.get("product", ""), fields.get("brand", ""), fields.get("category", ""), ings,
                {i: folded[i.casefold()] for i in ings if i.casefold() in folded}, status))
    return records, props


def cmd_predict(args):
    if bool(args.product) == bool(args.new_product):
        raise UsageError("predict needs exactly one of --product or --new-product")
    kg = _load_kg(args)
    params, meta = _load_params(args.checkpoint, kg)
    threshold = meta.get("config", {}).get("threshold", 0.5)
    if args.product:
        pid = kg.find(EntityKind.COSMETIC, args.product)
        if pid is None:
            raise UnknownProduct(args.product)
        graph_kg, name, mode = kg, args.product, "transductive"
    else:
        record = _parse_record(args.new_product)
        if _has_invalid_rows(args._diagnostics):
            log.warning("input CSVs produced diagnostics; the attached graph may differ")
        products, ingredients = _data_paths(args)
        records, props = _records_from_csv(products, ingredients)
        graph_kg = attach_product(kg, records, props, record, args.property_nodes)
        params = _extend_params(params, kg, graph_kg)
        pid = graph_kg.lookup(EntityKind.COSMETIC, record.product)
        name, mode = record.product, "inductive"
    graph = GraphIndex.from_kg(graph_kg.message_passing_graph())
    trace: list = []
    with T.no_grad():
        emb = encode(params, graph, trace=trace)
    halal = graph_kg.status_ids()[0]
    prob = float(predict_pairs(params, graph, np.array([pid]), np.array([halal]), emb)[0])
    att = trace[-1].mean(axis=1)
    edges = np.flatnonzero((graph.tgt == pid) & (graph.src != pid))
    top = edges[np.lexsort((graph.src[edges], -att[edges]))][:5]
    neighbors = [
        {"entity": graph_kg.entities[int(graph.src[e])].name,
         "kind": graph_kg.entities[int(graph.src[e])].kind.value,
         "edge_type": int(graph.typ[e]),
         "attention": float(att[e])}
        for e in top
    ]
    report = {
        "product": name,
        "mode": mode,
        "p_halal": prob,
        "label": STATUS_HALAL if prob >= threshold else "haram",
        "threshold": threshold,
        "top_neighbors": neighbors,
    }
    if not args.quiet:
        print(json.dumps(report, indent=2, sort_keys=True))
    return [write_json(os.path.join(args.out, "predict.json"), report)], {}


def _has_invalid_rows(diagnostics) -> bool:
    return any("skipped" in d for d in diagnostics)


# parser

def _add_data_args(p):
    p.add_argument("--data", help="directory holding products.csv and ingredients.csv")
    p.add_argument("--products", help="product CSV")
    p.add_argument("--ingredients", help="ingredient property CSV")
    p.add_argument("--property-nodes", default="auto", choices=("auto", "shared", "per_ingredient"))


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="versioned JSON training config")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default: runs)")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    common.add_argument("--set", action="append", default=argparse.SUPPRESS, metavar="KEY=VALUE",
                        help="override one config field (JSON value)")

    parser = argparse.ArgumentParser(prog="halalkg", description="Halal status prediction on cosmetic knowledge graphs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", default=None, help="versioned JSON training config")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default="runs", help="output directory")
    parser.add_argument("--quiet", action="store_true")
    parser.add_argument("--set", action="append", default=None, metavar="KEY=VALUE")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic benchmark as CSVs")
    defaults = SynthConfig()
    p.add_argument("--n-products", type=int, default=defaults.n_products)
    p.add_argument("--n-ingredients", type=int, default=defaults.n_ingredients)
    p.add_argument("--n-brands", type=int, default=defaults.n_brands)
    p.add_argument("--n-categories", type=int, default=defaults.n_categories)
    p.add_argument("--min-ingredients", type=int, default=defaults.ingredients_per_product[0])
    p.add_argument("--max-ingredients", type=int, default=defaults.ingredients_per_product[1])
    p.add_argument("--haram-fraction", type=float, default=defaults.haram_ingredient_fraction)
    p.add_argument("--label-noise", type=float, default=defaults.label_noise)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-kg", parents=[common], help="ingest CSVs, write triples.tsv and stats.json")
    _add_data_args(p)
    p.set_defaults(func=cmd_build_kg)

    p = sub.add_parser("pretrain", parents=[common], help="self-supervised triple ranking")
    _add_data_args(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", parents=[common], help="train the halal classifier")
    _add_data_args(p)
    p.add_argument("--checkpoint", help="pre-trained checkpoint directory")
    p.add_argument("--from-scratch", action="store_true", help="skip pre-training")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", parents=[common], help="score a fine-tuned checkpoint on a split")
    _add_data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--sweep", action="store_true", help="add a threshold sweep diagnostic")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gridsearch", parents=[common], help="exhaustive hyper-parameter sweep")
    _add_data_args(p)
    p.add_argument("--grid", required=True, help='JSON object or file, e.g. {"hidden_dim": [16, 32]}')
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("ablate", parents=[common], help="full model against ablated variants")
    _add_data_args(p)
    p.add_argument("--switches", nargs="*", choices=ABLATIONS)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("baseline", parents=[common], help="TransE / TransR status baselines")
    _add_data_args(p)
    p.add_argument("--kind", default="transe", choices=("transe", "transr"))
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("predict", parents=[common], help="p(halal) for a known or new product")
    _add_data_args(p)
    p.add_argument("--checkpoint", required=True, help="fine-tuned checkpoint directory")
    p.add_argument("--product", help="name of a product in the graph")
    p.add_argument("--new-product", metavar="RECORD",
                   help="unseen product as 'name,brand,category,ing1;ing2;...'")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args._inputs, args._diagnostics = {}, []
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    try:
        outputs, extra = args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"halalkg: error: {exc}", file=sys.stderr)
        return 2
    except ConfigInvalid as exc:
        print("halalkg: invalid configuration:", file=sys.stderr)
        for problem in exc.violations:
            print(f"  - {problem}", file=sys.stderr)
        return 2
    except USAGE_ERRORS as exc:
        print(f"halalkg: error: {exc}", file=sys.stderr)
        return 2
    except (HalalKGError, OSError, RuntimeError, ArithmeticError) as exc:
        print(f"halalkg: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    record = {
        "command": args.command,
        "argv": list(sys.argv[1:] if argv is None else argv),
        "seed": args.seed,
        "config": _config(args).to_dict() if args.command not in ("synth", "build-kg") else None,
        "inputs": args._inputs,
        "outputs": _output_hashes(outputs),
        "started": started.isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
        "wall_seconds": time.perf_counter() - t0,
        "version": __version__,
    }
    record.update(extra)
    append_manifest(args.out, record)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
