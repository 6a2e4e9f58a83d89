import json
import os

import pytest

from conftest import CATALOG_INGREDIENTS, catalog_records
from halalkg.cli import blob_hash, main
from halalkg.trainer import TrainConfig

TINY = TrainConfig(hidden_dim=8, channels=2, layers=1, pretrain_epochs=2, max_epochs=3, patience=2,
                   batch_size=128, baseline_epochs=2, learning_rate=1e-2)


def _catalog_csvs(root):
    root.mkdir(exist_ok=True)
    lines = ["product,brand,category,ingredients,status"]
    for r in catalog_records():
        lines.append(f"{r.product},{r.brand},{r.category},{';'.join(r.ingredients)},{r.status}")
    (root / "products.csv").write_text("\n".join(lines) + "\n")
    cols = ["toxicity", "allergy", "cancer", "restriction", "min_score", "max_score"]
    rows = ["ingredient," + ",".join(cols)]
    for name, props in CATALOG_INGREDIENTS.items():
        rows.append(name + "," + ",".join(str(props[c]) for c in cols))
    (root / "ingredients.csv").write_text("\n".join(rows) + "\n")
    return root


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A small synthetic dataset plus a tiny training config."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["synth", "--out", str(data), "--n-products", "60", "--n-ingredients", "25",
                 "--n-brands", "3", "--n-categories", "2", "--max-ingredients", "4",
                 "--label-noise", "0", "--seed", "5", "--quiet"]) == 0
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY.to_dict()))
    return root, data, cfg


@pytest.fixture(scope="module")
def trained(workspace):
    root, data, cfg = workspace
    out = root / "run"
    common = ["--data", str(data), "--config", str(cfg), "--out", str(out), "--quiet"]
    assert main(["pretrain", *common]) == 0
    assert main(["finetune", *common, "--checkpoint", str(out / "pretrain")]) == 0
    return out, common


def _manifest(out):
    with open(os.path.join(out, "manifests.jsonl")) as fh:
        return [json.loads(line) for line in fh]


def test_build_kg_on_catalog(tmp_path):
    data = _catalog_csvs(tmp_path / "catalog")
    out = tmp_path / "kg"
    assert main(["build-kg", "--data", str(data), "--out", str(out), "--quiet"]) == 0
    stats = json.loads((out / "stats.json").read_text())
    assert stats["entities_per_kind"]["P"] == 3
    first = (out / "triples.tsv").read_bytes()
    assert main(["build-kg", "--data", str(data), "--out", str(out), "--quiet"]) == 0
    assert (out / "triples.tsv").read_bytes() == first
    records = _manifest(out)
    assert len(records) == 2
    assert records[0]["outputs"] == records[1]["outputs"]
    assert records[0]["outputs"][str(out / "triples.tsv")] == blob_hash(first)
    assert set(records[0]["inputs"]) == {str(data / "products.csv"), str(data / "ingredients.csv")}


def test_missing_input_is_a_usage_error(tmp_path, capsys):
    code = main(["build-kg", "--products", str(tmp_path / "nope.csv"),
                 "--ingredients", str(tmp_path / "nope2.csv"), "--out", str(tmp_path)])
    assert code == 2
    assert "nope.csv" in capsys.readouterr().err
    assert not (tmp_path / "manifests.jsonl").exists()


def test_invalid_config_lists_violations(workspace, tmp_path, capsys):
    _, data, _ = workspace
    code = main(["pretrain", "--data", str(data), "--out", str(tmp_path),
                 "--set", "hidden_dim=6", "--set", "channels=4", "--set", "learning_rate=-1"])
    assert code == 2
    err = capsys.readouterr().err
    assert err.count("  - ") == 2


def test_finetune_needs_a_checkpoint_choice(workspace, tmp_path):
    _, data, cfg = workspace
    assert main(["finetune", "--data", str(data), "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_seeded_runs_give_identical_reports(workspace, tmp_path):
    _, data, cfg = workspace
    reports = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["finetune", "--from-scratch", "--data", str(data), "--config", str(cfg),
                     "--seed", "1", "--out", str(out), "--quiet"]) == 0
        reports.append((out / "report.json").read_bytes())
        assert (out / "finetune" / "weights.bin").exists()
    assert reports[0] == reports[1]


def test_global_flags_after_or_before_command(workspace, tmp_path):
    _, data, cfg = workspace
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--seed", "3", "--out", str(a), "--quiet", "build-kg", "--data", str(data)]) == 0
    assert main(["build-kg", "--data", str(data), "--seed", "3", "--out", str(b), "--quiet"]) == 0
    assert (a / "triples.tsv").read_bytes() == (b / "triples.tsv").read_bytes()
    assert _manifest(a)[0]["seed"] == 3


def test_evaluate_and_predict_agree(trained):
    out, common = trained
    ckpt = str(out / "finetune")
    assert main(["evaluate", *common, "--checkpoint", ckpt, "--sweep"]) == 0
    ev = json.loads((out / "evaluate_test.json").read_text())
    report = json.loads((out / "report.json").read_text())
    for key in ("tp", "fp", "tn", "fn", "f1"):
        assert ev[key] == report[key]
    assert len(ev["threshold_sweep"]) == 19

    products = (out.parent / "data" / "products.csv").read_text().splitlines()
    name = products[1].split(",")[0]
    assert main(["predict", *common, "--checkpoint", ckpt, "--product", name]) == 0
    pred = json.loads((out / "predict.json").read_text())
    assert 0.0 < pred["p_halal"] < 1.0
    assert pred["label"] == ("halal" if pred["p_halal"] >= 0.5 else "haram")
    assert 1 <= len(pred["top_neighbors"]) <= 5
    weights = [n["attention"] for n in pred["top_neighbors"]]
    assert weights == sorted(weights, reverse=True)
    assert main(["predict", *common, "--checkpoint", ckpt, "--product", "No Such Thing"]) == 2


def test_new_product_prediction(trained, capsys):
    out, common = trained
    ckpt = str(out / "finetune")
    ings = (out.parent / "data" / "ingredients.csv").read_text().splitlines()[1:]
    halal = [row.split(",")[0] for row in ings if float(row.split(",")[4]) == 0.0][:3]
    record = f"Fresh Gel,brand_0,category_0,{';'.join(halal)}"
    assert main(["predict", *common, "--checkpoint", ckpt, "--new-product", record]) == 0
    pred = json.loads((out / "predict.json").read_text())
    assert pred["mode"] == "inductive" and pred["product"] == "Fresh Gel"
    assert capsys.readouterr().out == ""  # --quiet suppresses the JSON echo
    bad = "Odd Gel,brand_0,category_0,unobtainium"
    assert main(["predict", *common, "--checkpoint", ckpt, "--new-product", bad]) == 2


def test_manifest_is_append_only(trained):
    out, _ = trained
    records = _manifest(out)
    assert [r["command"] for r in records[:2]] == ["pretrain", "finetune"]
    for r in records:
        assert r["wall_seconds"] >= 0 and r["config"]["hidden_dim"] == 8
        assert all(len(h) == 64 for h in r["inputs"].values())


def test_gridsearch_writes_one_row_per_config(workspace, tmp_path):
    _, data, cfg = workspace
    grid = json.dumps({"hidden_dim": [8, 16]})
    assert main(["gridsearch", "--data", str(data), "--config", str(cfg), "--set", "pretrain_epochs=1",
                 "--set", "max_epochs=1", "--grid", grid, "--out", str(tmp_path), "--quiet"]) == 0
    lines = (tmp_path / "grid.csv").read_text().splitlines()
    assert len(lines) == 3
    assert main(["gridsearch", "--data", str(data), "--grid", "[1, 2]", "--out", str(tmp_path)]) == 2


def test_ablate_and_baseline_reports(workspace, tmp_path):
    _, data, cfg = workspace
    common = ["--data", str(data), "--config", str(cfg), "--set", "pretrain_epochs=1",
              "--set", "max_epochs=1", "--out", str(tmp_path), "--quiet"]
    assert main(["ablate", *common, "--switches", "no_residual"]) == 0
    report = json.loads((tmp_path / "ablation_report.json").read_text())
    assert set(report["results"]) == {"full", "no_residual"}
    assert main(["baseline", *common, "--kind", "transr"]) == 0
    assert json.loads((tmp_path / "baseline_transr.json").read_text())["kind"] == "transr"
