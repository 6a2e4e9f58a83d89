import json

import pytest

from conftest import CATALOG_INGREDIENTS, catalog_records
from halalkg.errors import ConfigInvalid, HeaderMismatch
from halalkg.kgraph import EntityKind, RelationKind, build_from_records
from halalkg.synthdata import SynthConfig, generate, ingest_csv, rule_oracle, write_csvs

SMALL = SynthConfig(n_products=60, n_ingredients=25, n_brands=3, n_categories=2,
                    ingredients_per_product=(1, 5), seed=3)


def test_config_validation():
    with pytest.raises(ConfigInvalid) as err:
        SynthConfig(n_products=0, ingredients_per_product=(5, 2), haram_ingredient_fraction=1.0).validate()
    assert len(err.value.violations) == 3


def test_at_least_one_haram_ingredient():
    data = generate(SynthConfig(n_products=10, n_ingredients=10, ingredients_per_product=(1, 3),
                                haram_ingredient_fraction=0.001))
    assert len(data.haram_ingredients) == 1


def _users(data, ingredient):
    return {r.product for r in data.records if ingredient in r.ingredients}


def test_products_with_the_haram_ingredient_are_exactly_haram():
    # find a seed whose single haram ingredient appears in exactly three products
    for seed in range(200):
        data = generate(SynthConfig(n_products=30, n_ingredients=20, n_brands=2, n_categories=2,
                                    ingredients_per_product=(1, 3), haram_ingredient_fraction=0.05,
                                    seed=seed))
        (bad,) = data.haram_ingredients
        if len(_users(data, bad)) == 3:
            break
    else:
        pytest.fail("no seed gave exactly three users")
    haram = {p for p, s in data.stored_status.items() if s == "haram"}
    assert haram == _users(data, bad)


def test_rule_oracle_agrees_with_generator():
    data = generate(SMALL)
    oracle = rule_oracle(data.kg)
    by_name = {data.kg.entities[p].name: s for p, s in oracle.items()}
    assert by_name == data.true_status
    halal, haram = data.kg.status_ids()
    for p, s in data.kg.status_of().items():
        assert (s == haram) == (by_name[data.kg.entities[p].name] == "haram")


def test_restriction_marks_haram_ingredients():
    data = generate(SMALL)
    for name, props in data.ingredient_props.items():
        assert props["restriction"] == (1.0 if name in data.haram_ingredients else 0.0)
        assert 0.0 <= props["min_score"] <= props["max_score"] <= 1.0


def test_label_noise_flips_some_labels():
    data = generate(SynthConfig(n_products=400, n_ingredients=50, label_noise=0.2, seed=1))
    flipped = sum(data.true_status[p] != data.stored_status[p] for p in data.true_status)
    assert 40 < flipped < 120


def test_generation_is_deterministic():
    a, b = generate(SMALL), generate(SMALL)
    assert a.kg.to_tsv() == b.kg.to_tsv() and a.stats == b.stats


def test_default_benchmark_stats():
    data = generate(SynthConfig())
    assert data.stats["entities_per_kind"]["P"] == 2000
    assert data.stats["n_haram_ingredients"] == 30
    rule = rule_oracle(data.kg)
    assert data.stats["haram_rate"] == sum(s == "haram" for s in rule.values()) / 2000


def test_csv_round_trip(tmp_path):
    data = generate(SMALL)
    paths = write_csvs(data, tmp_path)
    kg, diagnostics = ingest_csv(paths["products"], paths["ingredients"])
    assert diagnostics == []
    assert kg.to_tsv() == data.kg.to_tsv()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["stats"]["haram_rate"] == data.haram_rate


def _write_catalog(tmp_path, extra_rows=()):
    prods = tmp_path / "products.csv"
    ings = tmp_path / "ingredients.csv"
    lines = ["product,brand,category,ingredients,status"]
    for r in catalog_records():
        lines.append(f"{r.product},{r.brand},{r.category},{';'.join(r.ingredients)},{r.status}")
    lines.extend(extra_rows)
    prods.write_text("\n".join(lines) + "\n")
    cols = ["toxicity", "allergy", "cancer", "restriction", "min_score", "max_score"]
    rows = ["ingredient," + ",".join(cols)]
    for name, props in CATALOG_INGREDIENTS.items():
        rows.append(name + "," + ",".join(str(props[c]) for c in cols))
    ings.write_text("\n".join(rows) + "\n")
    return prods, ings


def test_ingest_catalog(tmp_path):
    prods, ings = _write_catalog(tmp_path)
    kg, diagnostics = ingest_csv(prods, ings)
    assert diagnostics == []
    assert kg.to_tsv() == build_from_records(catalog_records()).to_tsv()
    assert len(kg.type_index[EntityKind.COSMETIC]) == 3


def test_ingest_skips_bad_rows_with_diagnostics(tmp_path):
    prods, ings = _write_catalog(tmp_path, [
        ",Amore,lip,water,halal",
        "Odd Balm,Amore,lip,water,kosher",
        "Aqua Toner,Innis,skin,water,halal",
        "Bare Mist,Amore,skin,,halal",
    ])
    kg, diagnostics = ingest_csv(prods, ings)
    assert len(diagnostics) == 4
    assert any("unknown status" in d for d in diagnostics)
    assert any("conflicting duplicate" in d for d in diagnostics)
    assert any("lists no ingredients" in d for d in diagnostics)
    assert kg.find(EntityKind.COSMETIC, "Bare Mist") is not None
    assert kg.find(EntityKind.COSMETIC, "Odd Balm") is None


def test_ingest_malformed_number(tmp_path):
    prods, ings = _write_catalog(tmp_path)
    with open(ings, "a") as fh:
        fh.write("squalane,abc,0,0,0,0,0\n")
    _, diagnostics = ingest_csv(prods, ings)
    assert len(diagnostics) == 1 and "malformed" in diagnostics[0]


def test_ingest_header_and_missing_file(tmp_path):
    prods, ings = _write_catalog(tmp_path)
    bad = tmp_path / "bad.csv"
    bad.write_text("product,brand\nx,y\n")
    with pytest.raises(HeaderMismatch):
        ingest_csv(bad, ings)
    with pytest.raises(OSError):
        ingest_csv(tmp_path / "missing.csv", ings)


def test_unlabelled_products_get_no_status_edge(tmp_path):
    prods, ings = _write_catalog(tmp_path, ["Plain Soap,Innis,skin,water,"])
    kg, _ = ingest_csv(prods, ings)
    soap = kg.lookup(EntityKind.COSMETIC, "Plain Soap")
    assert not any(h == soap and r is RelationKind.HAS_STATUS for h, r, t in kg.triples)
