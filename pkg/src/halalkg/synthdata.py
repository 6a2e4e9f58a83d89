"""Synthetic cosmetic graphs with a known halal rule, and CSV ingestion.

The generated rule: a product is haram iff at least one of its ingredients is
haram, and an ingredient is haram iff its restriction property equals 1.0.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigInvalid, HeaderMismatch
from .kgraph import (
    PROPERTY_COLUMNS,
    STATUS_HALAL,
    STATUS_HARAM,
    CosmeticKG,
    EntityKind,
    ProductRecord,
    RelationKind,
    build_from_records,
)

log = logging.getLogger(__name__)

PRODUCT_COLUMNS = ("product", "brand", "category", "ingredients", "status")
INGREDIENT_COLUMNS = ("ingredient",) + PROPERTY_COLUMNS
ZIPF_EXPONENT = 1.1


@dataclass(frozen=True)
class SynthConfig:
    n_products: int = 2000
    n_ingredients: int = 300
    n_brands: int = 10
    n_categories: int = 8
    ingredients_per_product: tuple = (3, 8)
    haram_ingredient_fraction: float = 0.1
    label_noise: float = 0.0
    seed: int = 42

    def violations(self) -> list[str]:
        out = []
        for name in ("n_products", "n_ingredients", "n_brands", "n_categories"):
            if getattr(self, name) < 1:
                out.append(f"{name} must be at least 1")
        lo, hi = self.ingredients_per_product
        if lo < 0 or lo > hi:
            out.append(f"ingredients_per_product needs 0 <= min <= max (got {lo}, {hi})")
        if hi > self.n_ingredients:
            out.append("ingredients_per_product max exceeds n_ingredients")
        if not 0.0 < self.haram_ingredient_fraction < 1.0:
            out.append("haram_ingredient_fraction must lie strictly inside (0, 1)")
        if not 0.0 <= self.label_noise < 1.0:
            out.append("label_noise must lie in [0, 1)")
        return out

    def validate(self) -> "SynthConfig":
        problems = self.violations()
        if problems:
            raise ConfigInvalid(problems)
        return self


@dataclass
class SynthData:
    config: SynthConfig
    kg: CosmeticKG
    records: list
    ingredient_props: dict  # name -> {column: raw value}
    haram_ingredients: frozenset
    true_status: dict  # product name -> "halal" / "haram" by the rule
    stored_status: dict  # after label noise
    stats: dict = field(default_factory=dict)

    @property
    def haram_rate(self) -> float:
        return sum(s == STATUS_HARAM for s in self.true_status.values()) / len(self.true_status)


def generate(config: SynthConfig) -> SynthData:
    config.validate()
    rng = np.random.default_rng(config.seed)
    width = len(str(max(config.n_products, config.n_ingredients) - 1))
    ingredients = [f"ing_{i:0{width}d}" for i in range(config.n_ingredients)]
    brands = [f"brand_{i:02d}" for i in range(config.n_brands)]
    categories = [f"category_{i:02d}" for i in range(config.n_categories)]

    n_haram = math.ceil(config.haram_ingredient_fraction * config.n_ingredients)
    haram = frozenset(ingredients[i] for i in rng.choice(config.n_ingredients, n_haram, replace=False))
    props = {}
    for name in ingredients:
        tox, allergy, cancer = rng.uniform(0.0, 1.0, 3)
        lo, hi = np.sort(rng.uniform(0.0, 1.0, 2))
        props[name] = {
            "toxicity": float(tox),
            "allergy": float(allergy),
            "cancer": float(cancer),
            "restriction": 1.0 if name in haram else 0.0,
            "min_score": float(lo),
            "max_score": float(hi),
        }

    # popularity rank is independent of haram-ness
    ranks = rng.permutation(config.n_ingredients) + 1
    popularity = ranks.astype(np.float64) ** -ZIPF_EXPONENT
    popularity /= popularity.sum()

    lo, hi = config.ingredients_per_product
    records, true_status, stored = [], {}, {}
    for p in range(config.n_products):
        name = f"product_{p:0{width}d}"
        k = int(rng.integers(lo, hi + 1))
        chosen = sorted(rng.choice(config.n_ingredients, k, replace=False, p=popularity))
        ings = [ingredients[i] for i in chosen]
        status = STATUS_HARAM if any(i in haram for i in ings) else STATUS_HALAL
        true_status[name] = status
        if config.label_noise and rng.random() < config.label_noise:
            status = STATUS_HALAL if status == STATUS_HARAM else STATUS_HARAM
        stored[name] = status
        records.append(ProductRecord(
            product=name,
            brand=brands[int(rng.integers(config.n_brands))],
            category=categories[int(rng.integers(config.n_categories))],
            ingredients=tuple(ings),
            properties={i: props[i] for i in ings},
            status=status,
        ))
    kg = build_from_records(records)
    data = SynthData(config, kg, records, props, haram, true_status, stored)
    data.stats = {
        "haram_rate": data.haram_rate,
        "stored_haram_rate": sum(s == STATUS_HARAM for s in stored.values()) / len(stored),
        "n_haram_ingredients": n_haram,
        **kg.stats(),
    }
    return data


def rule_oracle(kg: CosmeticKG) -> dict[int, str]:
    """Status of every product by scanning its ingredients for a restriction of 1.0."""
    restricted = set()
    for h, r, t in kg.triples:
        ent = kg.entities[t]
        if r is RelationKind.HAS_PROPERTY and ent.kind is EntityKind.RESTRICTION:
            if ent.numeric_attrs[PROPERTY_COLUMNS.index("restriction")] == 1.0:
                restricted.add(h)
    out = {p: STATUS_HALAL for p in kg.type_index[EntityKind.COSMETIC]}
    for h, r, t in kg.triples:
        if r is RelationKind.HAS_INGREDIENT and t in restricted:
            out[h] = STATUS_HARAM
    return out


def write_csvs(data: SynthData, out_dir) -> dict[str, str]:
    """Write products.csv, ingredients.csv, labels.csv and manifest.json."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {n: os.path.join(out_dir, f"{n}.csv") for n in ("products", "ingredients", "labels")}
    with open(paths["products"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PRODUCT_COLUMNS)
        for rec in data.records:
            w.writerow([rec.product, rec.brand, rec.category, ";".join(rec.ingredients), rec.status])
    with open(paths["ingredients"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INGREDIENT_COLUMNS)
        for name in sorted(data.ingredient_props):
            p = data.ingredient_props[name]
            w.writerow([name] + [repr(p[c]) for c in PROPERTY_COLUMNS])
    with open(paths["labels"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["product", "status"])
        for name in sorted(data.true_status):
            w.writerow([name, data.true_status[name]])
    manifest = {"config": asdict(data.config), "seed": data.config.seed, "stats": data.stats}
    paths["manifest"] = os.path.join(out_dir, "manifest.json")
    with open(paths["manifest"], "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def _check_header(header, required, path):
    if header is None:
        raise HeaderMismatch(f"{path}: empty file")
    header = [h.strip() for h in header]
    missing = [c for c in required if c not in header]
    if missing:
        raise HeaderMismatch(f"{path}: missing columns {missing}")


def read_ingredient_csv(path, diagnostics: list) -> dict[str, dict[str, float]]:
    props = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _check_header(reader.fieldnames, INGREDIENT_COLUMNS, path)
        for line, row in enumerate(reader, start=2):
            name = (row.get("ingredient") or "").strip()
            if not name:
                diagnostics.append(f"{path}:{line}: empty ingredient name, row skipped")
                continue
            values = {}
            try:
                for col in PROPERTY_COLUMNS:
                    cell = (row.get(col) or "").strip()
                    if cell:
                        values[col] = float(cell)
                        if not math.isfinite(values[col]):
                            raise ValueError(cell)
            except ValueError:
                diagnostics.append(f"{path}:{line}: malformed number in {col!r}, row skipped")
                continue
            props[name] = values
    return props


def ingest_csv(product_csv, ingredient_csv, property_nodes: str = "auto"):
    """Read the two CSVs into a graph; returns ``(kg, diagnostics)``.

    Malformed rows are skipped with a diagnostic line (also logged as a
    warning); a missing file raises ``OSError`` and a missing column
    :class:`HeaderMismatch`.
    """
    diagnostics: list[str] = []
    props = read_ingredient_csv(ingredient_csv, diagnostics)
    folded = {k.casefold(): v for k, v in props.items()}
    records, seen = [], {}
    with open(product_csv, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _check_header(reader.fieldnames, PRODUCT_COLUMNS, product_csv)
        for line, row in enumerate(reader, start=2):
            where = f"{product_csv}:{line}"
            fields = {c: (row.get(c) or "").strip() for c in PRODUCT_COLUMNS}
            if not all(fields[c] for c in ("product", "brand", "category")):
                diagnostics.append(f"{where}: product, brand and category are required, row skipped")
                continue
            status = fields["status"].casefold() or None
            if status not in (None, STATUS_HALAL, STATUS_HARAM):
                diagnostics.append(f"{where}: unknown status {fields['status']!r}, row skipped")
                continue
            ings = [i.strip() for i in fields["ingredients"].split(";") if i.strip()]
            if not ings:
                diagnostics.append(f"{where}: product {fields['product']!r} lists no ingredients")
            key = fields["product"].casefold()
            if key in seen and seen[key] != (fields["brand"].casefold(), fields["category"].casefold(), status):
                diagnostics.append(f"{where}: conflicting duplicate of product {fields['product']!r}, row skipped")
                continue
            seen[key] = (fields["brand"].casefold(), fields["category"].casefold(), status)
            records.append(ProductRecord(
                fields["product"], fields["brand"], fields["category"], tuple(ings),
                {i: folded[i.casefold()] for i in ings if i.casefold() in folded},
                status,
            ))
    for msg in diagnostics:
        log.warning(msg)
    return build_from_records(records, property_nodes=property_nodes), diagnostics
