"""Cosmetic knowledge graph: schema, construction, adjacency and splits."""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import DuplicateStatus, InsufficientData, SchemaViolation, UnknownEntity

log = logging.getLogger(__name__)


class EntityKind(enum.Enum):
    COSMETIC = "P"
    INGREDIENT = "I"
    BRAND = "B"
    CATEGORY = "C"
    TOXICITY = "T"
    ALLERGY = "A"
    CANCER = "Ca"
    RESTRICTION = "R"
    MIN_SCORE = "Smi"
    MAX_SCORE = "Sma"
    STATUS = "S"


class RelationKind(enum.Enum):
    HAS_INGREDIENT = "r_i"
    HAS_BRAND = "r_b"
    HAS_CATEGORY = "r_c"
    HAS_PROPERTY = "r_p"
    HAS_STATUS = "r_s"

    @property
    def index(self) -> int:
        return _RELATION_ORDER.index(self)


_RELATION_ORDER = list(RelationKind)


class Direction(enum.Enum):
    FORWARD = "fwd"
    INVERSE = "inv"
    SELF = "self"


# Property-bearing kinds, in numeric-vector slot order. The CSV column names
# below map one-to-one onto these slots.
PROPERTY_KINDS = (
    EntityKind.TOXICITY,
    EntityKind.ALLERGY,
    EntityKind.CANCER,
    EntityKind.RESTRICTION,
    EntityKind.MIN_SCORE,
    EntityKind.MAX_SCORE,
)
PROPERTY_COLUMNS = ("toxicity", "allergy", "cancer", "restriction", "min_score", "max_score")
NUMERIC_WIDTH = len(PROPERTY_KINDS)
# States (shared value nodes in "auto" mode) vs continuous scores (per-ingredient nodes).
CATEGORICAL_PROPERTIES = frozenset(PROPERTY_KINDS[:4])

STATUS_HALAL = "halal"
STATUS_HARAM = "haram"

P, I, B, C, S = (EntityKind.COSMETIC, EntityKind.INGREDIENT, EntityKind.BRAND,
                 EntityKind.CATEGORY, EntityKind.STATUS)
LEGAL_PATTERNS = frozenset(
    [
        (P, RelationKind.HAS_INGREDIENT, I),
        (P, RelationKind.HAS_BRAND, B),
        (P, RelationKind.HAS_CATEGORY, C),
        (P, RelationKind.HAS_STATUS, S),
    ]
    + [(I, RelationKind.HAS_PROPERTY, k) for k in PROPERTY_KINDS]
)
# Relations a product may carry at most once.
ONE_TO_ONE = frozenset(
    [RelationKind.HAS_BRAND, RelationKind.HAS_CATEGORY, RelationKind.HAS_STATUS]
)

N_RELATIONS = len(RelationKind)
SELF_LOOP_TYPE = 2 * N_RELATIONS
N_EDGE_TYPES = 2 * N_RELATIONS + 1


def edge_type_id(relation: RelationKind | None, direction: Direction) -> int:
    """Dense id of an edge label: forward 0-4, inverse 5-9, self-loop 10."""
    if direction is Direction.SELF:
        return SELF_LOOP_TYPE
    return relation.index + (N_RELATIONS if direction is Direction.INVERSE else 0)


@dataclass(frozen=True)
class Entity:
    id: int
    kind: EntityKind
    name: str
    numeric_attrs: tuple[float, ...] | None = None


class Triple(NamedTuple):
    head: int
    relation: RelationKind
    tail: int


class Edge(NamedTuple):
    """One adjacency entry of entity ``v``: a message from ``neighbor`` to ``v``."""

    relation: RelationKind | None
    direction: Direction
    neighbor: int

    @property
    def type_id(self) -> int:
        return edge_type_id(self.relation, self.direction)


@dataclass(frozen=True)
class ProductRecord:
    """One row of product data.

    ``properties`` maps ingredient name to ``{column: value}`` using the
    column names of :data:`PROPERTY_COLUMNS`; ingredients may be missing.
    """

    product: str
    brand: str
    category: str
    ingredients: Sequence[str] = ()
    properties: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    status: str | None = None


def _key(name: str) -> str:
    return name.strip().casefold()


class CosmeticKG:
    """Immutable heterogeneous graph of typed entities and triples.

    Construct through :func:`build_from_records` or :meth:`from_parts`, which
    both validate the schema. Adjacency holds forward edges at the head,
    inverse edges at the tail and one self-loop per entity.
    """

    def __init__(self, entities: Sequence[Entity], triples: Sequence[Triple]):
        self._entities = tuple(entities)
        self._triples = tuple(Triple(int(h), RelationKind(r), int(t)) for h, r, t in triples)
        self._validate()
        self._triple_set = frozenset(self._triples)
        by_kind: dict[EntityKind, list[int]] = {k: [] for k in EntityKind}
        self._by_name: dict[tuple[EntityKind, str], int] = {}
        for e in self._entities:
            by_kind[e.kind].append(e.id)
            self._by_name[(e.kind, _key(e.name))] = e.id
        self.type_index = {k: tuple(v) for k, v in by_kind.items()}
        adj: list[list[Edge]] = [[Edge(None, Direction.SELF, v)] for v in range(len(self._entities))]
        for h, r, t in self._triples:
            adj[h].append(Edge(r, Direction.FORWARD, t))
            adj[t].append(Edge(r, Direction.INVERSE, h))
        self._adjacency = tuple(
            tuple(sorted(row, key=lambda e: (e.type_id, e.neighbor))) for row in adj
        )
        self._edge_arrays = None

    @classmethod
    def from_parts(cls, entities: Sequence[Entity], triples: Iterable) -> "CosmeticKG":
        return cls(entities, list(triples))

    def _validate(self) -> None:
        n = len(self._entities)
        for i, e in enumerate(self._entities):
            if e.id != i:
                raise SchemaViolation(f"entity ids must be contiguous from 0; got {e.id} at {i}")
            if e.kind in PROPERTY_KINDS:
                attrs = e.numeric_attrs
                if attrs is None or len(attrs) != NUMERIC_WIDTH:
                    raise SchemaViolation(f"property entity {e.name!r} needs {NUMERIC_WIDTH} attrs")
                if not all(math.isfinite(a) for a in attrs):
                    raise SchemaViolation(f"non-finite attribute on {e.name!r}")
            elif e.numeric_attrs is not None:
                raise SchemaViolation(f"{e.kind.name} entity {e.name!r} cannot carry numeric attrs")
        seen = set()
        single: set[tuple[int, RelationKind]] = set()
        for tr in self._triples:
            h, r, t = tr
            if not (0 <= h < n and 0 <= t < n):
                raise SchemaViolation(f"triple {tr} references a missing entity")
            pattern = (self._entities[h].kind, r, self._entities[t].kind)
            if pattern not in LEGAL_PATTERNS:
                raise SchemaViolation(
                    f"illegal pattern ({pattern[0].value}, {r.value}, {pattern[2].value})"
                )
            if tr in seen:
                raise SchemaViolation(f"duplicate triple {tr}")
            seen.add(tr)
            if r in ONE_TO_ONE:
                if (h, r) in single:
                    if r is RelationKind.HAS_STATUS:
                        raise DuplicateStatus(f"product {self._entities[h].name!r} has two statuses")
                    raise SchemaViolation(
                        f"product {self._entities[h].name!r} has more than one {r.value} edge"
                    )
                single.add((h, r))

    # accessors
    @property
    def entities(self) -> tuple[Entity, ...]:
        return self._entities

    @property
    def triples(self) -> tuple[Triple, ...]:
        return self._triples

    @property
    def adjacency(self) -> tuple[tuple[Edge, ...], ...]:
        return self._adjacency

    @property
    def n_entities(self) -> int:
        return len(self._entities)

    def __len__(self) -> int:
        return len(self._entities)

    def entity(self, v: int) -> Entity:
        if not 0 <= v < len(self._entities):
            raise UnknownEntity(v)
        return self._entities[v]

    def lookup(self, kind: EntityKind, name: str) -> int:
        try:
            return self._by_name[(kind, _key(name))]
        except KeyError:
            raise UnknownEntity(f"no {kind.name} named {name!r}") from None

    def find(self, kind: EntityKind, name: str) -> int | None:
        return self._by_name.get((kind, _key(name)))

    def has_triple(self, head: int, relation: RelationKind, tail: int) -> bool:
        return Triple(head, relation, tail) in self._triple_set

    def status_ids(self) -> tuple[int, int]:
        """Ids of the (halal, haram) status entities."""
        return self.lookup(S, STATUS_HALAL), self.lookup(S, STATUS_HARAM)

    def status_of(self) -> dict[int, int]:
        """Product id -> status entity id for every labelled product."""
        return {h: t for h, r, t in self._triples if r is RelationKind.HAS_STATUS}

    def numeric_matrix(self) -> np.ndarray:
        """``|V| x N`` numeric attributes, zero rows for non-property entities."""
        out = np.zeros((len(self._entities), NUMERIC_WIDTH))
        for e in self._entities:
            if e.numeric_attrs is not None:
                out[e.id] = e.numeric_attrs
        return out

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flattened adjacency as ``(target, source, edge_type)`` int64 arrays.

        Entries are grouped by target in id order, so each target's segment
        is contiguous.
        """
        if self._edge_arrays is None:
            tgt, src, typ = [], [], []
            for v, row in enumerate(self._adjacency):
                for e in row:
                    tgt.append(v)
                    src.append(e.neighbor)
                    typ.append(e.type_id)
            arrays = tuple(np.asarray(a, dtype=np.int64) for a in (tgt, src, typ))
            for a in arrays:
                a.setflags(write=False)
            self._edge_arrays = arrays
        return self._edge_arrays

    def without_triples(self, drop) -> "CosmeticKG":
        """Same entities, with the triples in ``drop`` (or matching a predicate) removed."""
        if callable(drop):
            keep = [t for t in self._triples if not drop(t)]
        else:
            drop = set(drop)
            keep = [t for t in self._triples if t not in drop]
        return CosmeticKG(self._entities, keep)

    def message_passing_graph(self) -> "CosmeticKG":
        """The graph the encoder propagates over: every ``r_s`` edge removed.

        Status edges are prediction targets; keeping any of them as inputs lets
        a product read its own label.
        """
        return self.without_triples(lambda t: t.relation is RelationKind.HAS_STATUS)

    def stats(self) -> dict:
        return {
            "entities": len(self._entities),
            "triples": len(self._triples),
            "entities_per_kind": {k.value: len(self.type_index[k]) for k in EntityKind},
            "triples_per_relation": {
                r.value: sum(1 for t in self._triples if t.relation is r) for r in RelationKind
            },
        }

    def to_tsv(self) -> str:
        """``head_name<TAB>relation<TAB>tail_name`` lines in triple order."""
        ents = self._entities
        return "".join(
            f"{ents[h].name}\t{r.value}\t{ents[t].name}\n" for h, r, t in self._triples
        )


def neighbors(kg: CosmeticKG, v: int) -> tuple[Edge, ...]:
    """Adjacency of ``v`` sorted by edge type then neighbour id (self-loop included)."""
    if not isinstance(v, (int, np.integer)) or not 0 <= v < kg.n_entities:
        raise UnknownEntity(v)
    return kg.adjacency[int(v)]


# construction

def normalize_columns(raw: Mapping[str, Mapping[str, float]]) -> dict[str, dict[str, float]]:
    """Min-max scale each property column over all ingredients; constant columns -> 0.5."""
    out: dict[str, dict[str, float]] = {name: {} for name in raw}
    for col in PROPERTY_COLUMNS:
        vals = [float(p[col]) for p in raw.values() if col in p]
        if not vals:
            continue
        lo, hi = min(vals), max(vals)
        for name, props in raw.items():
            if col in props:
                v = float(props[col])
                out[name][col] = 0.5 if hi == lo else (v - lo) / (hi - lo)
    return out


class _Builder:
    def __init__(self):
        self.entities: list[Entity] = []
        self.triples: list[Triple] = []
        self._ids: dict[tuple[EntityKind, str], int] = {}
        self._triple_set: set[Triple] = set()
        self._single: dict[tuple[int, RelationKind], int] = {}

    def entity(self, kind: EntityKind, name: str, attrs=None) -> int:
        if not name or not name.strip():
            raise SchemaViolation(f"empty {kind.name} name")
        key = (kind, _key(name))
        if key not in self._ids:
            self._ids[key] = len(self.entities)
            self.entities.append(Entity(len(self.entities), kind, name.strip(), attrs))
        return self._ids[key]

    def triple(self, h: int, r: RelationKind, t: int) -> None:
        pattern = (self.entities[h].kind, r, self.entities[t].kind)
        if pattern not in LEGAL_PATTERNS:
            raise SchemaViolation(f"illegal pattern {pattern}")
        tr = Triple(h, r, t)
        if tr in self._triple_set:
            return
        if r in ONE_TO_ONE:
            prev = self._single.get((h, r))
            if prev is not None and prev != t:
                name = self.entities[h].name
                if r is RelationKind.HAS_STATUS:
                    raise DuplicateStatus(f"product {name!r} carries two statuses")
                raise SchemaViolation(f"product {name!r} has two {r.value} targets")
            self._single[(h, r)] = t
        self._triple_set.add(tr)
        self.triples.append(tr)


def build_from_records(records: Sequence[ProductRecord], property_nodes: str = "auto") -> CosmeticKG:
    """Build a schema-valid graph from product records.

    ``property_nodes`` controls how ingredient properties become entities:
    ``"per_ingredient"`` gives every (ingredient, property) its own node,
    ``"shared"`` creates one node per (property, normalized value), and
    ``"auto"`` shares the four state properties (toxicity, allergy, cancer,
    restriction) while keeping min/max scores per ingredient.
    """
    if property_nodes not in ("auto", "shared", "per_ingredient"):
        raise ValueError(f"unknown property_nodes mode {property_nodes!r}")
    records = list(records)
    b = _Builder()
    if not records:
        return CosmeticKG([], [])
    halal = b.entity(S, STATUS_HALAL)
    haram = b.entity(S, STATUS_HARAM)

    raw_props: dict[str, dict[str, float]] = {}
    display: dict[str, str] = {}
    for rec in records:
        for ing, props in rec.properties.items():
            key = _key(ing)
            display.setdefault(key, ing.strip())
            known = raw_props.setdefault(key, {})
            for col, value in props.items():
                if col not in PROPERTY_COLUMNS:
                    raise SchemaViolation(f"unknown ingredient property {col!r}")
                if value is None:
                    continue
                value = float(value)
                if not math.isfinite(value):
                    raise SchemaViolation(f"non-finite {col} for ingredient {ing!r}")
                if col in known and known[col] != value:
                    log.warning("conflicting %s for %r: keeping %s", col, ing, known[col])
                    continue
                known[col] = value
    normed = normalize_columns(raw_props)
    attached: set[str] = set()

    for rec in records:
        for label, text in (("product", rec.product), ("brand", rec.brand), ("category", rec.category)):
            if not text or not str(text).strip():
                raise SchemaViolation(f"record is missing its {label}")
        p = b.entity(P, rec.product)
        b.triple(p, RelationKind.HAS_BRAND, b.entity(B, rec.brand))
        b.triple(p, RelationKind.HAS_CATEGORY, b.entity(C, rec.category))
        for ing in rec.ingredients:
            i = b.entity(I, ing)
            b.triple(p, RelationKind.HAS_INGREDIENT, i)
            key = _key(ing)
            if key in attached:
                continue
            attached.add(key)
            for col, kind in zip(PROPERTY_COLUMNS, PROPERTY_KINDS):
                if col not in normed.get(key, {}):
                    continue
                value = normed[key][col]
                attrs = [0.0] * NUMERIC_WIDTH
                attrs[PROPERTY_KINDS.index(kind)] = value
                shared = property_nodes == "shared" or (
                    property_nodes == "auto" and kind in CATEGORICAL_PROPERTIES
                )
                if shared:
                    name = f"{col}={value:.6g}"
                else:
                    name = f"{display.get(key, ing.strip())}/{col}"
                t = b.entity(kind, name, tuple(attrs))
                b.triple(i, RelationKind.HAS_PROPERTY, t)
        if rec.status is not None:
            status = _key(rec.status)
            if status not in (STATUS_HALAL, STATUS_HARAM):
                raise SchemaViolation(f"unknown status {rec.status!r}")
            b.triple(p, RelationKind.HAS_STATUS, halal if status == STATUS_HALAL else haram)
    return CosmeticKG(b.entities, b.triples)


# splits

class LabeledPair(NamedTuple):
    product: int
    status: int  # always the halal status entity
    label: int  # 1 = halal


@dataclass(frozen=True)
class StatusSplit:
    train: tuple[LabeledPair, ...]
    val: tuple[LabeledPair, ...]
    test: tuple[LabeledPair, ...]

    def sizes(self) -> dict[str, int]:
        return {"train": len(self.train), "val": len(self.val), "test": len(self.test)}

    def training_graph(self, kg: CosmeticKG) -> CosmeticKG:
        """``kg`` minus the ``r_s`` triples of validation and test products."""
        held = {p.product for p in self.val} | {p.product for p in self.test}
        return kg.without_triples(
            lambda t: t.relation is RelationKind.HAS_STATUS and t.head in held
        )


def split_status_pairs(kg: CosmeticKG, ratios=(0.6, 0.2, 0.2), seed: int = 0) -> StatusSplit:
    """Partition labelled products into train/val/test by a seeded permutation."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    labelled = kg.status_of()
    if len(labelled) < 5:
        raise InsufficientData(f"need at least 5 labelled products, found {len(labelled)}")
    halal, _ = kg.status_ids()
    products = np.array(sorted(labelled), dtype=np.int64)
    order = products[np.random.default_rng(seed).permutation(len(products))]
    n = len(order)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) <= 0:
        raise InsufficientData(f"split sizes {n_train}/{n_val}/{n_test} leave a split empty")

    def pairs(ids):
        return tuple(
            LabeledPair(int(p), halal, int(labelled[int(p)] == halal)) for p in ids
        )

    return StatusSplit(
        pairs(order[:n_train]),
        pairs(order[n_train:n_train + n_val]),
        pairs(order[n_train + n_val:]),
    )
