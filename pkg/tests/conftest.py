import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from halalkg import tensor as T  # noqa: E402
from halalkg.kgraph import ProductRecord, build_from_records  # noqa: E402

FD_STEP = 1e-5


def numeric_grad(fn, leaves, step=FD_STEP):
    """Central differences of the scalar ``fn()`` w.r.t. each leaf's data."""
    out = []
    with T.no_grad():
        for leaf in leaves:
            g = np.zeros_like(leaf.data)
            flat, gflat = leaf.data.reshape(-1), g.reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + step
                up = fn().item()
                flat[i] = keep - step
                down = fn().item()
                flat[i] = keep
                gflat[i] = (up - down) / (2 * step)
            out.append(g)
    return out


def grad_rel_error(fn, leaves):
    """Largest relative discrepancy between backward and finite differences."""
    for leaf in leaves:
        leaf.grad = None
    fn().backward()
    worst = 0.0
    for leaf, num in zip(leaves, numeric_grad(fn, leaves)):
        ana = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        scale = max(np.abs(ana).max(), np.abs(num).max(), 1e-8)
        worst = max(worst, float(np.abs(ana - num).max() / scale))
    return worst


def leaf(rng, *shape, lo=-2.0, hi=2.0):
    return T.Tensor(rng.uniform(lo, hi, shape), requires_grad=True)


CATALOG_INGREDIENTS = {
    "water": {"toxicity": 0.0, "allergy": 0.1, "cancer": 0.0, "restriction": 0.0,
              "min_score": 1.0, "max_score": 1.0},
    "glycerin": {"toxicity": 0.1, "allergy": 0.2, "cancer": 0.0, "restriction": 0.0,
                 "min_score": 1.0, "max_score": 2.0},
    "carmine": {"toxicity": 0.3, "allergy": 0.6, "cancer": 0.1, "restriction": 1.0,
                "min_score": 2.0, "max_score": 4.0},
    "gelatin": {"toxicity": 0.1, "allergy": 0.3, "cancer": 0.0, "restriction": 1.0,
                "min_score": 1.0, "max_score": 3.0},
}


def catalog_records(status=True):
    """Three products, two brands, shared ingredients; the hand fixture used across tests."""
    rows = [
        ("Rose Lip Tint", "Amore", "lip", ("water", "glycerin", "carmine"), "haram"),
        ("Aqua Toner", "Amore", "skin", ("water", "glycerin"), "halal"),
        ("Silk Cream", "Innis", "skin", ("water", "gelatin"), "haram"),
    ]
    return [
        ProductRecord(p, b, c, ings, {i: CATALOG_INGREDIENTS[i] for i in ings}, s if status else None)
        for p, b, c, ings, s in rows
    ]


@pytest.fixture
def catalog_kg():
    return build_from_records(catalog_records())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_edges(rng, n, n_types=11, density=0.4):
    """(target, type, source) triples: every entity gets its self-loop plus random in-edges."""
    edges = [(v, 10, v) for v in range(n)]
    for v in range(n):
        for u in range(n):
            if u != v and rng.random() < density:
                edges.append((v, int(rng.integers(0, min(n_types, 10))), u))
    return edges


def small_model(n, *, hidden=4, layers=2, channels=2, seed=0, numeric=None, alpha=0.1):
    from halalkg.model import ModelParams

    rng = np.random.default_rng(seed + 100)
    if numeric is None:
        numeric = np.where(rng.random((n, 6)) < 0.3, rng.random((n, 6)), 0.0)
    return ModelParams.init(numeric, hidden=hidden, layers=layers, channels=channels,
                            residual_alpha=alpha, seed=seed)


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    def log(number, title, passed, detail):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        lines.append(line)
        print(line, flush=True)
        return passed

    return log


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
