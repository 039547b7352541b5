"""Shared fixtures and the acceptance-criteria summary hook."""

import math

import numpy as np
import pytest

from ctxmdp.geo import GeoPoint, LocationDomain, plain_key
from ctxmdp.roadnet import RoadGraph


def line_graph(n: int = 3, spacing_km: float = 1.0) -> RoadGraph:
    """Path graph a0 <-> a1 <-> ... with ~spacing_km hops along the equator."""
    deg = spacing_km / 111.19507973463156
    nodes = {f"a{i}": GeoPoint(0.0, i * deg) for i in range(n)}
    edges = []
    for i in range(n - 1):
        u, v = f"a{i}", f"a{i + 1}"
        edges.append((u, v, spacing_km))
        edges.append((v, u, spacing_km))
    return RoadGraph(nodes, edges)


@pytest.fixture
def path3() -> RoadGraph:
    return line_graph(3)


def random_graph(rng: np.random.Generator, n: int, p_edge: float = 0.35) -> RoadGraph:
    nodes = {
        f"n{i:03d}": GeoPoint(float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)))
        for i in range(n)
    }
    edges = []
    ids = sorted(nodes)
    for u in ids:
        for v in ids:
            if u != v and rng.random() < p_edge:
                edges.append((u, v, float(rng.uniform(0.1, 5.0))))
    return RoadGraph(nodes, edges)


def random_domain(rng: np.random.Generator, n: int, span_deg: float = 0.05) -> LocationDomain:
    pts = [
        (f"k{i:03d}", GeoPoint(float(rng.uniform(0, span_deg)), float(rng.uniform(0, span_deg))))
        for i in range(n)
    ]
    return LocationDomain(pts)


def random_mdp_instance(
    rng: np.random.Generator,
    max_keys: int = 30,
    max_outputs: int = 30,
):
    """Random context-free LP instance over a small geographic patch.

    Spreads are kept moderate (eps * diameter of a few) so optimal matrices
    stay well away from denormal probabilities.
    """
    from ctxmdp.geo import key_metric
    from ctxmdp.utility import CostTensor

    n_keys = int(rng.integers(2, max_keys + 1))
    n_out = int(rng.integers(2, max_outputs + 1))
    dom = random_domain(rng, max(n_keys, n_out), span_deg=0.03)
    secrets = list(dom.secrets)[:n_keys]
    outputs = list(dom.outputs)[:n_out]
    keys = [plain_key(x) for x in secrets]
    cost = CostTensor(
        keys=keys,
        outputs=outputs,
        c=rng.uniform(0.0, 5.0, size=(n_keys, n_out)),
    )
    weights = rng.dirichlet(np.ones(n_keys))
    prior = {k: float(w) for k, w in zip(keys, weights)}
    dist = key_metric(dom, ())
    eps = float(rng.uniform(0.2, 1.2))
    eta = math.inf if rng.random() < 0.4 else float(rng.uniform(0.5, 3.0))
    return cost, prior, dist, eps, eta


# ---------------------------------------------------------------------------
# Acceptance summary: one pass/fail line per criterion at the end of the run.

_ACCEPTANCE: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.failed and report.when == "setup"):
        return
    if "test_acceptance.py" not in str(report.nodeid):
        return
    name = report.nodeid.split("::")[-1]
    outcome = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
    _ACCEPTANCE[name] = outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_line("")
    terminalreporter.write_line("acceptance criteria:")
    for name in sorted(_ACCEPTANCE, key=_criterion_order):
        terminalreporter.write_line(f"  {_ACCEPTANCE[name]:4s}  {name}")


def _criterion_order(name: str):
    digits = "".join(ch for ch in name if ch.isdigit())
    return (int(digits) if digits else 99, name)
