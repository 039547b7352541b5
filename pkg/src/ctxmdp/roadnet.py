"""Weighted directed road graphs, CSV ingestion, nearest-node snapping, and
shortest-path trees oriented toward a task root."""

import csv
import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _csgraph_dijkstra

from .geo import GeoPoint, haversine_km


class RoadGraph:
    """Directed graph with node coordinates and positive edge lengths (km)."""

    def __init__(self, nodes: dict[str, GeoPoint], edges: list[tuple[str, str, float]]):
        self.nodes = dict(nodes)
        self.node_ids: tuple[str, ...] = tuple(sorted(self.nodes))
        self._index = {n: i for i, n in enumerate(self.node_ids)}
        self.edges: list[tuple[str, str, float]] = []
        for u, v, w in edges:
            if u not in self.nodes:
                raise ValueError(f"edge references unknown node {u!r}")
            if v not in self.nodes:
                raise ValueError(f"edge references unknown node {v!r}")
            if not (math.isfinite(w) and w > 0.0):
                raise ValueError(f"edge {u!r}->{v!r} has non-positive length {w}")
            self.edges.append((u, v, float(w)))
        # Reversed adjacency: tree construction walks edges backwards so the
        # resulting distances are travel costs from each node TO the root.
        self._radj: dict[str, list[tuple[str, float]]] = {n: [] for n in self.nodes}
        for u, v, w in self.edges:
            self._radj[v].append((u, w))

    def __len__(self) -> int:
        return len(self.nodes)

    def index_of(self, node: str) -> int:
        return self._index[node]

    def reversed_csr(self) -> csr_matrix:
        """CSR adjacency of the edge-reversed graph over sorted node ids."""
        n = len(self.node_ids)
        rows = [self._index[v] for _, v, _ in self.edges]
        cols = [self._index[u] for u, _, _ in self.edges]
        data = [w for _, _, w in self.edges]
        return csr_matrix((data, (rows, cols)), shape=(n, n))


@dataclass(frozen=True)
class ShortestPathTree:
    """Distances (km) from every reachable node to ``root``."""

    root: str
    dist: dict[str, float]


def load_graph(nodes_file, edges_file) -> RoadGraph:
    """Read ``id,lat,lon`` and ``from,to,length_km`` files (headers required)."""
    nodes: dict[str, GeoPoint] = {}
    with open(nodes_file, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:3]] != ["id", "lat", "lon"]:
            raise ValueError(f"{nodes_file}: expected header 'id,lat,lon'")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 3:
                raise ValueError(f"{nodes_file}:{lineno}: expected 3 fields")
            try:
                nodes[row[0].strip()] = GeoPoint(float(row[1]), float(row[2]))
            except ValueError as exc:
                raise ValueError(f"{nodes_file}:{lineno}: {exc}") from None

    edges: list[tuple[str, str, float]] = []
    with open(edges_file, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["from", "to", "length_km"]
        if header is None or [h.strip().lower() for h in header[:3]] != expected:
            raise ValueError(f"{edges_file}: expected header 'from,to,length_km'")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 3:
                raise ValueError(f"{edges_file}:{lineno}: expected 3 fields")
            try:
                length = float(row[2])
            except ValueError:
                raise ValueError(f"{edges_file}:{lineno}: bad length {row[2]!r}") from None
            edges.append((row[0].strip(), row[1].strip(), length))
    return RoadGraph(nodes, edges)


def shortest_path_tree(g: RoadGraph, root: str) -> ShortestPathTree:
    """Binary-heap Dijkstra on the reversed graph: dist[v] = cost v -> root.

    Unreachable nodes are absent from the result.
    """
    if root not in g.nodes:
        raise KeyError(f"unknown root node {root!r}")
    dist: dict[str, float] = {root: 0.0}
    done: set[str] = set()
    heap: list[tuple[float, str]] = [(0.0, root)]
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for v, w in g._radj[u]:
            nd = d + w
            if v not in dist or nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return ShortestPathTree(root=root, dist=dist)


def shortest_path_trees(g: RoadGraph, roots: list[str]) -> np.ndarray:
    """Bulk tree construction for many roots at once.

    Returns a ``(len(roots), n_nodes)`` array of node->root travel costs over
    ``g.node_ids`` order, ``inf`` where unreachable. Backed by the compiled
    sparse-graph Dijkstra; agrees with :func:`shortest_path_tree` exactly.
    """
    for r in roots:
        if r not in g.nodes:
            raise KeyError(f"unknown root node {r!r}")
    if not g.edges:
        n = len(g.node_ids)
        out = np.full((len(roots), n), np.inf)
        for k, r in enumerate(roots):
            out[k, g.index_of(r)] = 0.0
        return out
    indices = [g.index_of(r) for r in roots]
    return _csgraph_dijkstra(g.reversed_csr(), directed=True, indices=indices)


def snap_to_node(p: GeoPoint, g: RoadGraph) -> str:
    """Node minimizing the Haversine distance to ``p``; ties break to the
    lexicographically smallest id."""
    if not g.nodes:
        raise ValueError("cannot snap to an empty graph")
    best_id = None
    best_d = math.inf
    for node in g.node_ids:
        d = haversine_km(p, g.nodes[node])
        if d < best_d:
            best_d, best_id = d, node
    return best_id
