"""Seeded desk-scale data generator: a lattice road graph plus trajectories
from a fixed-order location process with controllable speed/time/region
heterogeneity. Same seed, same bytes."""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geo import EARTH_RADIUS_KM, GeoPoint, haversine_km
from .priors import Trajectory, TrajectoryLog
from .roadnet import RoadGraph

KM_PER_DEG_LAT = EARTH_RADIUS_KM * math.pi / 180.0


@dataclass(frozen=True)
class SynthConfig:
    rows: int = 4
    cols: int = 4
    spacing_km: float = 1.5
    lat0: float = 45.0
    lon0: float = 7.0
    n_trajectories: int = 60
    steps: int = 40
    order: int = 2  # 1: memoryless walk; 2: heading-persistent walk
    straight_weight: float = 12.0
    reverse_weight: float = 0.15
    base_speed_mph: float = 30.0
    seed: int = 0

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ValueError("grid needs at least 2x2 nodes")
        if self.n_trajectories <= 0:
            raise ValueError("n_trajectories must be > 0")
        if self.steps < 2:
            raise ValueError("steps must be >= 2")
        if self.order not in (1, 2):
            raise ValueError("order must be 1 or 2")


def grid_graph(cfg: SynthConfig) -> RoadGraph:
    """Lattice over a local tangent plane; both directions of every edge."""
    dlat = cfg.spacing_km / KM_PER_DEG_LAT
    dlon = cfg.spacing_km / (KM_PER_DEG_LAT * math.cos(math.radians(cfg.lat0)))
    nodes: dict[str, GeoPoint] = {}
    for r in range(cfg.rows):
        for c in range(cfg.cols):
            nodes[_node_id(r, c)] = GeoPoint(cfg.lat0 + r * dlat, cfg.lon0 + c * dlon)
    edges: list[tuple[str, str, float]] = []
    for r in range(cfg.rows):
        for c in range(cfg.cols):
            for r2, c2 in ((r + 1, c), (r, c + 1)):
                if r2 < cfg.rows and c2 < cfg.cols:
                    a, b = _node_id(r, c), _node_id(r2, c2)
                    w = haversine_km(nodes[a], nodes[b])
                    edges.append((a, b, w))
                    edges.append((b, a, w))
    return RoadGraph(nodes, edges)


def _node_id(r: int, c: int) -> str:
    return f"n{r:02d}{c:02d}"


def _cell_of(node: str) -> tuple[int, int]:
    return int(node[1:3]), int(node[3:5])


def _speed_mph(cfg: SynthConfig, node: str, hour: float, cols: int) -> float:
    """Region and time-of-day heterogeneity around the base speed."""
    _, c = _cell_of(node)
    region = 0.7 if c < cols / 2 else 1.3
    tod = 0.6 if int(hour) % 24 in (8, 17) else 1.0
    return cfg.base_speed_mph * region * tod


def generate(cfg: SynthConfig) -> tuple[RoadGraph, TrajectoryLog]:
    g = grid_graph(cfg)
    adjacency: dict[str, list[str]] = {n: [] for n in g.nodes}
    for u, v, _ in g.edges:
        adjacency[u].append(v)
    for n in adjacency:
        adjacency[n] = sorted(set(adjacency[n]))

    rng = np.random.default_rng(cfg.seed)
    node_list = list(g.node_ids)
    trajectories: list[Trajectory] = []
    for ti in range(cfg.n_trajectories):
        current = node_list[rng.integers(len(node_list))]
        prev: str | None = None
        t = float(rng.integers(24)) * 3600.0 + float(rng.integers(3600))
        times = [t]
        path = [current]
        for _ in range(cfg.steps - 1):
            options = adjacency[current]
            if cfg.order == 1 or prev is None:
                nxt = options[rng.integers(len(options))]
            else:
                heading = _direction(prev, current)
                weights = np.array(
                    [
                        cfg.straight_weight
                        if _direction(current, o) == heading
                        else cfg.reverse_weight
                        if _direction(current, o) == _flip(heading)
                        else 1.0
                        for o in options
                    ]
                )
                nxt = options[rng.choice(len(options), p=weights / weights.sum())]
            hop_km = haversine_km(g.nodes[current], g.nodes[nxt])
            speed = _speed_mph(cfg, current, times[-1] / 3600.0, cfg.cols)
            dt_s = hop_km / (speed * 1.609344) * 3600.0
            prev, current = current, nxt
            times.append(times[-1] + dt_s)
            path.append(current)
        trajectories.append(
            Trajectory(
                vehicle_id=f"v{ti:04d}",
                trajectory_id=f"t{ti:04d}",
                times=times,
                points=[g.nodes[n] for n in path],
            )
        )
    return g, TrajectoryLog(trajectories)


def _direction(a: str, b: str) -> tuple[int, int]:
    ra, ca = _cell_of(a)
    rb, cb = _cell_of(b)
    return (rb - ra, cb - ca)


def _flip(d: tuple[int, int]) -> tuple[int, int]:
    return (-d[0], -d[1])


def write_dataset(cfg: SynthConfig, outdir) -> dict[str, Path]:
    """Emit the module-standard nodes/edges/trajectories files."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    g, trajectory_log = generate(cfg)
    paths = {
        "nodes": outdir / "nodes.csv",
        "edges": outdir / "edges.csv",
        "trajectories": outdir / "trajectories.csv",
    }
    with open(paths["nodes"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id,lat,lon\n")
        for n in g.node_ids:
            p = g.nodes[n]
            fh.write(f"{n},{p.lat:.9f},{p.lon:.9f}\n")
    with open(paths["edges"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("from,to,length_km\n")
        for u, v, w in g.edges:
            fh.write(f"{u},{v},{w:.17g}\n")
    with open(paths["trajectories"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("vehicle_id,trajectory_id,timestamp,lat,lon\n")
        for traj in trajectory_log.trajectories:
            for t, p in zip(traj.times, traj.points):
                fh.write(
                    f"{traj.vehicle_id},{traj.trajectory_id},{t:.3f},"
                    f"{p.lat:.9f},{p.lon:.9f}\n"
                )
    return paths
