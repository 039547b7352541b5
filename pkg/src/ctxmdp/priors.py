"""Empirical probability inputs for the mechanism-design LPs: joint
secret-context priors, next-location transition statistics, and task priors,
estimated from node-snapped trajectory logs."""

import csv
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from .geo import GeoPoint, Key
from .roadnet import RoadGraph, snap_to_node

log = logging.getLogger(__name__)


@dataclass
class Trajectory:
    vehicle_id: str
    trajectory_id: str
    times: list[float]
    points: list[GeoPoint]

    def __post_init__(self):
        if len(self.times) != len(self.points):
            raise ValueError("times/points length mismatch")
        for a, b in zip(self.times, self.times[1:]):
            if not b > a:
                raise ValueError(
                    f"trajectory {self.vehicle_id}/{self.trajectory_id}: "
                    f"timestamps not strictly increasing ({a} -> {b})"
                )


@dataclass
class TrajectoryLog:
    trajectories: list[Trajectory]

    def __len__(self) -> int:
        return len(self.trajectories)


def load_trajectories(path) -> TrajectoryLog:
    """Read ``vehicle_id,trajectory_id,timestamp,lat,lon`` rows (header
    required); rows are sorted by timestamp within each trajectory."""
    groups: dict[tuple[str, str], list[tuple[float, GeoPoint]]] = defaultdict(list)
    order: list[tuple[str, str]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["vehicle_id", "trajectory_id", "timestamp", "lat", "lon"]
        if header is None or [h.strip().lower() for h in header[:5]] != expected:
            raise ValueError(f"{path}: expected header '{','.join(expected)}'")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 5:
                raise ValueError(f"{path}:{lineno}: expected 5 fields")
            try:
                t = float(row[2])
                p = GeoPoint(float(row[3]), float(row[4]))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            gid = (row[0].strip(), row[1].strip())
            if gid not in groups:
                order.append(gid)
            groups[gid].append((t, p))
    trajectories = []
    for vid, tid in order:
        rows = sorted(groups[(vid, tid)], key=lambda r: r[0])
        trajectories.append(
            Trajectory(vid, tid, [r[0] for r in rows], [r[1] for r in rows])
        )
    return TrajectoryLog(trajectories)


@dataclass
class PriorModel:
    """Counts and distributions backing the LP objectives.

    ``joint_counts`` counts every context-complete slot (x_t, v); the subset
    with an observed successor additionally backs ``transition_counts``.
    Stored distributions are add-one smoothed over the observed support; all
    coarser-lag joints are marginals of the same smoothed full-depth joint, so
    marginalization identities hold exactly.
    """

    gamma: int
    joint_counts: Counter  # Key -> count, context at full depth gamma
    transition_counts: dict  # Key -> Counter of successor node ids
    visit_counts: Counter  # node id -> count over all snapped records
    nodes: tuple[str, ...]  # graph node ids (task prior support)
    p_x: dict[str, float] = field(default_factory=dict)
    p_joint: dict[Key, float] = field(default_factory=dict)
    p_task: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.p_joint:
            total = sum(self.joint_counts.values())
            k = len(self.joint_counts)
            self.p_joint = {
                key: (c + 1) / (total + k) for key, c in sorted(self.joint_counts.items())
            }
        if not self.p_x:
            self.p_x = self.joint_for_lags(())
        if not self.p_task:
            self.p_task = task_prior(self, mode="uniform")

    def joint_for_lags(self, lags: tuple[int, ...], smoothed: bool = True) -> dict:
        """Joint distribution over (x, context restricted to ``lags``).

        Lags are 1-based; ``()`` gives the marginal over x alone. Coarse
        joints are exact marginals of the stored full-depth joint.  Keys for
        ``lags == ()`` are plain node ids.
        """
        for m in lags:
            if not 1 <= m <= self.gamma:
                raise ValueError(f"lag {m} outside 1..{self.gamma}")
        source = (
            self.p_joint
            if smoothed
            else _normalize_counter(self.joint_counts)
        )
        out: dict = defaultdict(float)
        for (x, ctx), p in source.items():
            sub = tuple(ctx[m - 1] for m in lags)
            out[x if not lags else (x, sub)] += p
        return dict(out)

    def transition_weights(self, lags: tuple[int, ...]) -> dict[Key, float]:
        """Unsmoothed joint over successor-backed keys at ``lags`` (weights of
        the transition rows); sums to 1."""
        counts: Counter = Counter()
        for (x, ctx), succ in self.transition_counts.items():
            sub = tuple(ctx[m - 1] for m in lags)
            counts[(x, sub)] += sum(succ.values())
        return _normalize_counter(counts)

    def transition_keys(self, lags: tuple[int, ...]) -> list[Key]:
        return sorted(self.transition_weights(lags))


def _normalize_counter(counts: Counter) -> dict:
    total = sum(counts.values())
    if total == 0:
        return {}
    return {k: c / total for k, c in sorted(counts.items())}


def estimate_priors(trajectory_log: TrajectoryLog, g: RoadGraph, gamma: int) -> PriorModel:
    """Snap every record to its nearest node and count (x_t, context, x_t+1)
    tuples over all context-complete slots."""
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    if not trajectory_log.trajectories:
        raise ValueError("empty trajectory log")
    joint_counts: Counter = Counter()
    transition_counts: dict[Key, Counter] = defaultdict(Counter)
    visit_counts: Counter = Counter()
    for traj in trajectory_log.trajectories:
        snapped = [snap_to_node(p, g) for p in traj.points]
        visit_counts.update(snapped)
        for t in range(gamma, len(snapped)):
            # context ordered t-1 first
            ctx = tuple(snapped[t - m] for m in range(1, gamma + 1))
            key: Key = (snapped[t], ctx)
            joint_counts[key] += 1
            if t + 1 < len(snapped):
                transition_counts[key][snapped[t + 1]] += 1
    if not joint_counts:
        raise ValueError(f"no trajectory long enough for gamma={gamma}")
    return PriorModel(
        gamma=gamma,
        joint_counts=joint_counts,
        transition_counts=dict(transition_counts),
        visit_counts=visit_counts,
        nodes=g.node_ids,
    )


def grouped_transitions(m: PriorModel, lags: tuple[int, ...]) -> dict[Key, Counter]:
    """Successor counts aggregated onto keys restricted to ``lags``."""
    for mm in lags:
        if not 1 <= mm <= m.gamma:
            raise ValueError(f"lag {mm} outside 1..{m.gamma}")
    out: dict[Key, Counter] = defaultdict(Counter)
    for (x, ctx), succ in m.transition_counts.items():
        out[(x, tuple(ctx[mm - 1] for mm in lags))].update(succ)
    return dict(out)


def smoothed_dist(grouped: Counter) -> dict[str, float]:
    """Add-one smoothing over the group's own observed successor support."""
    n = sum(grouped.values())
    k = len(grouped)
    return {s: (c + 1) / (n + k) for s, c in sorted(grouped.items())}


def next_location_dist(
    m: PriorModel,
    x: str,
    b: tuple[str, ...],
    lags: tuple[int, ...] | None = None,
    smoothing: bool = True,
) -> dict[str, float]:
    """Distribution of the next-slot location given current ``x`` and context
    values ``b`` at the given lags (defaults to lags 1..len(b)).

    With smoothing the counts are add-one smoothed over the group's observed
    successor support; a key with no observations falls back to the uniform
    Laplace limit over the globally observed successor support.
    """
    if lags is None:
        lags = tuple(range(1, len(b) + 1))
    if len(lags) != len(b):
        raise ValueError("lags/context length mismatch")
    grouped = grouped_transitions(m, lags).get((x, b), Counter())
    if grouped:
        if not smoothing:
            return _normalize_counter(grouped)
        return smoothed_dist(grouped)
    if not smoothing:
        raise KeyError(f"no observed successors for key ({x!r}, {b!r})")
    support = sorted({s for succ in m.transition_counts.values() for s in succ})
    if not support:
        raise ValueError("prior model has no transition observations")
    log.debug("unseen key (%r, %r): uniform fallback over %d successors", x, b, len(support))
    return {s: 1.0 / len(support) for s in support}


def task_prior(m: PriorModel, mode: str = "uniform") -> dict[str, float]:
    """Task-location prior over graph nodes: uniform or empirical visits."""
    if not m.nodes:
        raise ValueError("empty node set")
    if mode == "uniform":
        p = 1.0 / len(m.nodes)
        return {n: p for n in m.nodes}
    if mode == "empirical":
        total = sum(m.visit_counts.values())
        if total == 0:
            raise ValueError("no visits recorded for empirical task prior")
        return {n: c / total for n, c in sorted(m.visit_counts.items())}
    raise ValueError(f"unknown task prior mode {mode!r}")
