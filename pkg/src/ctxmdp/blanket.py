"""Markov-blanket machinery: a permutation-calibrated conditional G-test,
the lag-growing discovery loop, feature-binned dataset partitioning, and a
majority-vote decision table standing in for the trained classifier."""

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .geo import GeoPoint, haversine_km
from .priors import TrajectoryLog
from .roadnet import RoadGraph, snap_to_node

REJECT = "reject"
FAIL = "fail-to-reject"

ALPHA = 0.05
MIN_ROWS = 200
MPH_PER_KMH = 1.0 / 1.609344


@dataclass
class CiSample:
    """Rectangular rows (x_t, x_t-1, ..., x_t-gamma) of node ids."""

    rows: np.ndarray  # (n, gamma+1) unicode array

    def __post_init__(self):
        self.rows = np.asarray(self.rows)
        if self.rows.ndim != 2 or self.rows.shape[1] < 1:
            raise ValueError("rows must be a 2-d array with >= 1 column")

    @property
    def n(self) -> int:
        return int(self.rows.shape[0])

    @property
    def gamma(self) -> int:
        return int(self.rows.shape[1] - 1)

    @property
    def usable(self) -> bool:
        return self.n >= MIN_ROWS


def _codes(column: np.ndarray) -> tuple[np.ndarray, int]:
    values, inverse = np.unique(column, return_inverse=True)
    return inverse.astype(np.int64), len(values)


def _g_statistic(
    x: np.ndarray, t: np.ndarray, c: np.ndarray, nx: int, nt: int, nc: int
) -> float:
    """Conditional G statistic for x vs t within strata c; empty strata and
    degenerate strata contribute zero."""
    joint = (c * nx + x) * nt + t
    cells, counts = np.unique(joint, return_counts=True)
    t_code = cells % nt
    cx_code = cells // nt  # = c*nx + x
    c_code = cx_code // nx
    n_cx = np.bincount(c * nx + x, minlength=nc * nx)
    n_ct = np.bincount(c * nt + t, minlength=nc * nt)
    n_c = np.bincount(c, minlength=nc)
    expected = n_cx[cx_code] * n_ct[c_code * nt + t_code]
    return float(2.0 * np.sum(counts * np.log(counts * n_c[c_code] / expected)))


def ci_test(
    s: CiSample,
    target_lag: int,
    conditioning_lags: Iterable[int],
    n_permutations: int = 500,
    seed: int = 0,
) -> float:
    """p-value for the null "x_t independent of x_t-target_lag given the
    conditioning lags", from a conditional G-test with a within-stratum
    permutation null; deterministic under a fixed seed."""
    conditioning = tuple(sorted(set(conditioning_lags)))
    if s.n < MIN_ROWS:
        raise ValueError(f"need >= {MIN_ROWS} rows for CI testing, got {s.n}")
    if not 1 <= target_lag <= s.gamma:
        raise ValueError(f"target lag {target_lag} outside 1..{s.gamma}")
    for m in conditioning:
        if not 1 <= m <= s.gamma:
            raise ValueError(f"conditioning lag {m} outside 1..{s.gamma}")
    if target_lag in conditioning:
        raise ValueError(f"target lag {target_lag} also in conditioning set")
    if n_permutations < 1:
        raise ValueError("need at least one permutation")

    x, nx = _codes(s.rows[:, 0])
    t, nt = _codes(s.rows[:, target_lag])
    if conditioning:
        cond = s.rows[:, list(conditioning)]
        _, c = np.unique(cond, axis=0, return_inverse=True)
        c = c.astype(np.int64)
        nc = int(c.max()) + 1
    else:
        c = np.zeros(s.n, dtype=np.int64)
        nc = 1

    g_obs = _g_statistic(x, t, c, nx, nt, nc)
    order = np.argsort(c, kind="stable")
    rng = np.random.default_rng(seed)
    hits = 0
    t_perm = np.empty_like(t)
    for _ in range(n_permutations):
        r = rng.random(s.n)
        shuffled = np.lexsort((r, c))
        t_perm[order] = t[shuffled]
        if _g_statistic(x, t_perm, c, nx, nt, nc) >= g_obs - 1e-12:
            hits += 1
    return (1 + hits) / (1 + n_permutations)


@dataclass
class BlanketResult:
    lags: tuple[int, ...]
    exhausted: bool  # every lag added without a terminating fail-to-reject
    p_values: dict[int, float]  # iteration m -> p-value of its hypothesis
    labels: dict[int, str]  # iteration m -> reject | fail-to-reject


def identify_blanket(
    s: CiSample,
    gamma: int,
    seed: int = 0,
    alpha: float = ALPHA,
    n_permutations: int = 500,
) -> BlanketResult:
    """Grow the blanket lag by lag: start from {t-1}; while the hypothesis
    "x_t independent of x_t-m-1 given the current blanket" is rejected, add
    the next lag. Hypotheses beyond the stop are labeled fail-to-reject.

    Exhausting gamma returns all lags with the ``exhausted`` flag set.
    """
    if gamma < 1:
        raise ValueError(f"gamma must be >= 1, got {gamma}")
    if s.gamma < gamma:
        raise ValueError(f"sample holds {s.gamma} lags, need {gamma}")
    lags: list[int] = []
    p_values: dict[int, float] = {}
    labels: dict[int, str] = {}
    m = 1
    while True:
        lags.append(m)
        if m + 1 > gamma:
            return BlanketResult(tuple(lags), True, p_values, labels)
        p = ci_test(
            s,
            target_lag=m + 1,
            conditioning_lags=tuple(lags),
            n_permutations=n_permutations,
            seed=(seed * 1_000_003 + m) & 0x7FFFFFFF,
        )
        p_values[m] = p
        labels[m] = REJECT if p <= alpha else FAIL
        if p > alpha:
            break
        m += 1
    for mm in range(m + 1, gamma):
        labels[mm] = FAIL  # superset conditioning
    return BlanketResult(tuple(lags), False, p_values, labels)


@dataclass(frozen=True)
class FeatureBin:
    time_bin: int  # hour of day, 0..23
    speed_bin: int  # 5 mph intervals over [0, 120]
    region_bin: int  # row-major grid cell index


@dataclass(frozen=True)
class BinningGrids:
    region_rows: int
    region_cols: int
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    time_bins: int = 24
    speed_step_mph: float = 5.0
    speed_max_mph: float = 120.0

    @property
    def speed_bins(self) -> int:
        return int(round(self.speed_max_mph / self.speed_step_mph))

    def region_cell(self, p: GeoPoint) -> int:
        dlat = (self.lat_max - self.lat_min) / self.region_rows
        dlon = (self.lon_max - self.lon_min) / self.region_cols
        row = min(int((p.lat - self.lat_min) / dlat), self.region_rows - 1)
        col = min(int((p.lon - self.lon_min) / dlon), self.region_cols - 1)
        return max(row, 0) * self.region_cols + max(col, 0)

    def bin_features(self, hour: float, speed_mph: float, p: GeoPoint) -> FeatureBin:
        time_bin = int(hour) % self.time_bins
        speed_bin = min(
            max(int(speed_mph / self.speed_step_mph), 0), self.speed_bins - 1
        )
        return FeatureBin(time_bin, speed_bin, self.region_cell(p))


def pooled_ci_sample(trajectory_log: TrajectoryLog, g: RoadGraph, gamma: int) -> CiSample:
    """All context-complete windows of the log as one sample."""
    rows = []
    for traj in trajectory_log.trajectories:
        snapped = [snap_to_node(p, g) for p in traj.points]
        for t in range(gamma, len(snapped)):
            rows.append([snapped[t - m] for m in range(gamma + 1)])
    if not rows:
        raise ValueError(f"no window of depth {gamma} in the log")
    return CiSample(np.array(rows))


def partition_dataset(
    trajectory_log: TrajectoryLog,
    g: RoadGraph,
    gamma: int,
    grids: BinningGrids,
) -> dict[FeatureBin, CiSample]:
    """Assign each examined window to its (hour, average speed, region cell)
    bin. Average speed is taken over the full depth-gamma window since the
    tested blanket varies per hypothesis. Bins below the 200-row testing
    minimum stay in the map with ``usable == False``."""
    if not trajectory_log.trajectories:
        raise ValueError("empty trajectory log")
    buckets: dict[FeatureBin, list[list[str]]] = defaultdict(list)
    for traj in trajectory_log.trajectories:
        snapped = [snap_to_node(p, g) for p in traj.points]
        for t in range(gamma, len(snapped)):
            window_km = 0.0
            for i in range(t - gamma, t):
                window_km += haversine_km(traj.points[i], traj.points[i + 1])
            hours = (traj.times[t] - traj.times[t - gamma]) / 3600.0
            speed_mph = (window_km / hours) * MPH_PER_KMH if hours > 0 else 0.0
            hour = (traj.times[t] / 3600.0) % 24.0
            fb = grids.bin_features(hour, speed_mph, traj.points[t])
            buckets[fb].append([snapped[t - m] for m in range(gamma + 1)])
    return {fb: CiSample(np.array(rows)) for fb, rows in sorted(buckets.items(), key=lambda kv: (kv[0].time_bin, kv[0].speed_bin, kv[0].region_bin))}


@dataclass
class BlanketPredictor:
    """Majority-vote decision table over (feature bin, iteration index);
    unseen bins fall back to fail-to-reject, which stops blanket growth."""

    table: dict[tuple[FeatureBin, int], str]
    default: str = FAIL

    def predict(self, fb: FeatureBin, m: int) -> str:
        return self.table.get((fb, m), self.default)


def train_predictor(labels: Iterable[tuple[FeatureBin, int, str]]) -> BlanketPredictor:
    """Exact table on seen bins; conflicting duplicates resolve by majority,
    ties to fail-to-reject."""
    votes: dict[tuple[FeatureBin, int], Counter] = defaultdict(Counter)
    for fb, m, label in labels:
        if label not in (REJECT, FAIL):
            raise ValueError(f"unknown label {label!r}")
        votes[(fb, m)][label] += 1
    table = {}
    for key, counter in votes.items():
        table[key] = REJECT if counter[REJECT] > counter[FAIL] else FAIL
    return BlanketPredictor(table=table)


def predict_blanket(
    p: BlanketPredictor,
    time_bin: int,
    speed_bin: int,
    region_bin: int,
    gamma: int,
) -> tuple[int, ...]:
    """Table-driven analogue of the discovery loop: add lag m, query the
    table at m, grow while it rejects; bounded by gamma."""
    if gamma < 1:
        raise ValueError(f"gamma must be >= 1, got {gamma}")
    fb = FeatureBin(time_bin, speed_bin, region_bin)
    lags: list[int] = []
    m = 1
    while True:
        lags.append(m)
        if m + 1 > gamma:
            return tuple(lags)
        if p.predict(fb, m) != REJECT:
            return tuple(lags)
        m += 1


def save_labels(labels: Iterable[tuple[FeatureBin, int, str]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("time_bin,speed_bin,region_bin,m,label\n")
        for fb, m, label in labels:
            fh.write(f"{fb.time_bin},{fb.speed_bin},{fb.region_bin},{m},{label}\n")


def load_labels(path) -> list[tuple[FeatureBin, int, str]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "time_bin,speed_bin,region_bin,m,label":
            raise ValueError(f"{path}: unexpected labels header")
        for line in fh:
            tb, sb, rb, m, label = line.rstrip("\n").split(",")
            out.append((FeatureBin(int(tb), int(sb), int(rb)), int(m), label))
    return out


def save_predictor(p: BlanketPredictor, path) -> None:
    """Mirrors the labels file plus a final default-rule line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("time_bin,speed_bin,region_bin,m,label\n")
        for (fb, m) in sorted(p.table, key=lambda k: (k[0].time_bin, k[0].speed_bin, k[0].region_bin, k[1])):
            label = p.table[(fb, m)]
            fh.write(f"{fb.time_bin},{fb.speed_bin},{fb.region_bin},{m},{label}\n")
        fh.write(f"default,{p.default}\n")


def load_predictor(path) -> BlanketPredictor:
    table: dict[tuple[FeatureBin, int], str] = {}
    default = FAIL
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "time_bin,speed_bin,region_bin,m,label":
            raise ValueError(f"{path}: unexpected predictor header")
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("default,"):
                default = line.split(",", 1)[1]
                continue
            tb, sb, rb, m, label = line.split(",")
            table[(FeatureBin(int(tb), int(sb), int(rb)), int(m))] = label
    return BlanketPredictor(table=table, default=default)
