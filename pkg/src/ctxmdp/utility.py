"""Cost tensors for the LP objectives: expected absolute travel-cost error
between the true next location and the reported location, over a task prior.

Every builder computes, for key k and output y,

    c[k, y] = sum_task p_task * sum_l p(l | k) * |path(l, task) - path(y, task)|

with one reversed-graph shortest-path tree per task; the builders differ only
in the conditional next-location model p(l | k).
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .geo import Key, LocationDomain, format_key, parse_key, plain_key
from .priors import PriorModel, grouped_transitions, next_location_dist, smoothed_dist
from .roadnet import RoadGraph, shortest_path_trees

log = logging.getLogger(__name__)


@dataclass
class CostTensor:
    """Utility-loss matrix over ordered keys x ordered outputs (km, >= 0)."""

    keys: list[Key]
    outputs: list[str]
    c: np.ndarray
    lags: tuple[int, ...] = ()

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        if self.c.shape != (len(self.keys), len(self.outputs)):
            raise ValueError(f"cost shape {self.c.shape} does not match index sizes")
        if not np.all(np.isfinite(self.c)) or np.any(self.c < 0.0):
            raise ValueError("cost entries must be finite and >= 0")
        self._key_index = {k: i for i, k in enumerate(self.keys)}

    def value(self, key: Key, output: str) -> float:
        return float(self.c[self._key_index[key], self.outputs.index(output)])


def _cost_from_conditionals(
    g: RoadGraph,
    dom: LocationDomain,
    keys: list[Key],
    conditionals: list[dict[str, float]],
    p_task: dict[str, float],
    lags: tuple[int, ...],
) -> CostTensor:
    if not p_task:
        raise ValueError("empty task prior")
    tasks = sorted(t for t, p in p_task.items() if p > 0.0)
    if not tasks:
        raise ValueError("task prior has no positive mass")
    for y in dom.outputs:
        if y not in g.nodes:
            raise KeyError(f"output {y!r} is not a graph node")
    # D[t, n] = travel cost from node n to task t; one tree per task.
    D = shortest_path_trees(g, tasks)
    pt = np.array([p_task[t] for t in tasks])
    out_idx = np.array([g.index_of(y) for y in dom.outputs])
    B = D[:, out_idx]  # (T, Y)
    fin_out = np.isfinite(B)
    cost = np.empty((len(keys), len(dom.outputs)))
    skipped = False
    for ki, dist in enumerate(conditionals):
        if not dist:
            raise ValueError(f"key {keys[ki]!r} has no next-location distribution")
        support = sorted(dist)
        for node in support:
            if node not in g.nodes:
                raise KeyError(f"next location {node!r} is not a graph node")
        sup_idx = np.array([g.index_of(n) for n in support])
        ps = np.array([dist[n] for n in support])
        A = D[:, sup_idx]  # (T, S)
        mask = np.isfinite(A)[:, :, None] & fin_out[:, None, :]  # (T, S, Y)
        if not mask.all():
            skipped = True
        diff = np.zeros(mask.shape)
        np.subtract(
            np.broadcast_to(A[:, :, None], mask.shape),
            np.broadcast_to(B[:, None, :], mask.shape),
            out=diff,
            where=mask,
        )
        np.abs(diff, out=diff)
        w = pt[:, None, None] * ps[None, :, None] * mask
        den = w.sum(axis=(0, 1))
        if np.any(den <= 0.0):
            bad = dom.outputs[int(np.argmin(den))]
            raise ValueError(
                f"no reachable (task, next-location) mass for key {keys[ki]!r}, "
                f"output {bad!r}"
            )
        cost[ki] = (w * diff).sum(axis=(0, 1)) / den
    if skipped:
        log.warning("unreachable path terms skipped and weights renormalized")
    return CostTensor(keys=list(keys), outputs=list(dom.outputs), c=cost, lags=lags)


def cost_context_blanket(
    g: RoadGraph,
    m: PriorModel,
    dom: LocationDomain,
    keys: list[Key],
    lags: tuple[int, ...] | None = None,
    p_task: dict[str, float] | None = None,
    smoothing: bool = True,
) -> CostTensor:
    """Blanket-conditioned tensor: p(l | k) is the transition distribution
    conditioned on (x, blanket values)."""
    if lags is None:
        width = len(keys[0][1]) if keys else 0
        lags = tuple(range(1, width + 1))
    if p_task is None:
        p_task = m.p_task
    grouped = grouped_transitions(m, lags)
    conditionals = []
    for key in keys:
        counts = grouped.get(key)
        if counts:
            conditionals.append(
                smoothed_dist(counts)
                if smoothing
                else {s: c / sum(counts.values()) for s, c in sorted(counts.items())}
            )
        else:
            conditionals.append(
                next_location_dist(m, key[0], key[1], lags, smoothing=smoothing)
            )
    return _cost_from_conditionals(g, dom, keys, conditionals, p_task, lags)


def cost_context_free(
    g: RoadGraph,
    m: PriorModel,
    dom: LocationDomain,
    p_task: dict[str, float] | None = None,
) -> CostTensor:
    """Context-free tensor: the next location is drawn from the marginal
    prior p_x for every key, so keys are plain location ids."""
    if p_task is None:
        p_task = m.p_task
    keys = [plain_key(x) for x in dom.secrets]
    conditionals = [m.p_x for _ in keys]
    return _cost_from_conditionals(g, dom, keys, conditionals, p_task, ())


def cost_markov1(
    g: RoadGraph,
    m: PriorModel,
    dom: LocationDomain,
    keys: list[Key] | None = None,
    p_task: dict[str, float] | None = None,
    smoothing: bool = True,
) -> CostTensor:
    """First-order tensor: keys are (x_t, (x_t-1,)) and the conditional uses
    only the one-step transition."""
    if keys is None:
        keys = m.transition_keys((1,))
    return cost_context_blanket(
        g, m, dom, keys, lags=(1,), p_task=p_task, smoothing=smoothing
    )


def save_tensor(tensor: CostTensor, path, index_path) -> None:
    """Write ``key,output,cost_km`` rows plus a sidecar index file; values at
    17 significant digits round-trip losslessly."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("key,output,cost_km\n")
        for ki, key in enumerate(tensor.keys):
            for yi, y in enumerate(tensor.outputs):
                fh.write(f"{format_key(key)},{y},{tensor.c[ki, yi]:.17g}\n")
    with open(index_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"lags={','.join(str(m) for m in tensor.lags)}\n")
        fh.write("[keys]\n")
        for key in tensor.keys:
            fh.write(format_key(key) + "\n")
        fh.write("[outputs]\n")
        for y in tensor.outputs:
            fh.write(y + "\n")


def load_tensor(path, index_path) -> CostTensor:
    keys: list[Key] = []
    outputs: list[str] = []
    lags: tuple[int, ...] = ()
    with open(index_path, encoding="utf-8") as fh:
        section = None
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("lags="):
                spec = line[5:]
                lags = tuple(int(tok) for tok in spec.split(",") if tok)
            elif line == "[keys]":
                section = "keys"
            elif line == "[outputs]":
                section = "outputs"
            elif line:
                if section == "keys":
                    keys.append(parse_key(line))
                elif section == "outputs":
                    outputs.append(line)
    c = np.zeros((len(keys), len(outputs)))
    key_index = {k: i for i, k in enumerate(keys)}
    out_index = {y: i for i, y in enumerate(outputs)}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "key,output,cost_km":
            raise ValueError(f"{path}: expected 'key,output,cost_km' header")
        for line in fh:
            key_text, y, value = line.rstrip("\n").rsplit(",", 2)
            c[key_index[parse_key(key_text)], out_index[y]] = float(value)
    return CostTensor(keys=keys, outputs=outputs, c=c, lags=lags)
