"""Row-stochastic perturbation matrices, the exponential-mechanism baseline,
expected-loss evaluation, and deterministic seeded output sampling."""

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .geo import Key, format_key, parse_key
from .utility import CostTensor

_MASK64 = (1 << 64) - 1
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15


def _splitmix64(state: int) -> tuple[int, int]:
    """One step of splitmix64; returns (next state, 64-bit output)."""
    state = (state + _SPLITMIX_GAMMA) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


@dataclass(frozen=True)
class MatrixMeta:
    eps: float
    eta: float
    metric: str = "haversine"
    builder: str = "unknown"
    lags: tuple[int, ...] = ()


class PerturbationMatrix:
    """Ordered secret keys mapped to probability rows over ordered outputs."""

    def __init__(
        self,
        keys: Sequence[Key],
        outputs: Sequence[str],
        probs: np.ndarray,
        meta: MatrixMeta,
        atol: float = 1e-9,
    ):
        self.keys: list[Key] = list(keys)
        self.outputs: list[str] = list(outputs)
        self.probs = np.asarray(probs, dtype=float)
        self.meta = meta
        if self.probs.shape != (len(self.keys), len(self.outputs)):
            raise ValueError(f"probability shape {self.probs.shape} does not match indices")
        if np.any(self.probs < -atol) or np.any(self.probs > 1.0 + atol):
            raise ValueError("probabilities outside [0, 1]")
        sums = self.probs.sum(axis=1)
        worst = float(np.abs(sums - 1.0).max()) if len(sums) else 0.0
        if worst > atol:
            raise ValueError(f"row sums deviate from 1 by {worst:.3g} (> {atol:.1g})")
        self._key_index = {k: i for i, k in enumerate(self.keys)}

    def key_index(self, key: Key) -> int:
        try:
            return self._key_index[key]
        except KeyError:
            raise KeyError(f"unknown key {format_key(key)!r}") from None

    def row(self, key: Key) -> np.ndarray:
        return self.probs[self.key_index(key)]


def exp_mechanism(
    keys: Sequence[Key],
    outputs: Sequence[str],
    dist: Callable[[Key, str], float],
    eps: float,
    eta: float = math.inf,
    metric: str = "haversine",
) -> PerturbationMatrix:
    """Exponential baseline: q[k, y] proportional to exp(-eps * d(k, y) / 2).

    The half factor plus the triangle inequality of the underlying metric
    makes the normalized mechanism eps-mDP over all key pairs.
    """
    if eps <= 0.0:
        raise ValueError(f"eps must be > 0, got {eps}")
    d = np.array([[dist(k, y) for y in outputs] for k in keys])
    # subtract the row minimum before exponentiating; cancels in the ratio
    scores = -0.5 * eps * (d - d.min(axis=1, keepdims=True))
    w = np.exp(scores)
    probs = w / w.sum(axis=1, keepdims=True)
    meta = MatrixMeta(eps=eps, eta=eta, metric=metric, builder="expmech")
    return PerturbationMatrix(keys, outputs, probs, meta)


def expected_loss(q: PerturbationMatrix, c: CostTensor, p: dict[Key, float]) -> float:
    """Expected utility loss sum_k p_k sum_y c[k, y] q[k, y] (km)."""
    if q.keys != c.keys or q.outputs != c.outputs:
        raise ValueError("matrix and cost tensor are indexed differently")
    weights = np.array([p[k] for k in q.keys])
    return float(np.einsum("k,ky,ky->", weights, c.c, q.probs))


def sample_output(q: PerturbationMatrix, key: Key, seed: int) -> str:
    """Inverse-CDF draw from the key's row on a splitmix64 stream; identical
    (matrix, key, seed) always yields the identical output."""
    ki = q.key_index(key)
    state = (int(seed) ^ ((ki + 1) * _SPLITMIX_GAMMA)) & _MASK64
    _, z = _splitmix64(state)
    u = z / 2.0**64
    acc = 0.0
    row = q.probs[ki]
    for yi in range(len(q.outputs)):
        acc += row[yi]
        if u < acc:
            return q.outputs[yi]
    return q.outputs[-1]  # guard against rounding in the cumulative sum


def blanket_key_for(x: str, history: Sequence[str], lags: Iterable[int]) -> Key:
    """Project recent history (oldest first, most recent last) onto the
    blanket lags, producing the mechanism row key."""
    lags = tuple(sorted(lags))
    if any(m < 1 for m in lags):
        raise ValueError("lags must be >= 1")
    if lags and lags[-1] > len(history):
        raise ValueError(
            f"history of length {len(history)} too short for lag {lags[-1]}"
        )
    return (x, tuple(history[len(history) - m] for m in lags))


def save_matrix(q: PerturbationMatrix, path) -> None:
    """Header block (eps, eta, metric, builder, lags) + ``key,output,prob``
    rows at 17 significant digits."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# ctxmdp-matrix v1\n")
        fh.write(f"eps={q.meta.eps:.17g}\n")
        fh.write(f"eta={q.meta.eta:.17g}\n")
        fh.write(f"metric={q.meta.metric}\n")
        fh.write(f"builder={q.meta.builder}\n")
        fh.write(f"lags={','.join(str(m) for m in q.meta.lags)}\n")
        fh.write("key,output,prob\n")
        for ki, key in enumerate(q.keys):
            for yi, y in enumerate(q.outputs):
                fh.write(f"{format_key(key)},{y},{q.probs[ki, yi]:.17g}\n")


def load_matrix(path) -> PerturbationMatrix:
    fields: dict[str, str] = {}
    rows: list[tuple[Key, str, float]] = []
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if first != "# ctxmdp-matrix v1":
            raise ValueError(f"{path}: not a ctxmdp matrix file")
        for line in fh:
            line = line.rstrip("\n")
            if line == "key,output,prob":
                break
            name, _, value = line.partition("=")
            fields[name] = value
        else:
            raise ValueError(f"{path}: missing 'key,output,prob' section")
        for line in fh:
            key_text, y, prob = line.rstrip("\n").rsplit(",", 2)
            rows.append((parse_key(key_text), y, float(prob)))
    keys: list[Key] = []
    outputs: list[str] = []
    for key, y, _ in rows:
        if not keys or keys[-1] != key:
            if key in keys:
                raise ValueError(f"{path}: key rows are not contiguous")
            keys.append(key)
        if y not in outputs:
            outputs.append(y)
    probs = np.zeros((len(keys), len(outputs)))
    key_index = {k: i for i, k in enumerate(keys)}
    out_index = {y: i for i, y in enumerate(outputs)}
    for key, y, prob in rows:
        probs[key_index[key], out_index[y]] = prob
    lags_text = fields.get("lags", "")
    meta = MatrixMeta(
        eps=float(fields["eps"]),
        eta=float(fields["eta"]),
        metric=fields.get("metric", "haversine"),
        builder=fields.get("builder", "unknown"),
        lags=tuple(int(tok) for tok in lags_text.split(",") if tok),
    )
    return PerturbationMatrix(keys, outputs, probs, meta)
