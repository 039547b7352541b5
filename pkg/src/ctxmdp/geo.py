"""Location domains, the Haversine base metric, its context-weighted
augmentation, and neighbor-pair enumeration under a distance threshold."""

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

# IUGG mean Earth radius.
EARTH_RADIUS_KM = 6371.0088

# Keys are (current location id, context ids ordered by increasing lag).
# Plain context-free keys carry an empty context tuple.
Key = tuple[str, tuple[str, ...]]


def plain_key(x: str) -> Key:
    return (x, ())


def format_key(key: Key) -> str:
    """Wire format: ``x`` for context-free keys, ``x|b1|b2`` otherwise."""
    x, ctx = key
    return "|".join((x,) + ctx)


def parse_key(text: str) -> Key:
    parts = text.split("|")
    return (parts[0], tuple(parts[1:]))


@dataclass(frozen=True)
class GeoPoint:
    """A WGS-ish point in decimal degrees; validated on construction."""

    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError(f"non-finite coordinates ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in km between two points (R = 6371.0088 km)."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = math.radians(b.lat - a.lat)
    dlam = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


@dataclass(frozen=True)
class ContextWeights:
    """Non-negative decay weights for context lags t-1 .. t-gamma."""

    weights: tuple[float, ...]

    def __post_init__(self):
        for w in self.weights:
            if not math.isfinite(w) or w < 0.0:
                raise ValueError(f"context weight {w} must be finite and >= 0")

    @property
    def gamma(self) -> int:
        return len(self.weights)

    @classmethod
    def geometric(cls, gamma: int, alpha: float = 0.5) -> "ContextWeights":
        """Default decay profile w_tau = alpha**tau for tau = 1..gamma."""
        return cls(tuple(alpha**tau for tau in range(1, gamma + 1)))


@dataclass(frozen=True)
class AugmentedSecret:
    """A current location joined with its recent-history context
    (ordered t-1 first)."""

    current: str
    context: tuple[str, ...] = ()

    @property
    def key(self) -> Key:
        return (self.current, self.context)


class LocationDomain:
    """Finite secret and output location sets with a distance oracle (km).

    The default metric is the Haversine distance between the stored
    coordinates; a custom symmetric metric callable may be injected.
    """

    def __init__(
        self,
        secrets: Sequence[tuple[str, GeoPoint]],
        outputs: Sequence[tuple[str, GeoPoint]] | None = None,
        metric: Callable[[str, str], float] | None = None,
    ):
        if outputs is None:
            outputs = list(secrets)
        self.secrets: tuple[str, ...] = tuple(i for i, _ in secrets)
        self.outputs: tuple[str, ...] = tuple(i for i, _ in outputs)
        if len(set(self.secrets)) != len(self.secrets):
            raise ValueError("duplicate secret ids")
        if len(set(self.outputs)) != len(self.outputs):
            raise ValueError("duplicate output ids")
        self.points: dict[str, GeoPoint] = {}
        for i, p in list(secrets) + list(outputs):
            if i in self.points and self.points[i] != p:
                raise ValueError(f"id {i!r} bound to two different points")
            self.points[i] = p
        self._metric = metric

    def distance(self, a: str, b: str) -> float:
        """Distance in km between two location ids."""
        if self._metric is not None:
            return self._metric(a, b)
        try:
            return haversine_km(self.points[a], self.points[b])
        except KeyError as exc:
            raise KeyError(f"unknown location id {exc.args[0]!r}") from None

    def validate(self, n_triples: int = 200, seed: int = 0, atol: float = 1e-9) -> None:
        """Spot-check metric axioms on sampled pairs and triples."""
        import random

        rng = random.Random(seed)
        ids = list(self.secrets)
        if not ids:
            raise ValueError("empty secret set")
        for i in ids[: min(len(ids), 50)]:
            if self.distance(i, i) != 0.0:
                raise ValueError(f"d({i},{i}) != 0")
        for _ in range(n_triples):
            a, b, c = (rng.choice(ids) for _ in range(3))
            dab, dba = self.distance(a, b), self.distance(b, a)
            if dab < 0.0:
                raise ValueError(f"negative distance d({a},{b})")
            if dab != dba:
                raise ValueError(f"asymmetric distance between {a} and {b}")
            if dab > self.distance(a, c) + self.distance(c, b) + atol:
                raise ValueError(f"triangle inequality fails on ({a},{b},{c})")

    @classmethod
    def from_files(cls, secrets_path, outputs_path=None, metric=None) -> "LocationDomain":
        secrets = load_locations(secrets_path)
        outputs = load_locations(outputs_path) if outputs_path is not None else None
        dom = cls(secrets, outputs, metric=metric)
        dom.validate()
        return dom


def load_locations(path) -> list[tuple[str, GeoPoint]]:
    """Read an ``id,lat,lon`` file (header required, UTF-8 decimal degrees)."""
    rows: list[tuple[str, GeoPoint]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:3]] != ["id", "lat", "lon"]:
            raise ValueError(f"{path}: expected header 'id,lat,lon'")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                point = GeoPoint(float(row[1]), float(row[2]))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            rows.append((row[0].strip(), point))
    return rows


def context_distance(
    s: AugmentedSecret,
    s2: AugmentedSecret,
    w: ContextWeights,
    dom: LocationDomain,
) -> float:
    """Augmented distance d(x,x') + sum_tau w_tau * d(v_tau, v'_tau)."""
    if len(s.context) != len(s2.context):
        raise ValueError(
            f"context length mismatch: {len(s.context)} vs {len(s2.context)}"
        )
    if len(s.context) != w.gamma:
        raise ValueError(f"context length {len(s.context)} != gamma {w.gamma}")
    total = dom.distance(s.current, s2.current)
    for w_tau, v, v2 in zip(w.weights, s.context, s2.context):
        total += w_tau * dom.distance(v, v2)
    return total


def key_metric(dom: LocationDomain, weights: Sequence[float]) -> Callable[[Key, Key], float]:
    """Distance oracle over keys whose context tuples carry ``len(weights)``
    entries; weights are per-slot (e.g. per blanket lag, preserving the
    full-profile weight of each lag)."""
    weights = tuple(weights)

    def dist(a: Key, b: Key) -> float:
        xa, ca = a
        xb, cb = b
        if len(ca) != len(weights) or len(cb) != len(weights):
            raise ValueError("key context length does not match weights")
        total = dom.distance(xa, xb)
        for w_tau, v, v2 in zip(weights, ca, cb):
            total += w_tau * dom.distance(v, v2)
        return total

    return dist


def metric_id(weights: Sequence[float]) -> str:
    """Stable identifier for the (possibly empty) weighted context metric."""
    if not weights:
        return "haversine"
    return "ctx:" + ",".join("%.17g" % w for w in weights)


def parse_metric_id(text: str) -> tuple[float, ...]:
    if text == "haversine":
        return ()
    if not text.startswith("ctx:"):
        raise ValueError(f"unknown metric id {text!r}")
    return tuple(float(tok) for tok in text[4:].split(","))


def neighbor_pairs(
    keys: Sequence,
    dist: Callable,
    eta: float,
) -> list[tuple]:
    """Every unordered pair of distinct keys with distance <= eta (inclusive).

    Returns (key_i, key_j, distance) triples in enumeration order; pass
    ``eta=math.inf`` for the complete pair set.
    """
    if eta < 0.0 or math.isnan(eta):
        raise ValueError(f"eta must be >= 0, got {eta}")
    out = []
    for i in range(len(keys)):
        for j in range(i + 1, len(keys)):
            d = dist(keys[i], keys[j])
            if d <= eta:
                out.append((keys[i], keys[j], d))
    return out
