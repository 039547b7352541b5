import math

import numpy as np
import pytest

from ctxmdp.geo import GeoPoint
from ctxmdp.stats import correlation_table, knn_density


# --- textbook-formula oracles ------------------------------------------------

def pearson_oracle(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    xc, yc = x - x.mean(), y - y.mean()
    return float((xc * yc).sum() / math.sqrt((xc**2).sum() * (yc**2).sum()))


def rank_with_ties(v):
    v = np.asarray(v, float)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v))
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_oracle(x, y):
    return pearson_oracle(rank_with_ties(x), rank_with_ties(y))


def kendall_tau_b_oracle(x, y):
    n = len(x)
    concordant = discordant = 0
    tx = ty = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i] - x[j]
            dy = y[i] - y[j]
            if dx == 0 and dy == 0:
                continue
            if dx == 0:
                tx += 1
            elif dy == 0:
                ty += 1
            elif dx * dy > 0:
                concordant += 1
            else:
                discordant += 1
    denom = math.sqrt((concordant + discordant + tx) * (concordant + discordant + ty))
    return (concordant - discordant) / denom


class TestCorrelation:
    def test_monotone_identity(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        table = correlation_table({"f": x}, x * 2 + 1)
        row = table["f"]
        assert row.pearson == pytest.approx(1.0)
        assert row.spearman == pytest.approx(1.0)
        assert row.kendall == pytest.approx(1.0)

    def test_two_point_anticorrelation(self):
        table = correlation_table({"f": np.array([1.0, 2.0])}, np.array([2.0, 1.0]))
        assert table["f"].pearson == pytest.approx(-1.0)

    def test_matches_textbook_oracles(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            n = int(rng.integers(5, 40))
            x = rng.integers(0, 8, size=n).astype(float)  # ties likely
            y = rng.normal(size=n)
            table = correlation_table({"f": x}, y)
            row = table["f"]
            assert row.pearson == pytest.approx(pearson_oracle(x, y), abs=1e-12)
            assert row.spearman == pytest.approx(spearman_oracle(x, y), abs=1e-12)
            assert row.kendall == pytest.approx(kendall_tau_b_oracle(x, y), abs=1e-12)

    def test_constant_column_undefined(self):
        table = correlation_table(
            {"f": np.ones(5)}, np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        )
        assert table["f"].pearson is None
        assert table["f"].spearman is None
        assert table["f"].kendall is None

    def test_row_count_mismatch(self):
        with pytest.raises(ValueError):
            correlation_table({"f": np.ones(3)}, np.array([1.0, 2.0]))


class TestDensity:
    def test_coincident_points(self):
        pts = [GeoPoint(0, 0), GeoPoint(0, 0)]
        d = knn_density(pts, k=1, radius_m=100)
        assert d.knn_km[0, 0] == 0.0
        assert d.knn_km[1, 0] == 0.0

    def test_unit_line_hand_counts(self):
        # 10 points 1 km apart; radius 2.5 km covers at most two on each side
        deg = 1.0 / 111.19507973463156
        pts = [GeoPoint(0, i * deg) for i in range(10)]
        d = knn_density(pts, k=2, radius_m=2500)
        counts = d.neighbor_counts.tolist()
        assert counts == [2, 3, 4, 4, 4, 4, 4, 4, 3, 2]
        ccdf = dict(d.count_ccdf())
        assert ccdf[0] == 1.0
        assert ccdf[3] == pytest.approx(8 / 10)
        assert ccdf[5] == 0.0

    def test_mean_knn(self):
        deg = 1.0 / 111.19507973463156
        pts = [GeoPoint(0, 0), GeoPoint(0, deg), GeoPoint(0, 3 * deg)]
        d = knn_density(pts, k=2, radius_m=100)
        assert d.mean_knn_km[0] == pytest.approx((1 + 3) / 2, rel=1e-6)

    def test_k_too_large(self):
        with pytest.raises(ValueError, match="k="):
            knn_density([GeoPoint(0, 0), GeoPoint(0, 1)], k=2, radius_m=10)
