import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from conftest import random_domain
from ctxmdp.audit import verify_mdp
from ctxmdp.geo import key_metric, plain_key
from ctxmdp.mechanisms import (
    MatrixMeta,
    PerturbationMatrix,
    blanket_key_for,
    exp_mechanism,
    expected_loss,
    load_matrix,
    sample_output,
    save_matrix,
)
from ctxmdp.utility import CostTensor


def toy_matrix(rows, keys=None, outputs=None, **meta):
    rows = np.asarray(rows, dtype=float)
    keys = keys or [plain_key(f"k{i}") for i in range(rows.shape[0])]
    outputs = outputs or [f"y{i}" for i in range(rows.shape[1])]
    defaults = dict(eps=1.0, eta=math.inf)
    defaults.update(meta)
    return PerturbationMatrix(keys, outputs, rows, MatrixMeta(**defaults))


class TestExpMechanism:
    def test_equidistant_outputs_split_evenly(self):
        q = exp_mechanism(
            [plain_key("k")], ["y0", "y1"], lambda k, y: 1.7, eps=0.8
        )
        assert q.probs[0].tolist() == pytest.approx([0.5, 0.5])

    def test_hand_normalization(self):
        # d = (0, 1), eps = ln4: weights (1, 1/2) -> (2/3, 1/3)
        q = exp_mechanism(
            [plain_key("k")],
            ["near", "far"],
            lambda k, y: 0.0 if y == "near" else 1.0,
            eps=math.log(4),
        )
        assert q.probs[0].tolist() == pytest.approx([2 / 3, 1 / 3])

    def test_eps_positive_required(self):
        with pytest.raises(ValueError):
            exp_mechanism([plain_key("k")], ["y"], lambda k, y: 0.0, eps=0.0)

    def test_satisfies_budget_exactly(self):
        rng = np.random.default_rng(0)
        dom = random_domain(rng, 12)
        keys = [plain_key(x) for x in dom.secrets]
        eps = 0.9
        q = exp_mechanism(
            keys, list(dom.outputs), lambda k, y: dom.distance(k[0], y), eps,
        )
        check = verify_mdp(q, key_metric(dom, ()), eps, eta=math.inf, tol=1e-12)
        assert check.passed

    def test_all_pairs_ratio_bound(self):
        rng = np.random.default_rng(1)
        dom = random_domain(rng, 10)
        keys = [plain_key(x) for x in dom.secrets]
        eps = 1.1
        q = exp_mechanism(
            keys, list(dom.outputs), lambda k, y: dom.distance(k[0], y), eps
        )
        for i in range(len(keys)):
            for j in range(len(keys)):
                if i == j:
                    continue
                d = dom.distance(keys[i][0], keys[j][0])
                bound = math.exp(eps * d)
                ratios = q.probs[i] / q.probs[j]
                assert np.all(ratios <= bound * (1 + 1e-12))


class TestExpectedLoss:
    def test_zero_cost_support(self):
        keys = [plain_key("a")]
        q = toy_matrix([[1.0, 0.0]], keys=keys)
        c = CostTensor(keys=keys, outputs=q.outputs, c=np.array([[0.0, 5.0]]))
        assert expected_loss(q, c, {keys[0]: 1.0}) == 0.0

    def test_hand_expectation(self):
        keys = [plain_key("a")]
        q = toy_matrix([[0.5, 0.5]], keys=keys)
        c = CostTensor(keys=keys, outputs=q.outputs, c=np.array([[0.0, 2.0]]))
        assert expected_loss(q, c, {keys[0]: 1.0}) == pytest.approx(1.0)

    def test_index_mismatch_rejected(self):
        keys = [plain_key("a")]
        q = toy_matrix([[0.5, 0.5]], keys=keys)
        c = CostTensor(keys=[plain_key("b")], outputs=q.outputs, c=np.array([[0.0, 2.0]]))
        with pytest.raises(ValueError, match="indexed"):
            expected_loss(q, c, {keys[0]: 1.0})

    @given(
        st.integers(min_value=1, max_value=5),
        st.integers(min_value=1, max_value=5),
        st.integers(min_value=0, max_value=10_000),
    )
    @settings(max_examples=40, deadline=None)
    def test_matches_triple_loop(self, nk, ny, seed):
        rng = np.random.default_rng(seed)
        keys = [plain_key(f"k{i}") for i in range(nk)]
        outputs = [f"y{i}" for i in range(ny)]
        probs = rng.dirichlet(np.ones(ny), size=nk)
        q = PerturbationMatrix(keys, outputs, probs, MatrixMeta(1.0, math.inf))
        c = CostTensor(keys=keys, outputs=outputs, c=rng.uniform(0, 3, (nk, ny)))
        pr = rng.dirichlet(np.ones(nk))
        prior = {k: float(p) for k, p in zip(keys, pr)}
        want = 0.0
        for i, k in enumerate(keys):
            for j in range(ny):
                want += prior[k] * c.c[i, j] * probs[i, j]
        assert expected_loss(q, c, prior) == pytest.approx(want, abs=1e-12)


class TestSampling:
    def test_point_mass_row(self):
        q = toy_matrix([[0.0, 1.0, 0.0]])
        for seed in range(25):
            assert sample_output(q, q.keys[0], seed) == "y1"

    def test_fixed_seed_reproducible(self):
        q = toy_matrix([[0.3, 0.4, 0.3]])
        a = sample_output(q, q.keys[0], 123456789)
        b = sample_output(q, q.keys[0], 123456789)
        assert a == b

    def test_unknown_key(self):
        q = toy_matrix([[1.0]])
        with pytest.raises(KeyError):
            sample_output(q, plain_key("zz"), 0)

    def test_empirical_frequencies(self):
        q = toy_matrix([[2 / 3, 1 / 3]])
        n = 100_000
        hits = Counter(sample_output(q, q.keys[0], seed) for seed in range(n))
        for yi, p in ((0, 2 / 3), (1, 1 / 3)):
            freq = hits[f"y{yi}"] / n
            sigma = math.sqrt(p * (1 - p) / n)
            assert abs(freq - p) <= 3 * sigma
        stat = chisquare(
            [hits["y0"], hits["y1"]], [n * 2 / 3, n * 1 / 3]
        )
        assert stat.pvalue > 0.01

    def test_different_keys_get_different_streams(self):
        q = toy_matrix([[0.5, 0.5], [0.5, 0.5]])
        draws0 = [sample_output(q, q.keys[0], s) for s in range(200)]
        draws1 = [sample_output(q, q.keys[1], s) for s in range(200)]
        assert draws0 != draws1


class TestBlanketKey:
    def test_empty_blanket_is_plain(self):
        assert blanket_key_for("x", ["a", "b"], ()) == plain_key("x")

    def test_single_lag(self):
        assert blanket_key_for("x", ["a", "b"], (1,)) == ("x", ("b",))

    def test_two_lags_order_matches_priors(self):
        # history (..., A, B): lag 1 = B, lag 2 = A -> key (x, (B, A))
        assert blanket_key_for("x", ["a", "b"], (1, 2)) == ("x", ("b", "a"))

    def test_insufficient_history(self):
        with pytest.raises(ValueError, match="too short"):
            blanket_key_for("x", ["a"], (1, 2))


class TestSerialization:
    def test_round_trip_preserves_rows(self, tmp_path):
        rng = np.random.default_rng(5)
        keys = [("x0", ("c1", "c2")), ("x1", ("c1", "c0")), plain_key("x2")]
        outputs = ["y0", "y1", "y2", "y3"]
        probs = rng.dirichlet(np.ones(4), size=3)
        meta = MatrixMeta(eps=0.3, eta=5.0, metric="ctx:0.5,0.25", builder="lp-blanket", lags=(1, 2))
        q = PerturbationMatrix(keys, outputs, probs, meta)
        path = tmp_path / "m.csv"
        save_matrix(q, path)
        back = load_matrix(path)
        assert back.keys == q.keys
        assert back.outputs == q.outputs
        assert back.meta == q.meta
        assert np.max(np.abs(back.probs - q.probs)) < 1e-12
        assert np.max(np.abs(back.probs.sum(axis=1) - 1.0)) < 1e-12

    def test_row_sum_validation(self):
        with pytest.raises(ValueError, match="row sums"):
            toy_matrix([[0.5, 0.4]])

    def test_probability_range_validation(self):
        with pytest.raises(ValueError, match="outside"):
            toy_matrix([[1.5, -0.5]])
