import math

import numpy as np
import pytest

from conftest import line_graph
from ctxmdp.geo import GeoPoint
from ctxmdp.priors import (
    PriorModel,
    Trajectory,
    TrajectoryLog,
    estimate_priors,
    load_trajectories,
    next_location_dist,
    task_prior,
)


def traj_on(g, node_seq, vid="v0", tid="t0", dt=10.0):
    pts = [g.nodes[n] for n in node_seq]
    return Trajectory(vid, tid, [i * dt for i in range(len(pts))], pts)


@pytest.fixture
def abc_log(path3):
    return TrajectoryLog([traj_on(path3, ["a0", "a1", "a2"])])


@pytest.fixture
def path3():
    return line_graph(3)


class TestTrajectoryLoading:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text(
            "vehicle_id,trajectory_id,timestamp,lat,lon\n"
            "v0,t0,10.0,0.0,0.0\n"
            "v0,t0,0.0,0.0,0.01\n"  # out of order; must be sorted
            "v1,t0,5.0,0.0,0.02\n",
            encoding="utf-8",
        )
        log = load_trajectories(path)
        assert len(log) == 2
        assert log.trajectories[0].times == [0.0, 10.0]

    def test_duplicate_timestamps_rejected(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text(
            "vehicle_id,trajectory_id,timestamp,lat,lon\n"
            "v0,t0,1.0,0.0,0.0\nv0,t0,1.0,0.0,0.01\n",
            encoding="utf-8",
        )
        with pytest.raises(ValueError, match="strictly increasing"):
            load_trajectories(path)

    def test_header_required(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("v0,t0,1.0,0.0,0.0\n", encoding="utf-8")
        with pytest.raises(ValueError, match="header"):
            load_trajectories(path)


class TestEstimatePriors:
    def test_hand_counts_single_trajectory(self, path3, abc_log):
        # A,B,C with gamma=1: joint support {(B,(A)), (C,(B))}, 1/2 each
        m = estimate_priors(abc_log, path3, gamma=1)
        assert m.joint_counts[("a1", ("a0",))] == 1
        assert m.joint_counts[("a2", ("a1",))] == 1
        assert m.p_joint[("a1", ("a0",))] == pytest.approx(0.5)
        assert m.p_joint[("a2", ("a1",))] == pytest.approx(0.5)

    def test_gamma_zero_degenerates_to_marginal(self, path3, abc_log):
        m = estimate_priors(abc_log, path3, gamma=0)
        assert set(m.p_joint) == {("a0", ()), ("a1", ()), ("a2", ())}
        for (x, _ctx), p in m.p_joint.items():
            assert m.p_x[x] == pytest.approx(p)

    def test_empty_log_rejected(self, path3):
        with pytest.raises(ValueError, match="empty"):
            estimate_priors(TrajectoryLog([]), path3, gamma=1)

    def test_gamma_longer_than_every_trajectory(self, path3, abc_log):
        with pytest.raises(ValueError, match="gamma=5"):
            estimate_priors(abc_log, path3, gamma=5)

    def test_distributions_sum_to_one(self, path3):
        log = TrajectoryLog(
            [
                traj_on(path3, ["a0", "a1", "a2", "a1", "a0"], tid="t0"),
                traj_on(path3, ["a2", "a1", "a0", "a1"], tid="t1"),
            ]
        )
        m = estimate_priors(log, path3, gamma=2)
        assert sum(m.p_joint.values()) == pytest.approx(1.0, abs=1e-9)
        assert sum(m.p_x.values()) == pytest.approx(1.0, abs=1e-9)
        assert all(p >= 0 for p in m.p_joint.values())

    def test_marginalization_identity(self, path3):
        log = TrajectoryLog(
            [
                traj_on(path3, ["a0", "a1", "a2", "a1", "a0", "a1"], tid="t0"),
                traj_on(path3, ["a2", "a1", "a0", "a1", "a2"], tid="t1"),
            ]
        )
        m = estimate_priors(log, path3, gamma=2)
        marg = {}
        for (x, _b), p in m.p_joint.items():
            marg[x] = marg.get(x, 0.0) + p
        assert set(marg) == set(m.p_x)
        for x, p in marg.items():
            assert m.p_x[x] == pytest.approx(p, abs=1e-9)
        # coarser-lag joints marginalize consistently too
        lag1 = m.joint_for_lags((1,))
        for x in marg:
            total = sum(p for (xx, _b), p in lag1.items() if xx == x)
            assert total == pytest.approx(m.p_x[x], abs=1e-9)


class TestNextLocationDist:
    def test_deterministic_chain(self, path3):
        log = TrajectoryLog([traj_on(path3, ["a0", "a1"] * 6)])
        m = estimate_priors(log, path3, gamma=0)
        dist = next_location_dist(m, "a0", ())
        assert dist == {"a1": 1.0}

    def test_uniform_two_successors(self, path3):
        log = TrajectoryLog(
            [
                traj_on(path3, ["a1", "a0"], tid="t0"),
                traj_on(path3, ["a1", "a2"], tid="t1"),
            ]
        )
        m = estimate_priors(log, path3, gamma=0)
        dist = next_location_dist(m, "a1", ())
        assert dist == {"a0": 0.5, "a2": 0.5}

    def test_unseen_key_without_smoothing(self, path3, abc_log):
        m = estimate_priors(abc_log, path3, gamma=1)
        with pytest.raises(KeyError):
            next_location_dist(m, "a2", ("a1",), smoothing=False)

    def test_unseen_key_with_smoothing_falls_back(self, path3, abc_log):
        m = estimate_priors(abc_log, path3, gamma=1)
        dist = next_location_dist(m, "a2", ("a1",), smoothing=True)
        assert sum(dist.values()) == pytest.approx(1.0)
        assert all(p > 0 for p in dist.values())

    def test_smoothing_flattens_counts(self, path3):
        log = TrajectoryLog(
            [
                traj_on(path3, ["a1", "a0"], tid=f"t{i}")
                for i in range(3)
            ]
            + [traj_on(path3, ["a1", "a2"], tid="t9")]
        )
        m = estimate_priors(log, path3, gamma=0)
        raw = next_location_dist(m, "a1", (), smoothing=False)
        smoothed = next_location_dist(m, "a1", (), smoothing=True)
        assert raw == {"a0": 0.75, "a2": 0.25}
        assert smoothed == {"a0": 4 / 6, "a2": 2 / 6}


class TestTaskPrior:
    def test_uniform(self, path3, abc_log):
        m = estimate_priors(abc_log, path3, gamma=0)
        p = task_prior(m, "uniform")
        assert p == {n: pytest.approx(1 / 3) for n in path3.node_ids}

    def test_empirical_visit_frequencies(self, path3):
        log = TrajectoryLog([traj_on(path3, ["a0", "a0", "a0", "a1"])])
        m = estimate_priors(log, path3, gamma=0)
        p = task_prior(m, "empirical")
        assert p["a0"] == pytest.approx(0.75)
        assert p["a1"] == pytest.approx(0.25)

    def test_empty_node_set_rejected(self, path3, abc_log):
        m = estimate_priors(abc_log, path3, gamma=0)
        m.nodes = ()
        with pytest.raises(ValueError):
            task_prior(m, "uniform")

    def test_unknown_mode(self, path3, abc_log):
        m = estimate_priors(abc_log, path3, gamma=0)
        with pytest.raises(ValueError):
            task_prior(m, "zipf")


def test_transition_weights_sum_to_one(path3):
    log = TrajectoryLog(
        [traj_on(path3, ["a0", "a1", "a2", "a1", "a0", "a1", "a2"])]
    )
    m = estimate_priors(log, path3, gamma=2)
    for lags in ((), (1,), (2,), (1, 2)):
        w = m.transition_weights(lags)
        assert sum(w.values()) == pytest.approx(1.0, abs=1e-12)
        assert m.transition_keys(lags) == sorted(w)
