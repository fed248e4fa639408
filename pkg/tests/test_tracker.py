import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slipstream.tracker import (
    Detection,
    KFConfig,
    MultiOpponentTracker,
    Tracklet,
    TrackerConfig,
    TrackletStatus,
    associate,
    association_cost,
    kf_predict,
    kf_update,
    reid,
    trace_record,
)


def make_tracklet(x, P=None, tid=0):
    cfg = KFConfig()
    return Tracklet(id=tid, x=np.asarray(x, float),
                    P=cfg.initial_covariance() if P is None else P)


class TestKalman:
    def test_predict_constant_velocity(self):
        cfg = KFConfig(dt=0.1)
        t = kf_predict(make_tracklet([0, 0, 1, 0]), cfg)
        assert t.x[:2] == pytest.approx([0.1, 0.0])

    def test_predict_zero_velocity_diag_grows_by_q(self):
        cfg = KFConfig(dt=0.1)
        t0 = make_tracklet([2, 3, 0, 0], P=np.diag([1.0, 1.0, 0.0, 0.0]))
        t1 = kf_predict(t0, cfg)
        assert t1.x[:2] == pytest.approx([2.0, 3.0])
        assert np.diag(t1.P) - np.diag(t0.P) == pytest.approx(cfg.q * np.ones(4))

    def test_ten_predicts_closed_form(self):
        cfg = KFConfig(dt=0.1)
        t = make_tracklet([1, 2, 0.5, -0.5])
        for _ in range(10):
            t = kf_predict(t, cfg)
        assert t.x[:2] == pytest.approx([1 + 10 * 0.1 * 0.5, 2 - 10 * 0.1 * 0.5])

    def test_update_zero_innovation(self):
        cfg = KFConfig()
        t = make_tracklet([1, 1, 0.3, 0.1])
        t1 = kf_update(t, np.array([1.0, 1.0]), cfg)
        assert t1.x == pytest.approx(t.x)
        assert np.trace(t1.P) < np.trace(t.P)

    def test_update_uninformative_measurement(self):
        cfg = KFConfig(r=1e12)
        t = make_tracklet([1, 1, 0.3, 0.1])
        t1 = kf_update(t, np.array([5.0, 5.0]), cfg)
        assert np.abs(t1.x - t.x).max() < 1e-6

    def test_update_matches_hand_gain(self):
        cfg = KFConfig()
        t = make_tracklet([1, 1, 0.3, 0.1])
        k_hand = cfg.sigma2_pos / (cfg.sigma2_pos + cfg.r)
        t1 = kf_update(t, np.array([2.0, 1.0]), cfg)
        assert t1.x[0] == pytest.approx(1 + k_hand * (2 - 1), abs=1e-12)

    def test_posterior_on_segment_to_measurement(self):
        cfg = KFConfig()
        t = make_tracklet([0, 0, 0, 0])
        z = np.array([2.0, 1.0])
        t1 = kf_update(t, z, cfg)
        # collinearity of (posterior - prior) with (z - prior)
        cross = t1.x[0] * z[1] - t1.x[1] * z[0]
        assert abs(cross) < 1e-12

    def test_update_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            kf_update(make_tracklet([0, 0, 0, 0]), np.array([np.nan, 0.0]), KFConfig())

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_covariance_stays_symmetric_psd(self, seed):
        rng = np.random.default_rng(seed)
        cfg = KFConfig()
        t = make_tracklet(rng.normal(0, 2, 4))
        for _ in range(20):
            t = kf_predict(t, cfg)
            if rng.random() < 0.7:
                t = kf_update(t, t.x[:2] + rng.normal(0, 0.3, 2), cfg)
            assert np.abs(t.P - t.P.T).max() <= 1e-9
            assert np.linalg.eigvalsh(t.P).min() >= -1e-9


class TestAssociate:
    def test_singleton_within_gate(self):
        m, ut, ud = associate([make_tracklet([0, 0, 0, 0])],
                              [Detection(np.array([0.05, 0.0]))], gate=0.6)
        assert m == [(0, 0)] and not ut and not ud

    def test_cross_assignment_optimal(self):
        tr = [make_tracklet([0, 0, 0, 0], tid=0), make_tracklet([1, 0, 0, 0], tid=1)]
        de = [Detection(np.array([0.9, 0.0])), Detection(np.array([0.1, 0.0]))]
        m, _, _ = associate(tr, de, gate=1.0)
        assert sorted(m) == [(0, 1), (1, 0)]
        assert association_cost(tr, de) == pytest.approx(0.2)

    def test_gate_excludes_far_pairs(self):
        m, ut, ud = associate([make_tracklet([0, 0, 0, 0])],
                              [Detection(np.array([5.0, 0.0]))], gate=0.6)
        assert not m and ut == [0] and ud == [0]

    def test_empty_inputs(self):
        assert associate([], [], gate=1.0) == ([], [], [])

    @given(st.integers(0, 2 ** 32 - 1), st.integers(1, 6), st.integers(1, 6))
    @settings(max_examples=60, deadline=None)
    def test_cost_matches_brute_force(self, seed, n, m):
        rng = np.random.default_rng(seed)
        tr = [make_tracklet(np.r_[rng.uniform(0, 10, 2), 0, 0], tid=i)
              for i in range(n)]
        de = [Detection(rng.uniform(0, 10, 2)) for _ in range(m)]
        got = association_cost(tr, de)
        tp = np.array([t.position for t in tr])
        dp = np.array([d.z for d in de])
        dist = np.hypot(tp[:, None, 0] - dp[None, :, 0],
                        tp[:, None, 1] - dp[None, :, 1])
        k = min(n, m)
        if n <= m:
            best = min(sum(dist[i, p[i]] for i in range(k))
                       for p in itertools.permutations(range(m), k))
        else:
            best = min(sum(dist[p[j], j] for j in range(k))
                       for p in itertools.permutations(range(n), k))
        assert got == pytest.approx(best, abs=1e-12)


class TestReid:
    def test_inside_gate_reassociates(self):
        t = make_tracklet([5.0, 2.0, 0, 0], tid=7)
        matches = reid([t], [Detection(np.array([5.04, 2.0]))], TrackerConfig())
        assert matches == [(0, 0)]

    def test_outside_gate_rejected(self):
        t = make_tracklet([5.0, 2.0, 0, 0], tid=7)
        matches = reid([t], [Detection(np.array([5.2, 2.0]))], TrackerConfig())
        assert matches == []

    def test_occlusion_extrapolation_recovers_id(self):
        # coast 8 frames at v = (1, 0), detection reappears near the prediction
        cfg = KFConfig()
        t = make_tracklet([0.0, 0.0, 1.0, 0.0], P=np.diag([0.01, 0.01, 0.01, 0.01]))
        for _ in range(8):
            t = kf_predict(t, cfg)
        expected = 8 * cfg.dt * 1.0
        assert t.x[0] == pytest.approx(expected)
        det = Detection(np.array([expected + 0.03, 0.0]))
        assert reid([t], [det], TrackerConfig()) == [(0, 0)]


class TestLifecycle:
    def run_two_targets(self, steps=100, seed=42):
        trk = MultiOpponentTracker()
        rng = np.random.default_rng(seed)
        ids = set()
        for k in range(steps):
            p1 = np.array([0.025 * k, 0.0])
            p2 = np.array([0.025 * k, 5.0])
            out = trk.step([Detection(p1 + rng.normal(0, 0.03, 2)),
                            Detection(p2 + rng.normal(0, 0.03, 2))])
            ids.update(o.id for o in out)
        return trk, ids

    def test_two_targets_two_ids(self):
        _, ids = self.run_two_targets()
        assert ids == {0, 1}

    def test_empty_detections_decay(self):
        trk = MultiOpponentTracker()
        for k in range(5):
            trk.step([Detection(np.array([0.025 * k, 0.0]))])
        assert trk.tracklets
        for _ in range(TrackerConfig().max_misses + 2):
            trk.step([])
        assert not trk.tracklets

    def test_occlusion_bridged_same_id(self):
        trk = MultiOpponentTracker()
        for k in range(20):
            trk.step([Detection(np.array([0.025 * k, 0.0]))])
        tid = trk.tracklets[0].id
        for _ in range(TrackerConfig().max_misses - 1):
            trk.step([])
        assert trk.tracklets[0].status is TrackletStatus.LOST
        k = 20 + TrackerConfig().max_misses - 1
        out = trk.step([Detection(np.array([0.025 * k, 0.0]))])
        assert [o.id for o in out] == [tid]

    def test_confirmation_needs_n_init(self):
        trk = MultiOpponentTracker()
        out = trk.step([Detection(np.array([0.0, 0.0]))])
        assert out == []  # tentative on first sight
        out = trk.step([Detection(np.array([0.03, 0.0]))])
        assert out == []
        out = trk.step([Detection(np.array([0.06, 0.0]))])
        assert len(out) == 1

    def test_order_invariance(self):
        dets = [Detection(np.array([1.0, 0.0])), Detection(np.array([0.0, 1.0])),
                Detection(np.array([2.0, 2.0]))]
        t1, t2 = MultiOpponentTracker(), MultiOpponentTracker()
        for _ in range(6):
            t1.step(list(dets))
            t2.step(list(reversed(dets)))
        assert len(t1.tracklets) == len(t2.tracklets)
        for a, b in zip(t1.tracklets, t2.tracklets):
            assert a.id == b.id
            assert np.array_equal(a.x, b.x)
            assert np.array_equal(a.P, b.P)

    def test_id_stability_noise_free_separated(self):
        trk = MultiOpponentTracker()
        gate = trk.cfg.assoc_gate
        ids_seen = []
        for k in range(1000):
            p1 = np.array([0.01 * k, 0.0])
            p2 = np.array([0.01 * k, 4 * gate])  # separation > 2 * gate
            out = trk.step([Detection(p1), Detection(p2)])
            ids_seen.append(tuple(sorted(o.id for o in out)))
        assert set(ids_seen[5:]) == {(0, 1)}

    def test_trace_record_schema(self):
        trk = MultiOpponentTracker()
        dets = [Detection(np.array([1.0, 2.0]))]
        trk.step(dets)
        rec = trace_record(0.25, trk, dets)
        assert rec["t"] == 0.25
        assert rec["detections"] == [[1.0, 2.0]]
        assert {"id", "p", "v", "status"} <= set(rec["tracklets"][0])
