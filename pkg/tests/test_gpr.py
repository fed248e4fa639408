import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slipstream.gpr import (
    GPFitError,
    GPKernel,
    OpponentProfile,
    gp_fit,
    gp_predict,
    wrapped_distance,
)

L = 40.0
SINE_AMP = 0.3


def sine_dataset(n=100, noise=0.05, seed=7):
    rng = np.random.default_rng(seed)
    s = np.sort(rng.uniform(0, L, n))
    y_true = SINE_AMP * np.sin(2 * np.pi * s / L)
    return s, y_true + rng.normal(0, noise, n)


def default_kernel(**kw):
    base = dict(length_scale=2.0, signal_var=0.25, noise_var=0.01,
                period=L, prior_mean=None)
    base.update(kw)
    return GPKernel(**base)


class TestGPFitPredict:
    def test_near_interpolation_small_noise(self):
        m = gp_fit(np.array([3.0, 10.0]), np.array([0.2, -0.1]),
                   default_kernel(noise_var=1e-8))
        mean, _ = gp_predict(m, 3.0)
        assert mean == pytest.approx(0.2, abs=1e-4)

    def test_constant_targets_everywhere(self):
        m = gp_fit(np.array([1.0, 5.0, 9.0]), np.array([2.5, 2.5, 2.5]),
                   default_kernel())
        mean, _ = gp_predict(m, np.linspace(0, L, 200, endpoint=False))
        assert np.abs(mean - 2.5).max() < 1e-6

    def test_sine_recovery(self):
        s, y = sine_dataset()
        m = gp_fit(s, y, default_kernel())
        grid = np.linspace(0, L, 500, endpoint=False)
        mean, _ = gp_predict(m, grid)
        rmse = np.sqrt(np.mean((mean - SINE_AMP * np.sin(2 * np.pi * grid / L)) ** 2))
        assert rmse <= 0.05

    def test_smoothing_beats_raw_observations(self):
        s, y = sine_dataset()
        truth = SINE_AMP * np.sin(2 * np.pi * s / L)
        raw_rmse = np.sqrt(np.mean((y - truth) ** 2))
        m = gp_fit(s, y, default_kernel())
        mean, _ = gp_predict(m, s)
        post_rmse = np.sqrt(np.mean((mean - truth) ** 2))
        assert post_rmse <= raw_rmse

    def test_matches_direct_solve_oracle(self):
        s, y = sine_dataset()
        kern = default_kernel()
        m = gp_fit(s, y, kern)
        grid = np.linspace(0, L, 300, endpoint=False)
        mean, _ = gp_predict(m, grid)
        # naive linear solve, no Cholesky
        K = kern.matrix(s, s) + kern.noise_var * np.eye(len(s))
        alpha = np.linalg.solve(K, y - y.mean())
        oracle = y.mean() + kern.matrix(grid, s) @ alpha
        assert np.abs(mean - oracle).max() <= 1e-8

    def test_prior_reversion_far_from_data(self):
        kern = default_kernel(length_scale=0.5, prior_mean=0.0)
        m = gp_fit(np.array([1.0, 1.2, 1.4]), np.array([0.4, 0.45, 0.38]), kern)
        mean, var = gp_predict(m, 20.0)
        assert mean == pytest.approx(0.0, abs=1e-3)
        assert var == pytest.approx(kern.signal_var + kern.noise_var, rel=0.01)

    def test_periodicity_bit_exact(self):
        s, y = sine_dataset()
        m = gp_fit(s, y, default_kernel())
        # binary-exact queries so wrapping is lossless
        for q in (0.25, 1.5, 7.0, 12.125):
            a = gp_predict(m, q)
            b = gp_predict(m, q + L)
            assert a == b

    def test_wrap_continuity(self):
        s, y = sine_dataset(n=200)
        m = gp_fit(s, y, default_kernel())
        eps = 0.05
        a, _ = gp_predict(m, L - eps)
        b, _ = gp_predict(m, eps)
        assert abs(a - b) < 0.02

    def test_fit_validation(self):
        with pytest.raises(ValueError):
            gp_fit(np.array([1.0]), np.array([1.0]), default_kernel())
        with pytest.raises(ValueError):
            gp_fit(np.array([1.0, 2.0]), np.array([1.0]), default_kernel())

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_variance_bounds(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 40))
        s = rng.uniform(0, L, n)
        y = rng.normal(0, 0.5, n)
        kern = default_kernel()
        m = gp_fit(s, y, kern)
        _, var = gp_predict(m, np.linspace(0, L, 100, endpoint=False))
        assert np.all(var >= 0)
        assert np.all(var <= kern.signal_var + kern.noise_var + 1e-9)


class TestWrappedDistance:
    def test_symmetry_and_bound(self):
        a = np.array([1.0, 39.0, 20.0])
        b = np.array([39.0, 1.0, 20.0])
        d = wrapped_distance(a, b, L)
        assert d == pytest.approx([2.0, 2.0, 0.0])
        assert np.all(d <= L / 2)


class TestOpponentProfile:
    def test_first_observation_coverage(self):
        prof = OpponentProfile(opponent_id=1, track_length=L)
        assert prof.ingest(1.0, 0.1, 2.0)
        assert prof.coverage == pytest.approx(1.0 / prof.coverage_bins)

    def test_saturation_sets_ready(self):
        prof = OpponentProfile(opponent_id=1, track_length=L)
        for s in np.arange(0, L, L / 400):
            prof.ingest(float(s), 0.1, 2.0)
        assert prof.coverage == pytest.approx(1.0)
        assert not prof.ready  # needs a fit as well
        assert prof.refit_if_needed()
        assert prof.ready

    def test_streams_routed_by_id(self):
        profs = {k: OpponentProfile(opponent_id=k, track_length=L) for k in (3, 8)}
        for s in np.arange(0, 10, 0.5):
            profs[3].ingest(float(s), 0.1, 1.0)
            profs[8].ingest(float(s) + 0.25, -0.1, 2.0)
        assert np.all(np.array(profs[3]._d) == 0.1)
        assert np.all(np.array(profs[8]._d) == -0.1)

    def test_nonfinite_rejected(self):
        prof = OpponentProfile(opponent_id=1, track_length=L)
        assert not prof.ingest(np.nan, 0.0, 1.0)
        assert not prof.ingest(1.0, np.inf, 1.0)
        assert prof.n_points == 0

    def test_downsampling_caps_points(self):
        prof = OpponentProfile(opponent_id=1, track_length=L)
        rng = np.random.default_rng(0)
        for s in rng.uniform(0, L, 5000):
            prof.ingest(float(s), 0.0, 1.0)
        assert prof.n_points <= prof.max_points

    def test_min_gap_rejects_close_points(self):
        prof = OpponentProfile(opponent_id=1, track_length=L)
        assert prof.ingest(1.0, 0.0, 1.0)
        assert not prof.ingest(1.0 + prof.s_min_gap / 4, 0.0, 1.0)

    def test_lazy_refit_policy(self):
        prof = OpponentProfile(opponent_id=1, track_length=L)
        for s in np.arange(0, 3, 0.2):
            prof.ingest(float(s), 0.0, 1.0)
        assert prof.refit_if_needed()           # first fit
        assert not prof.refit_if_needed()       # no new points
        for s in np.arange(3.2, 3.6, 0.1):      # 4 points: below threshold
            prof.ingest(float(s), 0.0, 1.0)
        assert not prof.refit_if_needed()
        prof.ingest(3.8, 0.0, 1.0)              # 5th pending point
        assert prof.refit_if_needed()

    def test_mean_caches_track_sine(self):
        prof = OpponentProfile(opponent_id=1, track_length=L)
        for s in np.arange(0, L, L / 300):
            prof.ingest(float(s), 0.2 * np.sin(2 * np.pi * s / L), 1.5)
        prof.refit_if_needed()
        grid = np.linspace(0, L, 50, endpoint=False)
        err = prof.mean_d(grid) - 0.2 * np.sin(2 * np.pi * grid / L)
        assert np.abs(err).max() < 0.02
        assert np.abs(prof.mean_speed(grid) - 1.5).max() < 1e-6

    def test_mean_before_fit_raises(self):
        prof = OpponentProfile(opponent_id=1, track_length=L)
        with pytest.raises(GPFitError):
            prof.mean_d(1.0)

    def test_dump_schema(self):
        prof = OpponentProfile(opponent_id=4, track_length=L)
        prof.ingest(1.0, 0.1, 2.0)
        d = prof.dump()
        assert d["opponent_id"] == 4
        assert d["d"]["s"] == d["vs"]["s"]
        assert set(d) == {"opponent_id", "coverage", "d", "vs", "hyperparams"}
