"""Per-opponent Gaussian-process regression over arc length.

Each observed opponent gets two GPs keyed by its tracker identity: lateral
offset d(s) and longitudinal speed v_s(s). The RBF kernel uses the wrapped
arc-length distance min(|a-b|, L-|a-b|) so predictions are exactly periodic
in the lap length without duplicating data across the seam.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve


class GPFitError(RuntimeError):
    """Raised when the kernel matrix cannot be factorized even with jitter."""


def wrapped_distance(a, b, period: float):
    d = np.abs(np.asarray(a) - np.asarray(b))
    return np.minimum(d, period - d)


@dataclass(frozen=True)
class GPKernel:
    """Wrap-aware RBF kernel with fixed hyperparameters.

    ``prior_mean=None`` centers on the empirical target mean, which makes
    constant targets reproduce exactly everywhere; a fixed prior mean (0 for
    lateral offsets) reverts to that value far from data.
    """

    length_scale: float = 2.0
    signal_var: float = 0.25
    noise_var: float = 0.01
    period: float = 40.0
    prior_mean: float | None = None

    def matrix(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        d = wrapped_distance(a[:, None], b[None, :], self.period)
        return self.signal_var * np.exp(-0.5 * (d / self.length_scale) ** 2)


D_KERNEL = GPKernel(length_scale=2.0, signal_var=0.5 ** 2, noise_var=0.1 ** 2,
                    prior_mean=0.0)
VS_KERNEL = GPKernel(length_scale=2.0, signal_var=1.0 ** 2, noise_var=0.3 ** 2,
                     prior_mean=None)


@dataclass
class GPModel:
    """Fitted GP snapshot: data, kernel, and cached Cholesky solve products."""

    inputs: np.ndarray
    targets: np.ndarray
    kernel: GPKernel
    mean_offset: float
    alpha: np.ndarray = field(repr=False)
    factor: tuple = field(repr=False)
    jitter: float = 0.0

    def predict(self, s_query):
        return gp_predict(self, s_query)


def gp_fit(inputs, targets, kernel: GPKernel) -> GPModel:
    """Fit a GP: Cholesky of (K + sigma_n^2 I) with escalating jitter on failure."""
    inputs = np.mod(np.asarray(inputs, dtype=float), kernel.period)
    targets = np.asarray(targets, dtype=float)
    if inputs.ndim != 1 or inputs.shape != targets.shape:
        raise ValueError("inputs and targets must be equal-length 1D arrays")
    if len(inputs) < 2:
        raise ValueError("need at least 2 points to fit")
    mean_offset = kernel.prior_mean if kernel.prior_mean is not None else float(targets.mean())
    K = kernel.matrix(inputs, inputs)
    y = targets - mean_offset
    jitter = 0.0
    for jitter in (0.0, 1e-10, 1e-8, 1e-6, 1e-4):
        try:
            factor = cho_factor(K + (kernel.noise_var + jitter) * np.eye(len(inputs)),
                                lower=True)
            break
        except np.linalg.LinAlgError:
            continue
    else:
        raise GPFitError("kernel matrix not positive definite after max jitter")
    alpha = cho_solve(factor, y)
    return GPModel(inputs=inputs, targets=targets, kernel=kernel,
                   mean_offset=mean_offset, alpha=alpha, factor=factor,
                   jitter=jitter)


def gp_predict(model: GPModel, s_query):
    """Posterior mean and predictive variance (includes the noise term).

    Queries are wrapped into [0, period) first, so predictions are exactly
    periodic in the lap length.
    """
    scalar = np.isscalar(s_query)
    sq = np.mod(np.atleast_1d(np.asarray(s_query, dtype=float)), model.kernel.period)
    ks = model.kernel.matrix(sq, model.inputs)
    mean = model.mean_offset + ks @ model.alpha
    v = cho_solve(model.factor, ks.T)
    var = model.kernel.signal_var - np.einsum("ij,ji->i", ks, v) + model.kernel.noise_var
    var = np.maximum(var, 0.0)
    if scalar:
        return float(mean[0]), float(var[0])
    return mean, var


@dataclass
class OpponentProfile:
    """Accumulates (s, d, v_s) observations for one opponent and owns its GPs.

    Observations are down-sampled to at most one stored point per
    ``track_length / max_points`` of arc, which both caps the refit cost and
    defines the coverage bins. Refits are lazy: the pipeline calls
    ``refit_if_needed`` once per planning cycle.
    """

    opponent_id: int
    track_length: float
    kernel_d: GPKernel = None
    kernel_vs: GPKernel = None
    max_points: int = 400
    coverage_bins: int = 100   # coarser than the storage gap so jitter can't shadow a bin
    coverage_min: float = 0.9
    refit_min_new: int = 5
    cache_ds: float = 0.1

    def __post_init__(self):
        if self.kernel_d is None:
            self.kernel_d = GPKernel(length_scale=D_KERNEL.length_scale,
                                     signal_var=D_KERNEL.signal_var,
                                     noise_var=D_KERNEL.noise_var,
                                     period=self.track_length, prior_mean=0.0)
        if self.kernel_vs is None:
            self.kernel_vs = GPKernel(length_scale=VS_KERNEL.length_scale,
                                      signal_var=VS_KERNEL.signal_var,
                                      noise_var=VS_KERNEL.noise_var,
                                      period=self.track_length, prior_mean=None)
        self._s: list[float] = []
        self._d: list[float] = []
        self._vs: list[float] = []
        self._bins = np.zeros(self.coverage_bins, dtype=bool)
        self._pending = 0
        self.gp_d: GPModel | None = None
        self.gp_vs: GPModel | None = None
        n_cache = max(int(round(self.track_length / self.cache_ds)), 16)
        self._cache_ds = self.track_length / n_cache
        self._cache_d = np.zeros(n_cache)
        self._cache_vs = np.zeros(n_cache)
        self._cache_valid = False

    @property
    def s_min_gap(self) -> float:
        return self.track_length / self.max_points

    @property
    def n_points(self) -> int:
        return len(self._s)

    @property
    def coverage(self) -> float:
        return float(self._bins.sum()) / self.coverage_bins

    @property
    def ready(self) -> bool:
        return self.coverage >= self.coverage_min and self.gp_d is not None

    def ingest(self, s: float, d: float, v_s: float) -> bool:
        """Store one observation unless non-finite or closer than the min gap."""
        if not (np.isfinite(s) and np.isfinite(d) and np.isfinite(v_s)):
            return False
        s = float(np.mod(s, self.track_length))
        if self._s:
            gap = wrapped_distance(np.array(self._s), s, self.track_length).min()
            if gap < self.s_min_gap - 1e-9:
                return False
        self._s.append(s)
        self._d.append(float(d))
        self._vs.append(float(v_s))
        bin_w = self.track_length / self.coverage_bins
        self._bins[int(s / bin_w) % self.coverage_bins] = True
        self._pending += 1
        return True

    def refit_if_needed(self) -> bool:
        """Refit both GPs when enough new points accumulated; at most one refit per call."""
        n = self.n_points
        if n < 2:
            return False
        if self.gp_d is not None and self._pending < self.refit_min_new:
            return False
        s = np.array(self._s)
        self.gp_d = gp_fit(s, np.array(self._d), self.kernel_d)
        self.gp_vs = gp_fit(s, np.array(self._vs), self.kernel_vs)
        self._pending = 0
        grid = np.arange(len(self._cache_d)) * self._cache_ds
        self._cache_d, _ = gp_predict(self.gp_d, grid)
        self._cache_vs, _ = gp_predict(self.gp_vs, grid)
        self._cache_valid = True
        return True

    def _cache_interp(self, arr: np.ndarray, s):
        n = len(arr)
        sw = np.mod(s, self.track_length)
        k = np.floor(sw / self._cache_ds).astype(int) % n
        t = sw / self._cache_ds - np.floor(sw / self._cache_ds)
        return arr[k] * (1 - t) + arr[(k + 1) % n] * t

    def mean_d(self, s):
        """Sampled posterior-mean lateral offset (piecewise-linear cache lookup)."""
        if not self._cache_valid:
            raise GPFitError(f"profile {self.opponent_id} has no fitted model")
        return self._cache_interp(self._cache_d, s)

    def mean_speed(self, s):
        if not self._cache_valid:
            raise GPFitError(f"profile {self.opponent_id} has no fitted model")
        return self._cache_interp(self._cache_vs, s)

    def speed_cache(self):
        """(grid_spacing, sampled v_s means) for fast forward integration."""
        if not self._cache_valid:
            raise GPFitError(f"profile {self.opponent_id} has no fitted model")
        return self._cache_ds, self._cache_vs

    def dump(self) -> dict:
        return {
            "opponent_id": self.opponent_id,
            "coverage": self.coverage,
            "d": {"s": list(self._s), "y": list(self._d)},
            "vs": {"s": list(self._s), "y": list(self._vs)},
            "hyperparams": {
                "length_scale": self.kernel_d.length_scale,
                "signal_std_d": self.kernel_d.signal_var ** 0.5,
                "noise_std_d": self.kernel_d.noise_var ** 0.5,
                "signal_std_vs": self.kernel_vs.signal_var ** 0.5,
                "noise_std_vs": self.kernel_vs.noise_var ** 0.5,
                "period": self.track_length,
            },
        }
