"""Target selection and Region-of-Collision prediction.

One RoC per planning cycle: the nearest opponent ahead is selected and both
agents' longitudinal motion is forward-integrated (ego on its plan's speed
profile, opponent on its regressed speed curve) to find the arc window where
they will spatiotemporally overlap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import FrenetPose, ReferenceLine
from .gpr import OpponentProfile


class ProfileNotReadyError(RuntimeError):
    """Raised when an RoC is requested from an unfitted opponent profile."""


@dataclass(frozen=True)
class PredictionConfig:
    horizon: float = 10.0       # integration horizon [s]
    dt: float = 0.05            # Euler step [s]
    gap_thresh: float = 0.675   # overlap threshold, 1.5 vehicle lengths [m]
    roc_margin: float = 0.5     # expansion of the swept interval at entry [m]
    exit_margin: float = 1.5    # extra expansion at exit; regressed corner speeds
                                # read low, so real passes outlast predictions


@dataclass(frozen=True)
class RegionOfCollision:
    s_start: float              # wrapped [m]
    s_end: float                # wrapped [m]
    t_entry: float              # time until the gap first closes [s]
    target_id: int


@dataclass
class EgoState:
    pose: FrenetPose
    speed: float
    plan: ReferenceLine


def select_target(ego: EgoState, opponents: list[tuple[int, FrenetPose, float]]):
    """Identity of the opponent with minimal positive wrapped arc gap ahead, or None."""
    if not opponents:
        return None
    L = len(ego.plan.offsets) * ego.plan.ds
    best_id, best_gap = None, np.inf
    for oid, pose, _speed in opponents:
        gap = (pose.s - ego.pose.s) % L
        if gap == 0.0:
            gap = L
        if gap < best_gap:
            best_id, best_gap = oid, gap
    return best_id


def _make_lookup(arr: np.ndarray, ds: float):
    n = len(arr)
    vals = arr.tolist()

    def lookup(s: float) -> float:
        u = (s / ds) % n
        k = int(u)
        t = u - k
        k1 = k + 1 if k + 1 < n else 0
        return vals[k] * (1.0 - t) + vals[k1] * t

    return lookup


def compute_roc(ego: EgoState, opp_s: float, prof: OpponentProfile,
                cfg: PredictionConfig = PredictionConfig()) -> RegionOfCollision | None:
    """Forward-integrate both agents and return the predicted overlap window.

    Returns None when the gap never closes below the threshold within the
    horizon (no speed advantage, or catch-up too far out).
    """
    if not prof.ready:
        raise ProfileNotReadyError(f"profile {prof.opponent_id} not ready")
    if cfg.gap_thresh <= 0:
        raise ValueError("gap_thresh must be positive")

    L = prof.track_length
    ego_speed = _make_lookup(ego.plan.speeds, ego.plan.ds)
    cache_ds, cache_vs = prof.speed_cache()
    opp_speed = _make_lookup(cache_vs, cache_ds)

    s_e = float(ego.pose.s)
    s_o = float(ego.pose.s) + float((opp_s - ego.pose.s) % L)  # unwrapped, ahead of ego
    gap = s_o - s_e
    dt = cfg.dt
    n_steps = int(round(cfg.horizon / dt))

    t_enter = None
    t_exit = None
    enter_s_opp = exit_s_opp = None
    t = 0.0
    for _ in range(n_steps + 1):
        if abs(gap) < cfg.gap_thresh:
            if t_enter is None:
                t_enter = t
                enter_s_opp = s_o
            exit_s_opp = s_o
            t_exit = t
        elif t_enter is not None and gap <= -cfg.gap_thresh:
            break
        s_e += ego_speed(s_e % L) * dt
        s_o += max(opp_speed(s_o % L), 0.05) * dt
        gap = s_o - s_e
        t += dt

    if t_enter is None:
        return None
    return RegionOfCollision(
        s_start=float((enter_s_opp - cfg.roc_margin) % L),
        s_end=float((exit_s_opp + cfg.exit_margin) % L),
        t_entry=float(t_enter),
        target_id=prof.opponent_id,
    )
