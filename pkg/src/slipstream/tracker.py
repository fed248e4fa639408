"""Multi-opponent tracker: constant-velocity Kalman filtering, min-cost
association, re-identification of coasting tracklets, and lifecycle management.

State per tracklet is x = [px, py, vx, vy]; measurements are 2D positions.
Association is optimal min-cost bipartite matching on Euclidean distance,
with a tight-gate greedy re-identification pass for the leftovers.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass(frozen=True)
class KFConfig:
    """Filter step and noise parameters (defaults match the deployed sensing stack)."""

    dt: float = 0.025
    sigma2_pos: float = 10.0
    sigma_posvel: float = 0.0
    sigma2_vel: float = 1.0
    q: float = 1.7e-4
    r: float = 0.074

    def initial_covariance(self) -> np.ndarray:
        p = np.zeros((4, 4))
        p[:2, :2] = self.sigma2_pos * np.eye(2)
        p[2:, 2:] = self.sigma2_vel * np.eye(2)
        p[:2, 2:] = self.sigma_posvel * np.eye(2)
        p[2:, :2] = self.sigma_posvel * np.eye(2)
        return p


@dataclass(frozen=True)
class TrackerConfig:
    tau_reid: float = 0.1      # re-identification gate [m]
    assoc_gate: float = 1.0    # association gate [m]; covers cornering innovation transients
    n_init: int = 3            # consecutive hits to confirm
    max_misses: int = 30       # coasting frames before deleting confirmed tracklets
    tentative_max_misses: int = 1  # unconfirmed tracklets die fast (ghost suppression)


@dataclass(frozen=True)
class Detection:
    z: np.ndarray                      # 2D position [m]
    extent: tuple[float, float] = (0.2, 0.45)  # fitted rectangle (width, length) [m]
    timestamp: float = 0.0


class TrackletStatus(enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    LOST = "lost"


@dataclass
class Tracklet:
    id: int
    x: np.ndarray                      # [px, py, vx, vy]
    P: np.ndarray                      # 4x4 covariance
    hit_count: int = 1
    miss_count: int = 0
    status: TrackletStatus = TrackletStatus.TENTATIVE
    extent: tuple[float, float] = (0.2, 0.45)

    @property
    def position(self) -> np.ndarray:
        return self.x[:2]

    @property
    def velocity(self) -> np.ndarray:
        return self.x[2:]


@dataclass(frozen=True)
class TrackedOpponent:
    id: int
    p: np.ndarray
    v: np.ndarray
    extent: tuple[float, float]
    vel_std: float = 0.0      # filter velocity uncertainty, for downstream gating


def _transition(dt: float) -> np.ndarray:
    F = np.eye(4)
    F[0, 2] = dt
    F[1, 3] = dt
    return F


def kf_predict(t: Tracklet, cfg: KFConfig, dt: float | None = None) -> Tracklet:
    """Constant-velocity prediction: x <- Fx, P <- FPF' + qI. Counters untouched."""
    step = cfg.dt if dt is None else dt
    F = _transition(step)
    x = F @ t.x
    P = F @ t.P @ F.T + cfg.q * np.eye(4)
    return replace(t, x=x, P=0.5 * (P + P.T))


def kf_update(t: Tracklet, z: Detection | np.ndarray, cfg: KFConfig) -> Tracklet:
    """Position measurement update (Joseph form keeps P symmetric PSD)."""
    zv = z.z if isinstance(z, Detection) else np.asarray(z, dtype=float)
    if not np.all(np.isfinite(zv)):
        raise ValueError(f"non-finite measurement {zv!r}")
    H = np.zeros((2, 4))
    H[0, 0] = H[1, 1] = 1.0
    R = cfg.r * np.eye(2)
    innov = zv - H @ t.x
    S = H @ t.P @ H.T + R
    K = t.P @ H.T @ np.linalg.inv(S)
    x = t.x + K @ innov
    IKH = np.eye(4) - K @ H
    P = IKH @ t.P @ IKH.T + K @ R @ K.T
    extent = z.extent if isinstance(z, Detection) else t.extent
    return replace(t, x=x, P=0.5 * (P + P.T), extent=extent)


def associate(tracklets: list[Tracklet], detections: list[Detection],
              gate: float):
    """Optimal one-to-one matching minimizing total Euclidean distance.

    Returns (matches, unmatched_tracklet_idx, unmatched_detection_idx) where
    matches are (tracklet_idx, detection_idx) pairs within the gate.
    """
    if not tracklets or not detections:
        return [], list(range(len(tracklets))), list(range(len(detections)))
    tp = np.array([t.position for t in tracklets])
    dp = np.array([d.z for d in detections])
    cost = np.hypot(tp[:, None, 0] - dp[None, :, 0], tp[:, None, 1] - dp[None, :, 1])
    rows, cols = linear_sum_assignment(cost)
    matches, um_t, um_d = [], set(range(len(tracklets))), set(range(len(detections)))
    for i, j in zip(rows, cols):
        if cost[i, j] <= gate:
            matches.append((int(i), int(j)))
            um_t.discard(int(i))
            um_d.discard(int(j))
    return matches, sorted(um_t), sorted(um_d)


def association_cost(tracklets: list[Tracklet], detections: list[Detection]) -> float:
    """Total distance of the optimal full assignment (no gating); 0 if either side empty."""
    if not tracklets or not detections:
        return 0.0
    tp = np.array([t.position for t in tracklets])
    dp = np.array([d.z for d in detections])
    cost = np.hypot(tp[:, None, 0] - dp[None, :, 0], tp[:, None, 1] - dp[None, :, 1])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def reid(unmatched_tracklets: list[Tracklet], unmatched_detections: list[Detection],
         cfg: TrackerConfig):
    """Greedy ascending-distance re-association under the tight ReID gate.

    Returns (tracklet_idx, detection_idx) pairs; ids are preserved by the
    caller performing a regular measurement update on the matched tracklet.
    """
    pairs = []
    for i, t in enumerate(unmatched_tracklets):
        for j, det in enumerate(unmatched_detections):
            dist = math.hypot(*(det.z - t.position))
            if dist < cfg.tau_reid:
                pairs.append((dist, i, j))
    pairs.sort()
    used_t, used_d, matched = set(), set(), []
    for _, i, j in pairs:
        if i in used_t or j in used_d:
            continue
        used_t.add(i)
        used_d.add(j)
        matched.append((i, j))
    return matched


@dataclass
class MultiOpponentTracker:
    """Owns the tracklet table; one instance per scenario, stepped sequentially."""

    kf: KFConfig = field(default_factory=KFConfig)
    cfg: TrackerConfig = field(default_factory=TrackerConfig)
    tracklets: list[Tracklet] = field(default_factory=list)
    _next_id: int = 0

    def step(self, detections: list[Detection], dt: float | None = None) -> list[TrackedOpponent]:
        """One tracking cycle; returns confirmed tracklets matched this frame.

        Association runs as a two-stage cascade: established tracklets claim
        detections first, then tentative ones get the leftovers. This keeps a
        freshly spawned (possibly spurious) tracklet from starving an
        established identity of its detections.
        """
        # canonical detection order makes the step invariant to input permutation
        detections = sorted(detections, key=lambda d: (d.z[0], d.z[1]))

        self.tracklets = [kf_predict(t, self.kf, dt) for t in self.tracklets]

        established = [i for i, t in enumerate(self.tracklets)
                       if t.status is not TrackletStatus.TENTATIVE]
        tentative = [i for i, t in enumerate(self.tracklets)
                     if t.status is TrackletStatus.TENTATIVE]
        matched_t = set()
        remaining_d = list(range(len(detections)))
        um_t_global: list[int] = []
        for stage in (established, tentative):
            stage_matches, um_s, um_d_local = associate(
                [self.tracklets[i] for i in stage],
                [detections[j] for j in remaining_d], self.cfg.assoc_gate)
            for si, dj in stage_matches:
                i = stage[si]
                self.tracklets[i] = self._hit(
                    kf_update(self.tracklets[i], detections[remaining_d[dj]], self.kf))
                matched_t.add(i)
            um_t_global.extend(stage[si] for si in um_s)
            remaining_d = [remaining_d[dj] for dj in um_d_local]

        leftovers_t = [self.tracklets[i] for i in sorted(um_t_global)]
        um_t = sorted(um_t_global)
        leftovers_d = [detections[j] for j in remaining_d]
        reid_d_map = remaining_d
        reid_pairs = reid(leftovers_t, leftovers_d, self.cfg)
        reid_d = set()
        for li, lj in reid_pairs:
            i = um_t[li]
            self.tracklets[i] = self._hit(kf_update(self.tracklets[i], leftovers_d[lj], self.kf))
            matched_t.add(i)
            reid_d.add(lj)

        n_existing = len(self.tracklets)
        for lj, det in enumerate(leftovers_d):
            if lj in reid_d:
                continue
            self.tracklets.append(Tracklet(
                id=self._next_id,
                x=np.array([det.z[0], det.z[1], 0.0, 0.0]),
                P=self.kf.initial_covariance(),
                extent=det.extent,
            ))
            self._next_id += 1

        survivors = []
        for i, t in enumerate(self.tracklets):
            if i in matched_t or i >= n_existing:
                survivors.append(t)
                continue
            t.miss_count += 1
            t.hit_count = 0
            if t.status is TrackletStatus.CONFIRMED:
                t.status = TrackletStatus.LOST
            limit = (self.cfg.max_misses if t.status is not TrackletStatus.TENTATIVE
                     else self.cfg.tentative_max_misses)
            if t.miss_count <= limit:
                survivors.append(t)
        self.tracklets = survivors

        out = []
        for t in self.tracklets:
            if t.status is TrackletStatus.CONFIRMED and t.miss_count == 0:
                vel_std = float(np.sqrt(max(t.P[2, 2], t.P[3, 3])))
                out.append(TrackedOpponent(t.id, t.position.copy(), t.velocity.copy(),
                                           t.extent, vel_std))
        return out

    def _hit(self, t: Tracklet) -> Tracklet:
        t.hit_count += 1
        t.miss_count = 0
        if t.status is TrackletStatus.LOST:
            t.status = TrackletStatus.CONFIRMED
        elif t.status is TrackletStatus.TENTATIVE and t.hit_count >= self.cfg.n_init:
            t.status = TrackletStatus.CONFIRMED
        return t


def trace_record(t: float, tracker: MultiOpponentTracker,
                 detections: list[Detection]) -> dict:
    """Tracker trace entry (JSON-lines schema shared with external plotting)."""
    return {
        "t": round(t, 6),
        "tracklets": [
            {
                "id": tr.id,
                "p": [float(tr.x[0]), float(tr.x[1])],
                "v": [float(tr.x[2]), float(tr.x[3])],
                "status": tr.status.value,
            }
            for tr in tracker.tracklets
        ],
        "detections": [[float(d.z[0]), float(d.z[1])] for d in detections],
    }
