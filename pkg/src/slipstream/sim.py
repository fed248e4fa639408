"""Deterministic closed-track multi-agent simulator.

Scripted agents follow their reference lines kinematically; a reactive agent
steers toward the largest free gap in a simulated range scan. Sensing is a
statistical synthesizer reproducing configured true-positive/false-detection
rates, a body-frame bias and Gaussian noise, with range gating and
line-of-sight occlusion. Adjudication emits overtake/crash/lap events.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry as geo
from .geometry import LineConfig, ReferenceLine, TrackModel, make_reference_line
from .tracker import Detection

BEHAVIORS = ("racing_line", "shortest_path", "centerline", "reactive_gap")


class ScenarioError(ValueError):
    """Raised for malformed scenario files."""


@dataclass(frozen=True)
class AgentSpec:
    role: str                       # "ego" | "opponent"
    behavior: str = "racing_line"
    speed_scaler: float = 1.0       # ego lap time / this agent's lap time
    footprint: tuple[float, float] = (0.45, 0.20)   # (length, width) [m]
    start_s: float = 0.0


@dataclass(frozen=True)
class DetectionNoiseModel:
    bias: tuple[float, float] = (-0.08, 0.01)   # ego-body-frame offset [m]
    sigma: tuple[float, float] = (0.06, 0.06)   # per-axis noise std [m]
    tpr: float = 0.97
    fdr: float = 0.02
    fov_range: float = 10.0
    seed: int = 0


@dataclass
class AgentState:
    spec: AgentSpec
    line: ReferenceLine | None
    speed_scale: float = 1.0
    s: float = 0.0
    d: float = 0.0
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    path_speed: float = 0.0
    # reactive-agent extras
    steer_target: float = 0.0
    scan_range_min: float = np.inf

    def pose2(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass
class SimOutcome:
    events: list = field(default_factory=list)
    lap_times: list = field(default_factory=list)
    traces: list = field(default_factory=list)


class World:
    """One scenario instance; stepped sequentially, seeded RNG stream."""

    REACTIVE_SCAN_PERIOD = 0.1   # s between range scans
    REACTIVE_TURN_RATE = 3.0     # rad/s steering bound
    REACTIVE_N_RAYS = 108
    REACTIVE_FOV = 1.5 * math.pi  # 270 degree fan

    def __init__(self, track: TrackModel, ego: AgentState,
                 opponents: list[AgentState], noise: DetectionNoiseModel,
                 dt: float = 0.025):
        self.track = track
        self.ego = ego
        self.opponents = opponents
        self.noise = noise
        self.dt = dt
        self.t = 0.0
        self.rng = np.random.default_rng(noise.seed)
        self.ego_speed_cap: float | None = None
        self.last_visible: dict[int, bool] = {}
        # overtake bookkeeping: armed[i] when ego is behind opponent i
        self._armed = {}
        for i, opp in enumerate(opponents):
            rel = float(track.signed_gap(opp.s, ego.s))
            self._armed[i] = rel < 0
        self._prev_ego_s = ego.s
        self._lap_start_t = 0.0
        self.lap_times: list[float] = []
        self._boundary = self._coarse_boundaries()
        self._crashed = False

    # --- construction helpers -------------------------------------------

    def _coarse_boundaries(self):
        step = max(int(round(0.2 / self.track.ds)), 1)
        idx = np.arange(0, self.track.n, step)
        left = self.track.points[idx] + self.track.width_left[idx, None] * self.track.seg_normal[idx]
        right = self.track.points[idx] - self.track.width_right[idx, None] * self.track.seg_normal[idx]
        segs_a = np.vstack([left, right])
        segs_b = np.vstack([np.roll(left, -1, axis=0), np.roll(right, -1, axis=0)])
        return segs_a, segs_b

    # --- stepping --------------------------------------------------------

    def opponent_speed_cmd(self, agent: AgentState) -> float:
        return float(agent.line.speed_at(agent.s)) * agent.speed_scale

    def step(self, dt: float | None = None) -> None:
        step_world(self, dt)


def _follow_line(track: TrackModel, agent: AgentState, v_cmd: float, dt: float):
    metric = float(agent.line.metric_at(agent.s))
    agent.s = float(np.mod(agent.s + v_cmd * dt / max(metric, 1e-6), track.total_length))
    x, y, heading = agent.line.pose_at(agent.s)
    agent.x, agent.y, agent.heading = float(x), float(y), float(heading)
    agent.d = float(agent.line.offset_at(agent.s))
    agent.path_speed = v_cmd


def _rect_corners(x: float, y: float, heading: float, length: float, width: float):
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = length / 2, width / 2
    ux, uy = c * hl, s * hl
    vx, vy = -s * hw, c * hw
    return np.array([
        [x + ux + vx, y + uy + vy],
        [x + ux - vx, y + uy - vy],
        [x - ux - vx, y - uy - vy],
        [x - ux + vx, y - uy + vy],
    ])


def _rects_intersect(c1: np.ndarray, c2: np.ndarray) -> bool:
    # separating-axis test over both rectangles' edge normals
    for rect in (c1, c2):
        for k in range(2):
            edge = rect[(k + 1) % 4] - rect[k]
            axis = np.array([-edge[1], edge[0]])
            p1 = c1 @ axis
            p2 = c2 @ axis
            if p1.max() < p2.min() or p2.max() < p1.min():
                return False
    return True


def _segment_hits_rect(p: np.ndarray, q: np.ndarray, corners: np.ndarray) -> bool:
    d = q - p
    for k in range(4):
        a = corners[k]
        e = corners[(k + 1) % 4] - a
        denom = d[0] * e[1] - d[1] * e[0]
        if abs(denom) < 1e-12:
            continue
        rel = a - p
        t = (rel[0] * e[1] - rel[1] * e[0]) / denom
        u = (rel[0] * d[1] - rel[1] * d[0]) / denom
        if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
            return True
    return False


def _reactive_scan(world: World, agent: AgentState) -> np.ndarray:
    """Free range per ray against track walls and all other agents."""
    n_rays = world.REACTIVE_N_RAYS
    angles = agent.heading + np.linspace(-world.REACTIVE_FOV / 2,
                                         world.REACTIVE_FOV / 2, n_rays)
    dirs = np.column_stack([np.cos(angles), np.sin(angles)])
    p = agent.pose2()
    fov = world.noise.fov_range

    segs_a, segs_b = world._boundary
    mid = 0.5 * (segs_a + segs_b)
    near = np.hypot(mid[:, 0] - p[0], mid[:, 1] - p[1]) <= fov + 1.0
    a = segs_a[near]
    e = segs_b[near] - a
    others = [world.ego] + [o for o in world.opponents if o is not agent]
    extra_a, extra_e = [], []
    for o in others:
        c = _rect_corners(o.x, o.y, o.heading, *o.spec.footprint)
        for k in range(4):
            extra_a.append(c[k])
            extra_e.append(c[(k + 1) % 4] - c[k])
    if extra_a:
        a = np.vstack([a, np.array(extra_a)])
        e = np.vstack([e, np.array(extra_e)])

    rel = a - p                                    # (m, 2)
    denom = dirs[:, 0:1] * e[:, 1] - dirs[:, 1:2] * e[:, 0]   # (r, m)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (rel[:, 0] * e[:, 1] - rel[:, 1] * e[:, 0]) / denom
        u = (rel[None, :, 0] * dirs[:, 1:2] - rel[None, :, 1] * dirs[:, 0:1]) / denom
    valid = (t > 1e-6) & (u >= 0.0) & (u <= 1.0) & np.isfinite(t)
    t = np.where(valid, t, np.inf)
    return np.minimum(t.min(axis=1), fov)


def _steer_reactive(world: World, agent: AgentState) -> None:
    ranges = _reactive_scan(world, agent)
    agent.scan_range_min = float(ranges.min())
    free = ranges > 2.0
    best_len, best_mid = 0, None
    run_start = None
    for i, f in enumerate(np.append(free, False)):
        if f and run_start is None:
            run_start = i
        elif not f and run_start is not None:
            if i - run_start > best_len:
                best_len, best_mid = i - run_start, (run_start + i - 1) // 2
            run_start = None
    if best_mid is None:
        best_mid = int(np.argmax(ranges))
    span = world.REACTIVE_FOV
    aim = agent.heading + (-span / 2 + span * best_mid / (world.REACTIVE_N_RAYS - 1))
    agent.steer_target = float(aim)


def step_world(world: World, dt: float | None = None) -> None:
    """Advance every agent one step; scripted agents track their lines."""
    dt = world.dt if dt is None else dt
    if dt <= 0:
        raise ValueError("dt must be positive")

    for agent in world.opponents:
        if agent.spec.behavior == "reactive_gap":
            if (world.t / world.REACTIVE_SCAN_PERIOD) % 1.0 < dt / world.REACTIVE_SCAN_PERIOD:
                _steer_reactive(world, agent)
            err = geo.wrap_angle(agent.steer_target - agent.heading)
            max_turn = world.REACTIVE_TURN_RATE * dt
            agent.heading += float(np.clip(err, -max_turn, max_turn))
            v = agent.speed_scale * (0.5 if agent.scan_range_min < 0.5 else 1.0)
            agent.x += v * dt * math.cos(agent.heading)
            agent.y += v * dt * math.sin(agent.heading)
            agent.path_speed = v
            s, d, _ = geo.cart_to_frenet_batch(world.track,
                                               np.array([[agent.x, agent.y]]))
            agent.s, agent.d = float(s[0]), float(d[0])
        else:
            _follow_line(world.track, agent, world.opponent_speed_cmd(agent), dt)

    ego = world.ego
    v_cmd = float(ego.line.speed_at(ego.s)) * ego.speed_scale
    if world.ego_speed_cap is not None:
        v_cmd = min(v_cmd, world.ego_speed_cap)
    _follow_line(world.track, ego, v_cmd, dt)
    world.t += dt


def line_of_sight(world: World, target_idx: int) -> bool:
    """True when the ego->opponent segment stays in the corridor and clears
    every other opponent's footprint."""
    ego = world.ego
    opp = world.opponents[target_idx]
    p, q = ego.pose2(), opp.pose2()
    for j, other in enumerate(world.opponents):
        if j == target_idx:
            continue
        corners = _rect_corners(other.x, other.y, other.heading, *other.spec.footprint)
        if _segment_hits_rect(p, q, corners):
            return False
    dist = float(np.hypot(*(q - p)))
    n_samples = max(int(dist / 0.4), 2)
    ts = np.linspace(0.0, 1.0, n_samples + 1)[1:-1]
    if len(ts) == 0:
        return True
    pts = p[None, :] + ts[:, None] * (q - p)[None, :]
    s, d, _ = geo.cart_to_frenet_batch(world.track, pts)
    wl, wr = world.track.half_width_at(s)
    return bool(np.all((d <= wl + 0.05) & (d >= -wr - 0.05)))


def synthesize_detections(world: World,
                          noise: DetectionNoiseModel | None = None) -> list[Detection]:
    """Emit noisy opponent detections plus occasional false positives.

    Per visible opponent: detection with probability tpr at the true position
    plus the body-frame bias rotated to world coordinates plus Gaussian noise.
    One false detection per frame with probability fdr, uniform on-track.
    """
    noise = noise or world.noise
    rng = world.rng
    ego = world.ego
    out: list[Detection] = []
    world.last_visible = {}
    c, s = math.cos(ego.heading), math.sin(ego.heading)
    bias_world = np.array([c * noise.bias[0] - s * noise.bias[1],
                           s * noise.bias[0] + c * noise.bias[1]])
    for i, opp in enumerate(world.opponents):
        dist = math.hypot(opp.x - ego.x, opp.y - ego.y)
        visible = dist <= noise.fov_range and line_of_sight(world, i)
        world.last_visible[i] = visible
        if not visible:
            continue
        if rng.random() < noise.tpr:
            z = opp.pose2() + bias_world + rng.normal(0.0, noise.sigma, 2)
            out.append(Detection(z=z, extent=(opp.spec.footprint[1],
                                              opp.spec.footprint[0]),
                                 timestamp=world.t))
    if rng.random() < noise.fdr:
        L = world.track.total_length
        s_f = rng.uniform(0.0, L)
        wl, wr = world.track.half_width_at(s_f)
        d_f = rng.uniform(-wr, wl)
        z = geo.frenet_to_cart_batch(world.track, np.array([s_f]), np.array([d_f]))[0]
        out.append(Detection(z=z, extent=(0.2, 0.2), timestamp=world.t))
    return out


def adjudicate(world: World, hysteresis: float | None = None) -> list[dict]:
    """Emit crash / overtake / lap events for the current world state."""
    events = []
    ego = world.ego
    track = world.track
    hyst = ego.spec.footprint[0] if hysteresis is None else hysteresis

    ego_rect = _rect_corners(ego.x, ego.y, ego.heading, *ego.spec.footprint)
    crashed = False
    for opp in world.opponents:
        if _rects_intersect(ego_rect, _rect_corners(opp.x, opp.y, opp.heading,
                                                    *opp.spec.footprint)):
            crashed = True
            break
    if not crashed:
        wl, wr = track.half_width_at(ego.s)
        margin = ego.spec.footprint[1] / 2
        if ego.d > wl - margin + 1e-3 or ego.d < -(wr - margin) - 1e-3:
            crashed = True
    if crashed and not world._crashed:
        world._crashed = True
        events.append({"t": round(world.t, 6), "type": "crash"})

    for i, opp in enumerate(world.opponents):
        rel = float(track.signed_gap(opp.s, ego.s))  # positive: ego ahead
        if rel < 0:
            world._armed[i] = True
        elif world._armed[i] and rel >= hyst:
            world._armed[i] = False
            events.append({"t": round(world.t, 6), "type": "overtake", "id": i})

    if ego.s < world._prev_ego_s - track.total_length / 2:
        lap_time = world.t - world._lap_start_t
        world._lap_start_t = world.t
        world.lap_times.append(lap_time)
        events.append({"t": round(world.t, 6), "type": "lap_complete",
                       "lap_time": round(lap_time, 6)})
    world._prev_ego_s = ego.s
    return events


# --- scenario files -------------------------------------------------------


def load_scenario(path: str | Path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    for key in ("track", "ego"):
        if key not in cfg:
            raise ScenarioError(f"scenario missing required key {key!r}")
    return cfg


def build_world(cfg: dict, base_dir: str | Path = ".",
                seed: int | None = None,
                line_cfg: LineConfig = LineConfig()) -> World:
    """Instantiate a world from a scenario dict (see load_scenario)."""
    track_path = Path(cfg["track"])
    if not track_path.is_absolute():
        track_path = Path(base_dir) / track_path
    track = geo.load_track(track_path)

    noise_kwargs = dict(cfg.get("noise", {}))
    for tup_key in ("bias", "sigma"):
        if tup_key in noise_kwargs:
            noise_kwargs[tup_key] = tuple(noise_kwargs[tup_key])
    if seed is not None:
        noise_kwargs["seed"] = seed
    elif "seed" in cfg:
        noise_kwargs.setdefault("seed", cfg["seed"])
    noise = DetectionNoiseModel(**noise_kwargs)

    ego_cfg = cfg["ego"]
    lap_speed = float(ego_cfg.get("lap_speed", 2.0))
    ego_behavior = ego_cfg.get("behavior", "racing_line")
    if ego_behavior not in BEHAVIORS[:3]:
        raise ScenarioError(f"unsupported ego behavior {ego_behavior!r}")
    ego_line = make_reference_line(track, ego_behavior, lap_speed, line_cfg)
    t_ego = ego_line.lap_time()
    ego_spec = AgentSpec(role="ego", behavior=ego_behavior,
                         start_s=float(ego_cfg.get("start_s", 0.0)))
    ego = AgentState(spec=ego_spec, line=ego_line, s=ego_spec.start_s)
    _snap_to_line(track, ego)

    opponents = []
    for opp_cfg in cfg.get("opponents", []):
        behavior = opp_cfg.get("behavior", "centerline")
        if behavior not in BEHAVIORS:
            raise ScenarioError(f"unknown opponent behavior {behavior!r}")
        scaler = float(opp_cfg.get("speed_scaler", 0.7))
        spec = AgentSpec(role="opponent", behavior=behavior, speed_scaler=scaler,
                         start_s=float(opp_cfg.get("start_s", 3.0)))
        if behavior == "reactive_gap":
            v_cmd = scaler * track.total_length / t_ego
            agent = AgentState(spec=spec, line=None, speed_scale=v_cmd,
                               s=spec.start_s)
            x, y, heading = make_reference_line(track, "centerline",
                                                lap_speed, line_cfg).pose_at(spec.start_s)
            agent.x, agent.y, agent.heading = float(x), float(y), float(heading)
            agent.steer_target = agent.heading
        else:
            line = make_reference_line(track, behavior, lap_speed, line_cfg)
            scale = line.lap_time() * scaler / t_ego
            agent = AgentState(spec=spec, line=line, speed_scale=scale,
                               s=spec.start_s)
            _snap_to_line(track, agent)
        opponents.append(agent)

    return World(track, ego, opponents, noise, dt=float(cfg.get("dt", 0.025)))


def _snap_to_line(track: TrackModel, agent: AgentState) -> None:
    x, y, heading = agent.line.pose_at(agent.s)
    agent.x, agent.y, agent.heading = float(x), float(y), float(heading)
    agent.d = float(agent.line.offset_at(agent.s))
