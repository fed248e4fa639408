"""Closed-loop experiment harness: sensing, tracking, regression, prediction,
planning and adjudication wired together, with metrics and reports.

Per sim step (40 Hz default): synthesize detections, advance the tracker,
transform confirmed opponents to Frenet, feed their profiles. Per planning
cycle (every other step): refit profiles lazily, pick the target, trail it
until its profile is ready, then predict the Region of Collision, solve the
overtake and splice it into the ego plan.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry as geo
from . import planner as pl
from . import prediction as pred
from . import sim
from .gpr import OpponentProfile
from .tracker import KFConfig, MultiOpponentTracker, TrackerConfig, trace_record


class ConfigError(ValueError):
    """Invalid run configuration (bad mode, stop condition, paths)."""


@dataclass(frozen=True)
class HarnessConfig:
    planning_stride: int = 2      # sim steps per planning cycle
    trail_gap_target: float = 1.2  # m held behind the target while trailing
    trail_gap_free: float = 3.0    # beyond this gap, run plan speed
    trail_gain: float = 1.5        # 1/s proportional gap controller
    min_lead_in: float = 0.3       # m; skip splicing if the grid would start on the ego
    replan_margin: float = 1.2     # m of remaining splice; extend if the pass is unfinished
    hold_extension: float = 3.0    # m of extra offset hold when a pass runs long
    pass_clear: float = 1.0        # m ahead of the target before rejoining its line
    ingest_max_vel_std: float = 0.15  # skip profile ingest until the KF velocity settles
    metric_gate: float = 0.5       # m matching gate for tracking metrics
    success_floor: float = 0.8     # R_ot/c floor defining S_max in sweeps
    timeout_s: float = 240.0       # hard cap on simulated time


@dataclass
class RunConfig:
    scenario: str | Path | dict
    mode: str = "trail_and_overtake"
    stop_overtakes: int | None = None
    stop_laps: int | None = None
    stop_duration: float | None = None
    out_dir: str | Path | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.mode not in ("track_only", "trail_and_overtake", "tracking_eval"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        stops = [self.stop_overtakes, self.stop_laps, self.stop_duration]
        if sum(s is not None for s in stops) != 1:
            raise ConfigError("exactly one stop condition must be set")


@dataclass
class MetricsReport:
    e_pos: float | None = None
    e_vel: float | None = None
    tpr: float | None = None
    fdr: float | None = None
    id_switches: int = 0
    n_ot: int = 0
    n_crash: int = 0
    r_otc: float | None = None
    s_scaler: list = field(default_factory=list)
    mean_lap: float | None = None
    total_time: float | None = None
    sim_time: float = 0.0
    timed_out: bool = False
    notes: dict = field(default_factory=dict)
    # not serialized into report.json (wall clock breaks byte-determinism)
    wall_clock: dict = field(default_factory=dict, repr=False)
    events: list = field(default_factory=list, repr=False)
    lap_times: list = field(default_factory=list, repr=False)

    def to_json_dict(self) -> dict:
        d = {
            "e_pos": self.e_pos, "e_vel": self.e_vel, "tpr": self.tpr,
            "fdr": self.fdr, "id_switches": self.id_switches,
            "n_ot": self.n_ot, "n_crash": self.n_crash, "r_otc": self.r_otc,
            "s_scaler": self.s_scaler, "mean_lap": self.mean_lap,
            "total_time": self.total_time, "sim_time": self.sim_time,
            "timed_out": self.timed_out, "notes": self.notes,
        }
        return d


def _round6(x):
    return None if x is None else round(float(x), 6)


# --- the closed loop -------------------------------------------------------


class _Pipeline:
    """Mutable per-run state for the full perception->planning stack."""

    def __init__(self, world: sim.World, hcfg: HarnessConfig,
                 pcfg: pl.PlannerConfig, rcfg: pred.PredictionConfig):
        self.world = world
        self.hcfg = hcfg
        self.pcfg = pcfg
        self.rcfg = rcfg
        self.tracker = MultiOpponentTracker(kf=KFConfig(dt=world.dt),
                                            cfg=TrackerConfig())
        self.profiles: dict[int, OpponentProfile] = {}
        self.base_plan = world.ego.line
        self.phase = "free"
        self.target_id = None
        self.overtake_end_s: float | None = None
        self.committed_target = None
        self.committed_side: str | None = None
        self.tracker_records: list[dict] = []
        self.truth_records: list[dict] = []
        self.planner_records: list[dict] = []
        self.trajectories: list[pl.OvertakeTrajectory] = []
        self.tracked_frenet: list[tuple] = []

    def profile_for(self, oid: int) -> OpponentProfile:
        if oid not in self.profiles:
            self.profiles[oid] = OpponentProfile(
                opponent_id=oid, track_length=self.world.track.total_length)
        return self.profiles[oid]

    def sense_and_track(self) -> None:
        w = self.world
        detections = sim.synthesize_detections(w)
        tracked = self.tracker.step(detections)
        self.tracker_records.append(trace_record(w.t, self.tracker, detections))
        self.truth_records.append({
            "t": round(w.t, 6),
            "ego": {"s": w.ego.s, "d": w.ego.d, "p": [w.ego.x, w.ego.y]},
            "opponents": [
                {
                    "p": [o.x, o.y],
                    "v": [o.path_speed * np.cos(o.heading),
                          o.path_speed * np.sin(o.heading)],
                    "s": o.s, "d": o.d,
                    "visible": bool(w.last_visible.get(i, False)),
                }
                for i, o in enumerate(w.opponents)
            ],
        })
        self.tracked_frenet = []
        if tracked:
            pts = np.array([t.p for t in tracked])
            s_arr, d_arr, _ = geo.cart_to_frenet_batch(w.track, pts)
            k = w.track.index_of(s_arr)
            tang = w.track.seg_dir[k]
            for t, s_i, d_i, tg in zip(tracked, s_arr, d_arr, tang):
                v_s = float(t.v[0] * tg[0] + t.v[1] * tg[1])
                self.tracked_frenet.append((t.id, geo.FrenetPose(float(s_i), float(d_i)),
                                            v_s, t.extent))
                if t.vel_std <= self.hcfg.ingest_max_vel_std:
                    self.profile_for(t.id).ingest(float(s_i), float(d_i), v_s)

    def plan_cycle(self, mode: str) -> None:
        w = self.world
        track = w.track
        L = track.total_length
        for prof in self.profiles.values():
            prof.refit_if_needed()

        ego_pose = geo.FrenetPose(w.ego.s, w.ego.d)
        ego_state = pred.EgoState(pose=ego_pose, speed=w.ego.path_speed,
                                  plan=w.ego.line)
        opp_list = [(oid, pose, v_s) for oid, pose, v_s, _ in self.tracked_frenet]
        target = pred.select_target(ego_state, opp_list)
        self.target_id = target

        # swap back to the base plan once the ego is past the splice region
        if (w.ego.line is not self.base_plan and self.overtake_end_s is not None
                and float(track.signed_gap(self.overtake_end_s, w.ego.s)) > 0):
            w.ego.line = self.base_plan
            self.overtake_end_s = None
            if self.phase == "overtaking":
                self.phase = "trailing" if opp_list else "free"

        if self.phase == "overtaking":
            w.ego_speed_cap = None
            entry = next((e for e in self.tracked_frenet
                          if e[0] == self.committed_target), None)
            if entry is None:
                return
            passed = float(track.signed_gap(entry[1].s, w.ego.s)) > self.hcfg.pass_clear
            if passed:
                return
            remaining = float(track.arc_gap(w.ego.s, self.overtake_end_s))
            if remaining > self.hcfg.replan_margin or remaining > L / 2:
                return
            # pass is running long: extend the offset hold past the opponent
            prof = self.profiles.get(self.committed_target)
            extended = False
            if prof is not None and prof.ready:
                hold = pred.RegionOfCollision(
                    s_start=float(track.wrap_s(w.ego.s + 0.2)),
                    s_end=float(track.wrap_s(w.ego.s + self.hcfg.hold_extension)),
                    t_entry=0.0, target_id=self.committed_target)
                extended = self._splice_roc(hold, entry, prof, mid_maneuver=True)
            if not extended:
                # abort decisively: drop back behind the target on the current line
                self.phase = "trailing"
                w.ego_speed_cap = max(0.1, entry[2] - 0.3)
            return

        # trailing speed controller against the tracked target
        cap = None
        if target is not None:
            entry = next(e for e in self.tracked_frenet if e[0] == target)
            gap = float(track.arc_gap(w.ego.s, entry[1].s))
            if gap <= self.hcfg.trail_gap_free:
                cap = max(0.1, entry[2] + self.hcfg.trail_gain
                          * (gap - self.hcfg.trail_gap_target))
            self.phase = "trailing"
        else:
            self.phase = "free"
        w.ego_speed_cap = cap

        if mode != "trail_and_overtake" or target is None:
            self._log_phase(None)
            return
        prof = self.profiles.get(target)
        if prof is None or not prof.ready:
            self._log_phase(None)
            return
        entry = next(e for e in self.tracked_frenet if e[0] == target)
        self._try_splice(ego_state, entry, prof, mid_maneuver=False)

    def _try_splice(self, ego_state, entry, prof, mid_maneuver: bool) -> bool:
        """Predict the RoC and splice a feasible overtake; returns success."""
        try:
            roc = pred.compute_roc(ego_state, entry[1].s, prof, self.rcfg)
        except pred.ProfileNotReadyError:
            roc = None
        if roc is None:
            if not mid_maneuver:
                self._log_phase(None)
            return False
        return self._splice_roc(roc, entry, prof, mid_maneuver)

    def _splice_roc(self, roc, entry, prof, mid_maneuver: bool) -> bool:
        """Solve and splice an overtake for a given collision region."""
        w = self.world
        track = w.track
        target = entry[0]
        # keep the grid ahead of the ego so the spliced plan stays continuous;
        # mid-maneuver the grid may start inside the RoC (just ahead of us)
        lead_room = float(track.arc_gap(w.ego.s, roc.s_start)) - 0.15
        pcfg = self.pcfg
        if lead_room < pcfg.lead_in:
            if not mid_maneuver and lead_room < self.hcfg.min_lead_in:
                self._log_phase(roc, note="roc_too_close")
                return False
            pcfg = dataclasses.replace(pcfg, lead_in=lead_room)

        others = [(oid, pose.s, pose.d, extent)
                  for oid, pose, _v, extent in self.tracked_frenet if oid != target]
        try:
            problem = pl.build_problem(roc, w.ego.line, prof, others, track, pcfg)
            if mid_maneuver and self.committed_side is not None:
                side = self.committed_side  # never cut across the target mid-pass
            else:
                side = pl.choose_side(problem, pcfg)
            traj = pl.solve_overtake(problem, side, pcfg)
        except pl.PlanningError as exc:
            self._log_phase(roc, note=type(exc).__name__)
            return False
        if not traj.feasible:
            self._log_phase(roc, side=side, cost=traj.cost, feasible=False)
            return False

        w.ego.line = pl.splice(traj, w.ego.line, track)
        self.phase = "overtaking"
        self.committed_target = target
        self.committed_side = traj.side
        self.overtake_end_s = float(traj.s[-1])
        self.trajectories.append(traj)
        w.ego_speed_cap = None
        self.planner_records.append({
            "t": round(w.t, 6), "phase": "overtaking",
            "roc": {"target_id": roc.target_id, "s_start": _round6(roc.s_start),
                    "s_end": _round6(roc.s_end), "t_entry": _round6(roc.t_entry)},
            "side": traj.side, "cost": _round6(traj.cost), "feasible": True,
        })
        return True

    def _log_phase(self, roc, side=None, cost=None, feasible=None, note=None):
        rec = {"t": round(self.world.t, 6), "phase": self.phase}
        if roc is not None:
            rec["roc"] = {"target_id": roc.target_id,
                          "s_start": _round6(roc.s_start),
                          "s_end": _round6(roc.s_end),
                          "t_entry": _round6(roc.t_entry)}
        if side is not None:
            rec["side"] = side
        if cost is not None:
            rec["cost"] = _round6(cost)
        if feasible is not None:
            rec["feasible"] = feasible
        if note:
            rec["note"] = note
        self.planner_records.append(rec)


def run_scenario(cfg: RunConfig,
                 hcfg: HarnessConfig = HarnessConfig(),
                 planner_cfg: pl.PlannerConfig = pl.PlannerConfig(),
                 prediction_cfg: pred.PredictionConfig = pred.PredictionConfig(),
                 ) -> MetricsReport:
    """Execute one scenario to its stop condition and assemble the report.

    A crash ends the run but still produces a report (crash is data). Output
    files are written only when cfg.out_dir is set: report.json, timing.json,
    events.jsonl, tracker.jsonl, truth.jsonl, planner.jsonl, traj_NNN.csv.
    """
    if isinstance(cfg.scenario, dict):
        scenario = cfg.scenario
        base_dir = Path(".")
    else:
        scenario = sim.load_scenario(cfg.scenario)
        base_dir = Path(cfg.scenario).parent

    world = sim.build_world(scenario, base_dir=base_dir, seed=cfg.seed)
    pipe = _Pipeline(world, hcfg, planner_cfg, prediction_cfg)

    events: list[dict] = []
    n_ot = n_crash = n_laps = 0
    step_idx = 0
    loop_times = []
    crashed = False
    timed_out = False
    stop_time = cfg.stop_duration if cfg.stop_duration is not None else hcfg.timeout_s

    while True:
        t0 = time.perf_counter()
        sim.step_world(world)
        new_events = sim.adjudicate(world)
        for ev in new_events:
            events.append(ev)
            if ev["type"] == "overtake":
                n_ot += 1
            elif ev["type"] == "crash":
                n_crash += 1
                crashed = True
            elif ev["type"] == "lap_complete":
                n_laps += 1
        pipe.sense_and_track()
        if cfg.mode != "track_only" and step_idx % hcfg.planning_stride == 0:
            pipe.plan_cycle(cfg.mode)
        loop_times.append(time.perf_counter() - t0)
        step_idx += 1

        if crashed:
            break
        if cfg.stop_overtakes is not None and n_ot >= cfg.stop_overtakes:
            break
        if cfg.stop_laps is not None and n_laps >= cfg.stop_laps:
            break
        if world.t >= stop_time:
            timed_out = cfg.stop_duration is None
            break

    report = MetricsReport(events=events, lap_times=list(world.lap_times))
    report.n_ot = n_ot
    report.n_crash = n_crash
    report.sim_time = round(world.t, 6)
    report.timed_out = timed_out
    report.s_scaler = [o.spec.speed_scaler for o in world.opponents]
    if n_ot + n_crash > 0:
        report.r_otc = round(n_ot / (n_ot + n_crash), 6)
    else:
        report.notes["r_otc"] = "no overtake attempts or crashes"
    if world.lap_times:
        report.mean_lap = round(float(np.mean(world.lap_times)), 6)
    else:
        report.notes["mean_lap"] = "no completed laps"
    ot_times = [ev["t"] for ev in events if ev["type"] == "overtake"]
    if ot_times:
        report.total_time = round(ot_times[-1], 6)
    elif world.lap_times:
        report.total_time = round(float(np.sum(world.lap_times)), 6)
    else:
        report.notes["total_time"] = "no overtakes or completed laps"

    if world.opponents and pipe.truth_records:
        e_pos, e_vel, tpr, fdr, ids = compute_tracking_metrics(
            pipe.tracker_records, pipe.truth_records, gate=hcfg.metric_gate)
        report.e_pos = _round6(e_pos)
        report.e_vel = _round6(e_vel)
        report.tpr = _round6(tpr)
        report.fdr = _round6(fdr)
        report.id_switches = ids
    else:
        report.notes["tracking"] = "no opponents in scenario"

    lt = np.array(loop_times)
    report.wall_clock = {
        "mean_ms": float(lt.mean() * 1e3),
        "p99_ms": float(np.percentile(lt, 99) * 1e3),
        "max_ms": float(lt.max() * 1e3),
        "steps": len(lt),
    }

    if cfg.out_dir is not None:
        _write_outputs(Path(cfg.out_dir), report, pipe, events)
    return report


def _write_outputs(out: Path, report: MetricsReport, pipe: _Pipeline,
                   events: list[dict]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(
        json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    (out / "timing.json").write_text(
        json.dumps(report.wall_clock, sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    with open(out / "events.jsonl", "w", encoding="utf-8") as f:
        for ev in events:
            f.write(json.dumps(ev, sort_keys=True) + "\n")
    with open(out / "tracker.jsonl", "w", encoding="utf-8") as f:
        for rec in pipe.tracker_records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(out / "truth.jsonl", "w", encoding="utf-8") as f:
        for rec in pipe.truth_records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(out / "planner.jsonl", "w", encoding="utf-8") as f:
        for rec in pipe.planner_records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    for k, traj in enumerate(pipe.trajectories):
        with open(out / f"traj_{k:03d}.csv", "w", encoding="utf-8") as f:
            f.write("s_m,d_m,v_mps\n")
            for s_i, d_i, v_i in zip(traj.s, traj.d, traj.v):
                f.write(f"{s_i:.6f},{d_i:.6f},{v_i:.6f}\n")


# --- metrics ----------------------------------------------------------------


def compute_tracking_metrics(tracker_records: list[dict],
                             truth_records: list[dict],
                             gate: float = 0.5):
    """Frame-by-frame comparison of confirmed tracklets to ground truth.

    Matching is optimal nearest-distance under the gate. Returns
    (e_pos, e_vel, tpr_percent, fdr_percent, id_switches).
    """
    from scipy.optimize import linear_sum_assignment

    if not tracker_records or len(tracker_records) != len(truth_records):
        raise ValueError("empty or misaligned traces")

    sq_pos, sq_vel = [], []
    n_visible = 0
    n_matched = 0
    n_confirmed = 0
    last_id: dict[int, int] = {}
    id_switches = 0

    for trk, tru in zip(tracker_records, truth_records):
        conf = [t for t in trk["tracklets"] if t["status"] == "confirmed"]
        n_confirmed += len(conf)
        visible_idx = [i for i, o in enumerate(tru["opponents"]) if o["visible"]]
        n_visible += len(visible_idx)
        if not conf or not visible_idx:
            continue
        tp = np.array([t["p"] for t in conf])
        gp = np.array([tru["opponents"][i]["p"] for i in visible_idx])
        cost = np.hypot(tp[:, None, 0] - gp[None, :, 0], tp[:, None, 1] - gp[None, :, 1])
        rows, cols = linear_sum_assignment(cost)
        for r, c in zip(rows, cols):
            if cost[r, c] > gate:
                continue
            n_matched += 1
            truth_opp = tru["opponents"][visible_idx[c]]
            tv = np.array(conf[r]["v"])
            gv = np.array(truth_opp["v"])
            sq_pos.append(cost[r, c] ** 2)
            sq_vel.append(float(np.sum((tv - gv) ** 2)))
            gi = visible_idx[c]
            tid = conf[r]["id"]
            if gi in last_id and last_id[gi] != tid:
                id_switches += 1
            last_id[gi] = tid

    e_pos = float(np.sqrt(np.mean(sq_pos))) if sq_pos else None
    e_vel = float(np.sqrt(np.mean(sq_vel))) if sq_vel else None
    tpr = 100.0 * n_matched / n_visible if n_visible else None
    fdr = 100.0 * (n_confirmed - n_matched) / n_confirmed if n_confirmed else None
    return e_pos, e_vel, tpr, fdr, id_switches


def sweep_speed_scaler(base_cfg: RunConfig, scalers: list[float],
                       hcfg: HarnessConfig = HarnessConfig(),
                       **run_kwargs) -> dict:
    """Run the scenario per speed scaler; report R_ot/c per S and S_max."""
    if list(scalers) != sorted(scalers):
        raise ConfigError("scalers must be sorted ascending")
    if isinstance(base_cfg.scenario, dict):
        scenario = dict(base_cfg.scenario)
    else:
        scenario = sim.load_scenario(base_cfg.scenario)
        track = Path(base_cfg.scenario).parent / scenario["track"]
        scenario["track"] = str(track)
    rows = []
    for s_val in scalers:
        scn = json.loads(json.dumps(scenario))
        for opp in scn.get("opponents", []):
            opp["speed_scaler"] = s_val
        sub = dataclasses.replace(
            base_cfg, scenario=scn,
            out_dir=None if base_cfg.out_dir is None
            else str(Path(base_cfg.out_dir) / f"scaler_{s_val:.3f}"))
        report = run_scenario(sub, hcfg=hcfg, **run_kwargs)
        rows.append({"s": s_val, "r_otc": report.r_otc,
                     "n_ot": report.n_ot, "n_crash": report.n_crash})
    s_max = None
    for row in rows:
        if row["r_otc"] is not None and row["r_otc"] >= hcfg.success_floor:
            s_max = row["s"]
    return {"rows": rows, "s_max": s_max,
            "success_floor": hcfg.success_floor}
