"""Overtaking trajectory optimization inside the Region of Collision.

The decision variable is the lateral offset d(s) on an arc-length grid
spanning the RoC plus lead-in/lead-out. The objective trades smoothness
(squared second differences) against fidelity to the ego racing line,
subject to track bounds, side-consistent clearance from the target's
regressed line, lateral clearance from other opponents treated as static,
a discrete curvature cap, and endpoint equality with the racing line.

The solver keeps every iterate feasible (cyclic projections onto the
constraint sets) and only accepts gradient steps that decrease the
objective, so accepted iterates are monotone in cost and the returned
trajectory needs no trust in solver internals: an independent checker
re-evaluates all constraints from the arrays alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import ReferenceLine, TrackModel, finalize_line
from .gpr import OpponentProfile
from .prediction import RegionOfCollision


class PlanningError(RuntimeError):
    pass


class DegenerateRocError(PlanningError):
    """RoC window spans more than half the track."""


class NoFeasibleSideError(PlanningError):
    """Neither side of the target offers enough free width."""


class InfeasibleProblemError(PlanningError):
    """Constraint tightening emptied the feasible box."""


@dataclass(frozen=True)
class PlannerConfig:
    w_smooth: float = 10.0
    w_ref: float = 1.0
    c_min: float = 0.35            # lateral clearance from opponent lines [m]
    kappa_max: float = 1.0 / 0.35  # curvature cap [1/m]
    lead_in: float = 1.0           # grid extension before the RoC [m]
    lead_out: float = 1.0          # grid extension after the RoC [m]
    vehicle_width: float = 0.20
    wall_buffer: float = 0.02      # extra wall margin beyond half the vehicle width
    a_lat_max: float = 6.0         # for re-capping the speed profile
    max_iterations: int = 300
    feas_tol: float = 1e-6


@dataclass(frozen=True)
class ObstacleBox:
    s: float                 # wrapped arc position [m]
    d: float                 # lateral offset [m]
    extent: tuple[float, float]  # (width, length) [m]


@dataclass
class OvertakeProblem:
    s_grid: np.ndarray       # unwrapped, strictly increasing, on the track grid
    s_wrapped: np.ndarray
    d_ref: np.ndarray
    d_opp: np.ndarray
    d_min: np.ndarray        # raw track bounds (negative, right wall)
    d_max: np.ndarray        # raw track bounds (positive, left wall)
    kappa_ref: np.ndarray    # centerline curvature on the grid
    roc_mask: np.ndarray     # samples inside [s_start, s_end]
    static_obstacles: list[ObstacleBox]
    clearance: float
    kappa_max: float
    ds: float
    track_length: float
    grid_start_index: int    # track grid index of s_grid[0]
    v_ref: np.ndarray = field(default=None)  # ego plan speeds on the grid


@dataclass
class OvertakeTrajectory:
    s: np.ndarray            # wrapped grid [m]
    d: np.ndarray
    v: np.ndarray
    side: str
    cost: float
    feasible: bool
    cost_history: np.ndarray
    grid_start_index: int


def build_problem(roc: RegionOfCollision, ego_plan: ReferenceLine,
                  target_prof: OpponentProfile,
                  other_opponents: list[tuple[int, float, float, tuple[float, float]]],
                  track: TrackModel,
                  cfg: PlannerConfig = PlannerConfig()) -> OvertakeProblem:
    """Assemble the grid, reference/opponent curves, bounds and obstacles.

    ``other_opponents`` entries are (id, s, d, extent) of every confirmed
    opponent other than the target; those inside the grid become static
    obstacles with their tracked extent.
    """
    L = track.total_length
    span = float(track.arc_gap(roc.s_start, roc.s_end))
    if span > L / 2:
        raise DegenerateRocError(f"RoC span {span:.2f} m exceeds half the track")
    ds = track.ds
    i0 = math.floor((roc.s_start - cfg.lead_in) / ds)
    i1 = math.ceil((roc.s_start + span + cfg.lead_out) / ds)
    if i1 - i0 < 8:
        raise InfeasibleProblemError("overtake grid degenerate (too short)")
    idx = np.arange(i0, i1 + 1)
    s_grid = idx * ds
    s_wrapped = np.mod(s_grid, L)
    tidx = idx % track.n

    d_ref = ego_plan.offsets[tidx]
    v_ref = ego_plan.speeds[tidx]
    d_opp = np.asarray(target_prof.mean_d(s_wrapped), dtype=float)
    d_max = track.width_left[tidx]
    d_min = -track.width_right[tidx]
    kappa_ref = track.curvature[tidx]
    roc_mask = track.arc_gap(roc.s_start, s_wrapped) <= span + 1e-9

    obstacles = []
    grid_span = s_grid[-1] - s_grid[0]
    for oid, s_o, d_o, extent in other_opponents:
        if oid == roc.target_id:
            continue
        if track.arc_gap(s_wrapped[0], s_o) <= grid_span:
            obstacles.append(ObstacleBox(s=float(np.mod(s_o, L)), d=float(d_o),
                                         extent=tuple(extent)))

    return OvertakeProblem(
        s_grid=s_grid, s_wrapped=s_wrapped, d_ref=d_ref, d_opp=d_opp,
        d_min=d_min, d_max=d_max, kappa_ref=kappa_ref, roc_mask=roc_mask,
        static_obstacles=obstacles, clearance=cfg.c_min,
        kappa_max=cfg.kappa_max, ds=ds, track_length=L,
        grid_start_index=int(i0 % track.n), v_ref=v_ref,
    )


def choose_side(problem: OvertakeProblem,
                cfg: PlannerConfig = PlannerConfig()) -> str:
    """Pick the evasion side with the larger minimum free width over the RoC.

    Ties break toward the side the racing line already occupies. Raises when
    neither side leaves room for the vehicle plus clearance.
    """
    m = problem.roc_mask
    free_left = float(np.min(problem.d_max[m] - problem.d_opp[m]))
    free_right = float(np.min(problem.d_opp[m] - problem.d_min[m]))
    need = problem.clearance + cfg.vehicle_width
    ok_left, ok_right = free_left >= need, free_right >= need
    if not ok_left and not ok_right:
        raise NoFeasibleSideError(
            f"free widths ({free_left:.2f}, {free_right:.2f}) below {need:.2f} m")
    if ok_left and not ok_right:
        return "left"
    if ok_right and not ok_left:
        return "right"
    if abs(free_left - free_right) < 1e-9:
        bias = float(np.mean(problem.d_ref[m] - problem.d_opp[m]))
        return "left" if bias >= 0 else "right"
    return "left" if free_left > free_right else "right"


def _tightened_box(problem: OvertakeProblem, side: str, cfg: PlannerConfig):
    """Per-sample [lo, hi] after vehicle margin, side clearance and obstacles."""
    half_w = cfg.vehicle_width / 2 + cfg.wall_buffer
    lo = problem.d_min + half_w
    hi = problem.d_max - half_w
    m = problem.roc_mask
    if side == "left":
        lo = np.where(m, np.maximum(lo, problem.d_opp + problem.clearance), lo)
    elif side == "right":
        hi = np.where(m, np.minimum(hi, problem.d_opp - problem.clearance), hi)
    else:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")

    for obs in problem.static_obstacles:
        gap = np.abs(_signed_gap(problem.s_wrapped, obs.s, problem.track_length))
        span = gap <= obs.extent[1] / 2
        if not span.any():
            continue
        room_above = float(np.min(hi[span] - obs.d))
        room_below = float(np.min(obs.d - lo[span]))
        if room_above >= room_below:
            lo = np.where(span, np.maximum(lo, obs.d + problem.clearance), lo)
        else:
            hi = np.where(span, np.minimum(hi, obs.d - problem.clearance), hi)

    # endpoint splice pins
    lo[0] = hi[0] = problem.d_ref[0]
    lo[-1] = hi[-1] = problem.d_ref[-1]
    if np.any(lo > hi + 1e-12):
        raise InfeasibleProblemError("empty box after clearance tightening")
    return lo, hi


def _signed_gap(s_from, s_to, L):
    g = np.mod(np.asarray(s_to) - np.asarray(s_from), L)
    return np.where(g >= L / 2, g - L, g)


def _curvature_of(problem: OvertakeProblem, d: np.ndarray) -> np.ndarray:
    """Path curvature surrogate at interior samples: centerline + d''."""
    dd = (d[:-2] - 2 * d[1:-1] + d[2:]) / problem.ds ** 2
    return problem.kappa_ref[1:-1] + dd


def _repair(d, lo, hi, kappa_ref_int, kappa_max, ds, max_sweeps=60, tol=1e-9):
    """Cyclic projections onto box and curvature band, for near-feasible points.

    Curvature rows are Gauss-Seidel swept in three interleaved groups so each
    vectorized sub-sweep touches disjoint variables. Returns (d, ok).
    """
    n = len(d)
    inv_norm = ds ** 2 / 6.0
    lo_k = -kappa_max - kappa_ref_int
    hi_k = kappa_max - kappa_ref_int
    groups = [np.arange(g, n - 2, 3) for g in range(3)]
    d = np.clip(d, lo, hi)
    for _ in range(max_sweeps):
        val = (d[:-2] - 2 * d[1:-1] + d[2:]) / ds ** 2
        viol = float(np.max(np.maximum(val - hi_k, lo_k - val), initial=0.0))
        if viol <= tol:
            return d, True
        for g in groups:
            val = (d[g] - 2 * d[g + 1] + d[g + 2]) / ds ** 2
            excess = val - np.clip(val, lo_k[g], hi_k[g])
            if np.any(excess != 0.0):
                corr = excess * inv_norm
                d[g] -= corr
                d[g + 1] += 2 * corr
                d[g + 2] -= corr
        d = np.clip(d, lo, hi)
    val = (d[:-2] - 2 * d[1:-1] + d[2:]) / ds ** 2
    viol = float(np.max(np.maximum(val - hi_k, lo_k - val), initial=0.0))
    return d, viol <= tol


def _objective(d, d_ref, w_smooth, w_ref, ds):
    r = (d[:-2] - 2 * d[1:-1] + d[2:]) / ds ** 2
    return float(w_smooth * np.dot(r, r) + w_ref * np.dot(d - d_ref, d - d_ref))


def _gradient(d, d_ref, w_smooth, w_ref, ds):
    r = (d[:-2] - 2 * d[1:-1] + d[2:]) / ds ** 4
    g = 2 * w_ref * (d - d_ref)
    g[:-2] += 2 * w_smooth * r
    g[1:-1] -= 4 * w_smooth * r
    g[2:] += 2 * w_smooth * r
    return g


def _p_diagonals(n: int, w_s: float, w_r: float, ds: float):
    """Banded diagonals of the objective Hessian P = 2 w_r I + 2 (w_s/ds^4) D2'D2."""
    w = w_s / ds ** 4
    k0 = np.full(n, 6.0)
    k0[[0, -1]] = 1.0
    k0[[1, -2]] = 5.0
    k1 = np.full(n - 1, -4.0)
    k1[[0, -1]] = -2.0
    k2 = np.ones(n - 2)
    return 2 * w_r + 2 * w * k0, 2 * w * k1, 2 * w * k2


def _solve_box_qp(d_ref: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                  w_s: float, w_r: float, ds: float, max_iter: int = 60):
    """Exact active-set Newton for the box-constrained smoothness QP.

    Free-variable Newton systems stay banded (bandwidth 2) under index
    compression, so each iteration is O(n). Returns (d, accepted cost
    history, converged). Iterates stay in the box and strictly decrease J.
    """
    from scipy.linalg import cho_solve_banded, cholesky_banded

    n = len(d_ref)
    p0, p1, p2 = _p_diagonals(n, w_s, w_r, ds)
    pinned = lo == hi
    d = np.clip(d_ref.copy(), lo, hi)
    j = _objective(d, d_ref, w_s, w_r, ds)
    history = [j]
    eps_b = 1e-12
    for _ in range(max_iter):
        g = _gradient(d, d_ref, w_s, w_r, ds)
        active = pinned | ((d <= lo + eps_b) & (g > 0)) | ((d >= hi - eps_b) & (g < 0))
        f = np.where(~active)[0]
        if len(f) == 0 or float(np.max(np.abs(g[f]), initial=0.0)) < 1e-11:
            return d, history, True
        m = len(f)
        ab = np.zeros((3, m))
        ab[2] = p0[f]
        if m > 1:
            gap1 = f[1:] - f[:-1]
            ab[1, 1:] = np.where(gap1 == 1, p1[f[:-1]],
                                 np.where(gap1 == 2, p2[f[:-1]], 0.0))
        if m > 2:
            gap2 = f[2:] - f[:-2]
            ab[0, 2:] = np.where(gap2 == 2, p2[f[:-2]], 0.0)
        factor = cholesky_banded(ab, lower=False)
        step = np.zeros(n)
        step[f] = cho_solve_banded((factor, False), -g[f])
        alpha, improved = 1.0, False
        while alpha > 1e-12:
            cand = np.clip(d + alpha * step, lo, hi)
            j_cand = _objective(cand, d_ref, w_s, w_r, ds)
            if j_cand < j - 1e-15:
                d, j = cand, j_cand
                history.append(j)
                improved = True
                break
            alpha *= 0.5
        if not improved:
            return d, history, True
    return d, history, False


def _banded_factor(n: int, diag: np.ndarray, w_curv: np.ndarray, k_const: float):
    """Cholesky (upper banded) of diag(diag) + D2' diag(w_curv + k_const) D2.

    D2 is the open (n-2) x n second-difference operator; the result has
    bandwidth 2, so factorization and solves stay O(n).
    """
    from scipy.linalg import cholesky_banded

    w = w_curv + k_const
    main = np.zeros(n)
    main[:-2] += w
    main[1:-1] += 4 * w
    main[2:] += w
    off1 = np.zeros(n - 1)
    off1[:-1] += -2 * w
    off1[1:] += -2 * w
    off2 = w.copy()
    ab = np.zeros((3, n))
    ab[0, 2:] = off2
    ab[1, 1:] = off1
    ab[2, :] = main + diag
    return cholesky_banded(ab, lower=False), False


def solve_overtake(problem: OvertakeProblem, side: str,
                   cfg: PlannerConfig = PlannerConfig()) -> OvertakeTrajectory:
    """Minimize smoothness + reference cost over the feasible lateral corridor.

    Operator-splitting (ADMM) on the quadratic objective with a banded
    factorization, plus a feasibility filter: periodic candidates are repaired
    onto the constraint set and accepted only when they decrease the
    objective, so the recorded iterates are feasible and monotone in cost.
    Returns a best-effort trajectory flagged infeasible when no candidate
    passes the filter.
    """
    from scipy.linalg import cho_solve_banded

    lo, hi = _tightened_box(problem, side, cfg)
    kref_int = problem.kappa_ref[1:-1]
    ds = problem.ds
    n = len(lo)
    w_s, w_r = cfg.w_smooth, cfg.w_ref
    d_ref = problem.d_ref

    # fast path: the box-only optimum is the full optimum whenever the
    # curvature band turns out inactive there (the common case)
    d_box, hist_box, conv = _solve_box_qp(d_ref, lo, hi, w_s, w_r, ds)
    if conv and float(np.max(np.abs(_curvature_of(problem, d_box))
                             - problem.kappa_max, initial=0.0)) <= 0.0:
        return _finish(problem, side, cfg, d_box,
                       _objective(d_box, d_ref, w_s, w_r, ds), hist_box, True)

    def repair(x):
        return _repair(x.copy(), lo, hi, kref_int, problem.kappa_max, ds,
                       max_sweeps=cfg.max_iterations, tol=0.1 * cfg.feas_tol)

    # curvature rows scaled to unit norm: (1,-2,1)/sqrt(6)
    sq6 = math.sqrt(6.0)
    scale = ds ** 2 / sq6
    lo_k = (-problem.kappa_max - kref_int) * scale
    hi_k = (problem.kappa_max - kref_int) * scale
    l_all = np.concatenate([lo, lo_k])
    u_all = np.concatenate([hi, hi_k])
    is_eq = l_all == u_all

    sigma = 1e-6
    q = -2 * w_r * d_ref

    def apply_a(x):
        return np.concatenate([x, (x[:-2] - 2 * x[1:-1] + x[2:]) / sq6])

    def apply_at(v):
        out = v[:n].copy()
        w = v[n:] / sq6
        out[:-2] += w
        out[1:-1] -= 2 * w
        out[2:] += w
        return out

    def factorize(rho_base):
        rho_vec = np.where(is_eq, 1e3 * rho_base, rho_base)
        diag = 2 * w_r + sigma + rho_vec[:n]
        factor = _banded_factor(n, diag, rho_vec[n:] / 6.0, 2 * w_s / ds ** 4)
        return rho_vec, factor

    rho = 25.0
    rho_vec, factor = factorize(rho)

    x = np.clip(d_ref.copy(), lo, hi)
    z = apply_a(x)
    y = np.zeros_like(z)

    best_d, ok0 = repair(x)
    best_j = _objective(best_d, d_ref, w_s, w_r, ds) if ok0 else np.inf
    history = [best_j] if ok0 else []
    feasible_found = ok0

    alpha = 1.6  # over-relaxation
    eps_prim = 1e-10
    eps_dual = 1e-7 * (2 * w_r + 2 * w_s / ds ** 4)  # relative to the Hessian scale
    check_every = 100
    max_admm = 8000
    best_prim = np.inf
    stagnant_since = 0
    for k in range(1, max_admm + 1):
        rhs = sigma * x - q + apply_at(rho_vec * z - y)
        x = cho_solve_banded(factor, rhs)
        ax = apply_a(x)
        ax_rel = alpha * ax + (1 - alpha) * z
        z_new = np.clip(ax_rel + y / rho_vec, l_all, u_all)
        y = y + rho_vec * (ax_rel - z_new)
        r_prim = float(np.max(np.abs(ax - z_new)))
        r_dual = float(np.max(np.abs(_gradient(x, d_ref, w_s, w_r, ds) + apply_at(y))))
        z = z_new
        if r_prim < 0.9 * best_prim:
            best_prim = r_prim
            stagnant_since = k
        elif k - stagnant_since > 1500:
            break  # primal residual plateaued: (near-)infeasible, stop early
        converged = r_prim < eps_prim and r_dual < eps_dual
        if k % check_every == 0 or converged or k == max_admm:
            cand, ok = repair(x)
            if ok:
                j_cand = _objective(cand, d_ref, w_s, w_r, ds)
                if j_cand < best_j - 1e-15:
                    best_d, best_j = cand, j_cand
                    history.append(j_cand)
                    feasible_found = True
            if converged:
                break
            if k % 400 == 0 and not converged:
                # adaptive penalty: rebalance primal vs dual progress
                if r_prim > 10 * r_dual and rho < 1e5:
                    rho *= 5.0
                    rho_vec, factor = factorize(rho)
                elif r_dual > 10 * r_prim and rho > 1e-2:
                    rho /= 5.0
                    rho_vec, factor = factorize(rho)

    cand, ok = repair(x)
    if ok:
        j_cand = _objective(cand, d_ref, w_s, w_r, ds)
        if j_cand < best_j - 1e-15:
            best_d, best_j = cand, j_cand
            history.append(j_cand)
            feasible_found = True

    if not feasible_found:
        best_d = np.clip(x, lo, hi)
        best_j = _objective(best_d, d_ref, w_s, w_r, ds)
        history = [best_j]

    return _finish(problem, side, cfg, best_d, best_j, history, feasible_found)


def _finish(problem: OvertakeProblem, side: str, cfg: PlannerConfig,
            d: np.ndarray, cost: float, history: list, feasible_hint: bool
            ) -> OvertakeTrajectory:
    kappa = np.zeros(len(d))
    kappa[1:-1] = _curvature_of(problem, d)
    kappa[0], kappa[-1] = problem.kappa_ref[0], problem.kappa_ref[-1]
    v = np.minimum(problem.v_ref,
                   np.sqrt(cfg.a_lat_max / np.maximum(np.abs(kappa), 1e-6)))
    report = verify_constraints(problem, side, d, cfg)
    feasible = feasible_hint and report["max_violation"] <= cfg.feas_tol
    return OvertakeTrajectory(
        s=problem.s_wrapped.copy(), d=d, v=v, side=side, cost=cost,
        feasible=feasible, cost_history=np.array(history),
        grid_start_index=problem.grid_start_index,
    )


def verify_constraints(problem: OvertakeProblem, side: str, d: np.ndarray,
                       cfg: PlannerConfig = PlannerConfig()) -> dict:
    """Independent feasibility audit of a candidate offset profile.

    Walks the constraint definitions directly from the problem arrays;
    returns per-constraint worst violations (positive = violated).
    """
    half_w = cfg.vehicle_width / 2
    bounds_viol = float(np.max(np.maximum(
        (problem.d_min + half_w) - d, d - (problem.d_max - half_w)), initial=0.0))

    m = problem.roc_mask
    if side == "left":
        clear_viol = float(np.max((problem.d_opp[m] + problem.clearance) - d[m],
                                  initial=0.0))
    else:
        clear_viol = float(np.max(d[m] - (problem.d_opp[m] - problem.clearance),
                                  initial=0.0))

    obs_viol = 0.0
    for obs in problem.static_obstacles:
        gap = np.abs(_signed_gap(problem.s_wrapped, obs.s, problem.track_length))
        span = gap <= obs.extent[1] / 2
        if span.any():
            v = float(np.max(problem.clearance - np.abs(d[span] - obs.d)))
            obs_viol = max(obs_viol, v)

    kappa = _curvature_of(problem, d)
    kappa_viol = float(np.max(np.abs(kappa) - problem.kappa_max, initial=0.0))

    endpoint_viol = max(abs(d[0] - problem.d_ref[0]), abs(d[-1] - problem.d_ref[-1]))

    return {
        "bounds": bounds_viol,
        "clearance": clear_viol,
        "obstacles": obs_viol,
        "curvature": kappa_viol,
        "endpoints": endpoint_viol,
        "max_violation": max(bounds_viol, clear_viol, obs_viol, kappa_viol,
                             endpoint_viol),
    }


def splice(trajectory: OvertakeTrajectory, ego_plan: ReferenceLine,
           track: TrackModel, seam_halfwidth: int = 2,
           seam_kink_tol: float = 0.02) -> ReferenceLine:
    """Patch the solved offsets/speeds into the ego plan with seam smoothing.

    The trajectory grid is aligned with the track grid, so splicing is an
    index assignment. A seam whose slope discontinuity exceeds the tolerance
    gets one 5-point averaging pass; kink-free seams (identity splices) are
    left untouched.
    """
    offsets = ego_plan.offsets.copy()
    speeds = ego_plan.speeds.copy()
    n = track.n
    idx = (trajectory.grid_start_index + np.arange(len(trajectory.d))) % n
    offsets[idx] = trajectory.d
    speeds[idx] = trajectory.v

    kernel = np.ones(2 * seam_halfwidth + 1) / (2 * seam_halfwidth + 1)
    base = offsets.copy()
    for seam in (int(idx[0]), int(idx[-1])):
        kink = abs(base[(seam - 1) % n] - 2 * base[seam] + base[(seam + 1) % n])
        if kink <= seam_kink_tol:
            continue
        window = (seam + np.arange(-seam_halfwidth, seam_halfwidth + 1)) % n
        for w in window:
            neigh = (w + np.arange(-seam_halfwidth, seam_halfwidth + 1)) % n
            offsets[w] = float(np.dot(kernel, base[neigh]))

    return finalize_line(track, ego_plan.kind, offsets, speeds)
