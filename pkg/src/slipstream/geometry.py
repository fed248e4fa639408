"""Closed-track geometry: Frenet transforms and reference-line generation.

A track is a closed centerline with per-sample lateral clearances. All
internal geometry lives on a uniform arc-length grid so that lookups,
regression and planning can index by ``s`` directly.
"""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

DEFAULT_DS = 0.05  # internal resample spacing [m]

LINE_KINDS = ("racing_line", "shortest_path", "centerline")


class TrackLoadError(ValueError):
    """Raised when a track file fails parsing or validation."""


class OutOfCorridorError(ValueError):
    """Raised when a point is too far from the centerline to localize."""


class InfeasibleBoundsError(ValueError):
    """Raised when reference-line margins exceed the local half-width."""


@dataclass(frozen=True)
class FrenetPose:
    """Curvilinear pose: arc length ``s`` in [0, L) and signed offset ``d`` (positive left)."""

    s: float
    d: float


class TrackModel:
    """Closed centerline resampled onto a uniform arc-length grid.

    ``points[i]`` sits at arc length ``i * ds``; the segment from point i to
    point (i+1) % n carries a fixed tangent/normal frame used by both
    directions of the Frenet transform, which makes round trips exact.
    """

    def __init__(self, points: np.ndarray, width_left: np.ndarray,
                 width_right: np.ndarray, ds: float):
        points = np.asarray(points, dtype=float)
        width_left = np.asarray(width_left, dtype=float)
        width_right = np.asarray(width_right, dtype=float)
        if points.ndim != 2 or points.shape[1] != 2:
            raise ValueError("points must have shape (n, 2)")
        if not (len(points) == len(width_left) == len(width_right)):
            raise ValueError("points and widths must have equal length")
        if np.any(width_left <= 0) or np.any(width_right <= 0):
            raise ValueError("track widths must be strictly positive")
        if not 0 < ds <= 0.5:
            raise ValueError("sample spacing must be in (0, 0.5] m")
        self.points = points
        self.width_left = width_left
        self.width_right = width_right
        self.ds = float(ds)
        self.n = len(points)
        self.total_length = self.n * self.ds
        self.cum_arc_length = np.arange(self.n) * self.ds

        seg = np.roll(points, -1, axis=0) - points
        chord = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(chord <= 0):
            raise ValueError("duplicate consecutive centerline points")
        self.seg_dir = seg / chord[:, None]
        self.seg_normal = np.column_stack([-self.seg_dir[:, 1], self.seg_dir[:, 0]])
        heading = np.arctan2(self.seg_dir[:, 1], self.seg_dir[:, 0])
        dth = heading - np.roll(heading, 1)
        self.curvature = wrap_angle(dth) / self.ds  # at vertex i, between segments i-1 and i
        self._chord = chord
        self._kdtree: cKDTree | None = None
        self._digest: bytes | None = None

    def digest(self) -> bytes:
        """Content hash for memoizing derived artifacts (lines are deterministic)."""
        if self._digest is None:
            import hashlib

            h = hashlib.sha1()
            h.update(self.points.tobytes())
            h.update(self.width_left.tobytes())
            h.update(self.width_right.tobytes())
            self._digest = h.digest()
        return self._digest

    @property
    def kdtree(self) -> cKDTree:
        if self._kdtree is None:
            self._kdtree = cKDTree(self.points)
        return self._kdtree

    def wrap_s(self, s):
        return np.mod(s, self.total_length)

    def index_of(self, s) -> np.ndarray:
        """Grid index of the segment containing arc length ``s``."""
        return (np.floor(self.wrap_s(s) / self.ds).astype(int)) % self.n

    def half_width_at(self, s):
        """(left, right) clearances at ``s`` by linear interpolation."""
        sw = self.wrap_s(s)
        k = np.floor(sw / self.ds).astype(int) % self.n
        t = sw / self.ds - np.floor(sw / self.ds)
        k1 = (k + 1) % self.n
        wl = self.width_left[k] * (1 - t) + self.width_left[k1] * t
        wr = self.width_right[k] * (1 - t) + self.width_right[k1] * t
        return wl, wr

    def arc_gap(self, s_from, s_to):
        """Forward (non-negative) arc distance from ``s_from`` to ``s_to``."""
        return np.mod(np.asarray(s_to) - np.asarray(s_from), self.total_length)

    def signed_gap(self, s_from, s_to):
        """Signed shortest arc distance from ``s_from`` to ``s_to`` in [-L/2, L/2)."""
        g = self.arc_gap(s_from, s_to)
        L = self.total_length
        return np.where(g >= L / 2, g - L, g)


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def _resample_closed(points: np.ndarray, widths: np.ndarray, ds: float):
    """Resample a closed polyline to (approximately) uniform arc spacing.

    Returns new points/widths on the grid s_i = i * ds_eff where ds_eff
    divides the total polyline length exactly.
    """
    closed_pts = np.vstack([points, points[:1]])
    closed_w = np.vstack([widths, widths[:1]])
    seg_len = np.hypot(*np.diff(closed_pts, axis=0).T)
    s_nodes = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = s_nodes[-1]
    n = max(int(round(total / ds)), 8)
    ds_eff = total / n
    s_grid = np.arange(n) * ds_eff
    x = np.interp(s_grid, s_nodes, closed_pts[:, 0])
    y = np.interp(s_grid, s_nodes, closed_pts[:, 1])
    wl = np.interp(s_grid, s_nodes, closed_w[:, 0])
    wr = np.interp(s_grid, s_nodes, closed_w[:, 1])
    return np.column_stack([x, y]), wl, wr, ds_eff


def load_track(source: str | Path, ds: float = DEFAULT_DS) -> TrackModel:
    """Load a track from CSV (path or raw CSV text).

    Expected columns, with a header row: ``x_m,y_m,w_left_m,w_right_m``.
    The centerline is validated (closure, positive widths) and resampled
    onto the uniform internal grid.
    """
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        if not os.path.exists(source):
            raise TrackLoadError(f"track file not found: {source}")
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source

    rows = []
    reader = io.StringIO(text)
    header = reader.readline().strip()
    cols = [c.strip() for c in header.split(",")]
    expected = ["x_m", "y_m", "w_left_m", "w_right_m"]
    if cols != expected:
        raise TrackLoadError(f"bad header {cols!r}, expected {expected!r}")
    for lineno, line in enumerate(reader, start=2):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise TrackLoadError(f"row {lineno}: expected 4 columns, got {len(parts)}")
        try:
            x, y, wl, wr = (float(p) for p in parts)
        except ValueError as exc:
            raise TrackLoadError(f"row {lineno}: {exc}") from exc
        if not all(math.isfinite(v) for v in (x, y, wl, wr)):
            raise TrackLoadError(f"row {lineno}: non-finite value")
        if wl <= 0 or wr <= 0:
            raise TrackLoadError(f"row {lineno}: nonpositive width")
        rows.append((x, y, wl, wr))

    if len(rows) < 4:
        raise TrackLoadError(f"need at least 4 centerline points, got {len(rows)}")
    arr = np.array(rows)
    pts, widths = arr[:, :2], arr[:, 2:]

    seg = np.diff(pts, axis=0)
    spacing = np.hypot(seg[:, 0], seg[:, 1])
    closing_gap = np.hypot(*(pts[0] - pts[-1]))
    if closing_gap > 2 * spacing.max():
        raise TrackLoadError(
            f"centerline not closed: gap {closing_gap:.3f} m between last and first point"
        )
    # drop an explicitly repeated closing point
    if closing_gap < 1e-9:
        pts, widths = pts[:-1], widths[:-1]

    new_pts, wl, wr, ds_eff = _resample_closed(pts, widths, ds)
    return TrackModel(new_pts, wl, wr, ds_eff)


def save_track(path: str | Path, points: np.ndarray, width_left, width_right) -> None:
    """Write a centerline CSV in the format `load_track` expects."""
    points = np.asarray(points, float)
    wl = np.broadcast_to(np.asarray(width_left, float), (len(points),))
    wr = np.broadcast_to(np.asarray(width_right, float), (len(points),))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("x_m,y_m,w_left_m,w_right_m\n")
        for (x, y), a, b in zip(points, wl, wr):
            f.write(f"{x:.6f},{y:.6f},{a:.6f},{b:.6f}\n")


# --- Frenet transforms ---------------------------------------------------


def cart_to_frenet_batch(track: TrackModel, pts: np.ndarray):
    """Vectorized Cartesian -> Frenet. Returns (s, d, dist) without corridor checks."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    _, nearest = track.kdtree.query(pts)
    offsets = np.arange(-3, 3)
    cand = (nearest[:, None] + offsets[None, :]) % track.n  # (m, 6)
    a = track.points[cand]                                  # (m, 6, 2)
    chord = track._chord[cand]                              # (m, 6)
    dirs = track.seg_dir[cand]                              # (m, 6, 2)
    rel = pts[:, None, :] - a
    t = np.clip(np.einsum("mkj,mkj->mk", rel, dirs) / chord, 0.0, 1.0)
    foot = a + (t * chord)[..., None] * dirs
    diff = pts[:, None, :] - foot
    dist2 = np.einsum("mkj,mkj->mk", diff, diff)
    best = np.argmin(dist2, axis=1)
    m = np.arange(len(pts))
    seg_idx = cand[m, best]
    tb = t[m, best]
    dirb = dirs[m, best]
    diffb = diff[m, best]
    dist = np.sqrt(dist2[m, best])
    sign = np.sign(dirb[:, 0] * diffb[:, 1] - dirb[:, 1] * diffb[:, 0])
    sign = np.where(sign == 0, 1.0, sign)
    s = track.wrap_s((seg_idx + tb) * track.ds)
    return s, sign * dist, dist


def cart_to_frenet(track: TrackModel, p) -> FrenetPose:
    """Project a 2D point onto the track; raises if beyond 2x the max track width."""
    s, d, dist = cart_to_frenet_batch(track, np.asarray(p, float).reshape(1, 2))
    bound = 2.0 * float(np.max(track.width_left + track.width_right))
    if dist[0] > bound:
        raise OutOfCorridorError(f"point {p} is {dist[0]:.2f} m from the centerline")
    return FrenetPose(float(s[0]), float(d[0]))


def frenet_to_cart_batch(track: TrackModel, s, d):
    s = track.wrap_s(np.asarray(s, dtype=float))
    d = np.asarray(d, dtype=float)
    k = np.floor(s / track.ds).astype(int) % track.n
    t = s / track.ds - np.floor(s / track.ds)
    a = track.points[k]
    foot = a + (t * track._chord[k])[..., None] * track.seg_dir[k]
    return foot + d[..., None] * track.seg_normal[k]

def frenet_to_cart(track: TrackModel, q: FrenetPose) -> np.ndarray:
    return frenet_to_cart_batch(track, np.array([q.s]), np.array([q.d]))[0]


# --- reference lines ------------------------------------------------------


@dataclass(frozen=True)
class LineConfig:
    """Reference-line generation parameters (sized for 1:10-scale cars)."""

    a_lat_max: float = 6.0        # lateral acceleration cap for speed profiles [m/s^2]
    vehicle_width: float = 0.20   # [m]
    extra_margin: float = 0.05    # wall margin on top of half the vehicle width [m]
    curvature_eps: float = 1e-6
    iterations: int = 6000
    reg_weight: float = 1e-3      # second-difference regularizer for the shortest path

    @property
    def margin(self) -> float:
        return 0.5 * self.vehicle_width + self.extra_margin


@dataclass(frozen=True)
class ReferenceLine:
    """A lateral offset profile d(s) with a curvature-capped speed profile.

    Derived path arrays share the track's uniform sample grid; lookups by
    ``s`` are plain index interpolation.
    """

    kind: str
    offsets: np.ndarray     # d(s) at each grid sample [m]
    speeds: np.ndarray      # v(s) at each grid sample [m/s]
    path: np.ndarray = field(repr=False)        # (n, 2) Cartesian samples
    heading: np.ndarray = field(repr=False)     # path heading per segment [rad]
    metric: np.ndarray = field(repr=False)      # path length per unit centerline s
    path_curvature: np.ndarray = field(repr=False)
    ds: float = DEFAULT_DS

    def _interp(self, arr: np.ndarray, s):
        n = len(arr)
        sw = np.mod(s, n * self.ds)
        k = np.floor(sw / self.ds).astype(int) % n
        t = sw / self.ds - np.floor(sw / self.ds)
        return arr[k] * (1 - t) + arr[(k + 1) % n] * t

    def offset_at(self, s):
        return self._interp(self.offsets, s)

    def speed_at(self, s):
        return self._interp(self.speeds, s)

    def metric_at(self, s):
        n = len(self.metric)
        k = np.floor(np.mod(s, n * self.ds) / self.ds).astype(int) % n
        return self.metric[k]

    def pose_at(self, s):
        """(x, y, heading) on the line at centerline arc length ``s``."""
        n = len(self.path)
        sw = np.mod(s, n * self.ds)
        k = int(sw / self.ds) % n
        t = sw / self.ds - int(sw / self.ds)
        p = self.path[k] * (1 - t) + self.path[(k + 1) % n] * t
        return p[0], p[1], self.heading[k]

    def path_length(self) -> float:
        return float(np.sum(self.metric) * self.ds)

    def lap_time(self) -> float:
        v_seg = 0.5 * (self.speeds + np.roll(self.speeds, -1))
        return float(np.sum(self.metric * self.ds / v_seg))

    def with_profile(self, offsets: np.ndarray, speeds: np.ndarray, track: TrackModel,
                     kind: str | None = None) -> "ReferenceLine":
        return finalize_line(track, kind or self.kind, offsets, speeds)


def path_from_offsets(track: TrackModel, d: np.ndarray) -> np.ndarray:
    return track.points + d[:, None] * track.seg_normal


def polyline_curvature(path: np.ndarray, ds_fallback: float) -> np.ndarray:
    """Discrete curvature of a closed polyline via heading differences."""
    seg = np.roll(path, -1, axis=0) - path
    seg_len = np.maximum(np.hypot(seg[:, 0], seg[:, 1]), 1e-12)
    heading = np.arctan2(seg[:, 1], seg[:, 0])
    dth = wrap_angle(heading - np.roll(heading, 1))
    avg_len = 0.5 * (seg_len + np.roll(seg_len, 1))
    return dth / np.maximum(avg_len, 0.25 * ds_fallback)


def finalize_line(track: TrackModel, kind: str, d: np.ndarray,
                  speeds: np.ndarray) -> ReferenceLine:
    path = path_from_offsets(track, d)
    seg = np.roll(path, -1, axis=0) - path
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    heading = np.arctan2(seg[:, 1], seg[:, 0])
    metric = seg_len / track.ds
    kappa = polyline_curvature(path, track.ds)
    return ReferenceLine(kind=kind, offsets=np.asarray(d, float),
                         speeds=np.asarray(speeds, float), path=path,
                         heading=heading, metric=metric, path_curvature=kappa,
                         ds=track.ds)


def _second_diff(d: np.ndarray) -> np.ndarray:
    return np.roll(d, 1) - 2 * d + np.roll(d, -1)


def _solve_offsets(track: TrackModel, lo: np.ndarray, hi: np.ndarray,
                   grad_fn, lipschitz: float, iterations: int) -> np.ndarray:
    """FISTA with box projection; deterministic, solver-free."""
    d = np.clip(np.zeros(track.n), lo, hi)
    y = d.copy()
    t_acc = 1.0
    step = 1.0 / lipschitz
    for _ in range(iterations):
        d_new = np.clip(y - step * grad_fn(y), lo, hi)
        t_new = 0.5 * (1 + math.sqrt(1 + 4 * t_acc * t_acc))
        y = d_new + ((t_acc - 1) / t_new) * (d_new - d)
        if np.max(np.abs(d_new - d)) < 1e-12:
            d = d_new
            break
        d, t_acc = d_new, t_new
    return np.clip(d, lo, hi)


def _min_curvature_offsets(track: TrackModel, lo: np.ndarray, hi: np.ndarray,
                           iterations: int = 60, ridge: float = 1e-9) -> np.ndarray:
    """Minimize sum of squared second differences of the offset path.

    The objective is quadratic with a constant Hessian, so a single
    factorization supports projected Newton steps; box clipping plus a
    backtracking acceptance keeps the iterates feasible and descending.
    """
    from scipy.linalg import cho_factor, cho_solve

    n = track.n
    normals = track.seg_normal

    def dd(u):
        return np.roll(u, 1, axis=0) - 2 * u + np.roll(u, -1, axis=0)

    b = dd(track.points)  # residual at d = 0

    def residual(d):
        return b + dd(d[:, None] * normals)

    def cost(d):
        r = residual(d)
        return float(np.sum(r * r))

    def grad(d):
        return 2 * np.einsum("ij,ij->i", dd(residual(d)), normals)

    D2 = -2 * np.eye(n) + np.eye(n, k=1) + np.eye(n, k=-1)
    D2[0, -1] = D2[-1, 0] = 1.0
    K = D2.T @ D2
    outer = normals[:, 0:1] * normals[:, 0:1].T + normals[:, 1:2] * normals[:, 1:2].T
    H = 2 * K * outer + ridge * np.eye(n)
    factor = cho_factor(H)

    d = np.clip(np.zeros(n), lo, hi)
    j = cost(d)
    for _ in range(iterations):
        step = cho_solve(factor, -grad(d))
        alpha = 1.0
        improved = False
        while alpha > 1e-6:
            d_new = np.clip(d + alpha * step, lo, hi)
            j_new = cost(d_new)
            if j_new < j - 1e-15:
                d, j = d_new, j_new
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
    return d


_LINE_CACHE: dict = {}


def make_reference_line(track: TrackModel, kind: str, lap_speed: float,
                        cfg: LineConfig = LineConfig()) -> ReferenceLine:
    """Build one of the three deterministic reference lines.

    centerline: d = 0. shortest_path: minimizes first-order path length.
    racing_line: minimizes integrated squared curvature (via squared second
    differences of the offset path). Both optimize per-sample offsets under
    box bounds with projected accelerated gradient steps.
    """
    if kind not in LINE_KINDS:
        raise ValueError(f"unknown reference line kind {kind!r}")
    if lap_speed <= 0:
        raise ValueError("lap_speed must be positive")
    key = (track.digest(), kind, float(lap_speed), cfg)
    cached = _LINE_CACHE.get(key)
    if cached is not None:
        return cached
    lo = -(track.width_right - cfg.margin)
    hi = track.width_left - cfg.margin
    if np.any(lo >= hi):
        raise InfeasibleBoundsError("margin exceeds local half-width")

    if kind == "centerline":
        d = np.zeros(track.n)
    elif kind == "shortest_path":
        kappa = track.curvature
        ds = track.ds

        def grad(d):
            g = (2 * d - np.roll(d, 1) - np.roll(d, -1)) / ds
            g += -kappa * ds
            g += 2 * cfg.reg_weight * _second_diff(_second_diff(d))
            return g

        lip = 4.0 / ds + 32 * cfg.reg_weight
        d = _solve_offsets(track, lo, hi, grad, lip, cfg.iterations)
    else:  # racing_line
        d = _min_curvature_offsets(track, lo, hi)

    path = path_from_offsets(track, d)
    kappa_path = polyline_curvature(path, track.ds)
    v = np.minimum(lap_speed,
                   np.sqrt(cfg.a_lat_max / np.maximum(np.abs(kappa_path), cfg.curvature_eps)))
    line = finalize_line(track, kind, d, v)
    _LINE_CACHE[key] = line
    return line
