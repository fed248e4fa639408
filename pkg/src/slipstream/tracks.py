"""Synthetic closed-track builders used by tests, scripts and bundled scenarios."""

from __future__ import annotations

import numpy as np

from .geometry import TrackModel, _resample_closed


def circle_track(radius: float = 5.0, n_points: int = 360,
                 width: float = 1.0, ds: float = 0.05) -> TrackModel:
    th = np.linspace(0, 2 * np.pi, n_points, endpoint=False)
    pts = radius * np.column_stack([np.cos(th), np.sin(th)])
    w = np.full(n_points, width)
    new_pts, wl, wr, ds_eff = _resample_closed(pts, np.column_stack([w, w]), ds)
    return TrackModel(new_pts, wl, wr, ds_eff)


def stadium_track(straight: float = 7.0, radius: float = 2.5,
                  width_left: float = 1.0, width_right: float = 1.0,
                  ds: float = 0.05) -> TrackModel:
    """Rounded rectangle: two straights joined by semicircular turns (CCW)."""
    pts = []
    step = ds / 2  # pre-sampling finer than the target grid
    n_straight = max(int(straight / step), 2)
    n_arc = max(int(np.pi * radius / step), 8)
    # bottom straight, left to right, centered on origin
    xs = np.linspace(-straight / 2, straight / 2, n_straight, endpoint=False)
    pts.append(np.column_stack([xs, np.full_like(xs, -radius)]))
    # right turn (semicircle from -90 deg to +90 deg)
    th = np.linspace(-np.pi / 2, np.pi / 2, n_arc, endpoint=False)
    pts.append(np.column_stack([straight / 2 + radius * np.cos(th), radius * np.sin(th)]))
    # top straight, right to left
    xs = np.linspace(straight / 2, -straight / 2, n_straight, endpoint=False)
    pts.append(np.column_stack([xs, np.full_like(xs, radius)]))
    # left turn
    th = np.linspace(np.pi / 2, 3 * np.pi / 2, n_arc, endpoint=False)
    pts.append(np.column_stack([-straight / 2 + radius * np.cos(th), radius * np.sin(th)]))
    pts = np.vstack(pts)
    widths = np.column_stack([np.full(len(pts), width_left), np.full(len(pts), width_right)])
    new_pts, wl, wr, ds_eff = _resample_closed(pts, widths, ds)
    return TrackModel(new_pts, wl, wr, ds_eff)


def square_track(side: float = 1.0, width: float = 0.5, ds: float = 0.05) -> TrackModel:
    pts = np.array([[0, 0], [side, 0], [side, side], [0, side]], dtype=float)
    widths = np.full((4, 2), width)
    new_pts, wl, wr, ds_eff = _resample_closed(pts, widths, ds)
    return TrackModel(new_pts, wl, wr, ds_eff)


def track_to_csv_text(points: np.ndarray, width_left, width_right) -> str:
    wl = np.broadcast_to(np.asarray(width_left, float), (len(points),))
    wr = np.broadcast_to(np.asarray(width_right, float), (len(points),))
    lines = ["x_m,y_m,w_left_m,w_right_m"]
    for (x, y), a, b in zip(np.asarray(points, float), wl, wr):
        lines.append(f"{x:.6f},{y:.6f},{a:.6f},{b:.6f}")
    return "\n".join(lines) + "\n"
