import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slipstream import geometry as geo
from slipstream import tracks
from slipstream.geometry import (
    FrenetPose,
    InfeasibleBoundsError,
    LineConfig,
    OutOfCorridorError,
    TrackLoadError,
    cart_to_frenet,
    cart_to_frenet_batch,
    frenet_to_cart,
    frenet_to_cart_batch,
    load_track,
    make_reference_line,
)

UNIT_SQUARE_CSV = "\n".join([
    "x_m,y_m,w_left_m,w_right_m",
    "0,0,0.5,0.5",
    "1,0,0.5,0.5",
    "1,1,0.5,0.5",
    "0,1,0.5,0.5",
]) + "\n"


class TestLoadTrack:
    def test_unit_square_perimeter(self):
        track = load_track(UNIT_SQUARE_CSV)
        assert track.total_length == pytest.approx(4.0, abs=1e-9)
        # corners sit at s = 1, 2, 3
        for corner, s_expect in [((1, 0), 1.0), ((1, 1), 2.0), ((0, 1), 3.0)]:
            q = cart_to_frenet(track, np.array(corner, float))
            assert q.s == pytest.approx(s_expect, abs=1e-9)
            assert q.d == pytest.approx(0.0, abs=1e-9)

    def test_circle_circumference(self):
        th = np.linspace(0, 2 * np.pi, 360, endpoint=False)
        pts = 5.0 * np.column_stack([np.cos(th), np.sin(th)])
        csv = tracks.track_to_csv_text(pts, 1.0, 1.0)
        track = load_track(csv)
        assert track.total_length == pytest.approx(2 * np.pi * 5.0, rel=1e-3)

    def test_zero_width_names_row(self):
        rows = UNIT_SQUARE_CSV.strip().split("\n")
        rows[3] = "1,1,0.0,0.5"  # file row 4
        with pytest.raises(TrackLoadError, match="row 4"):
            load_track("\n".join(rows))

    def test_malformed_row(self):
        with pytest.raises(TrackLoadError, match="row 3"):
            load_track("x_m,y_m,w_left_m,w_right_m\n0,0,1,1\n1,oops,1,1\n")

    def test_open_geometry_rejected(self):
        csv = "x_m,y_m,w_left_m,w_right_m\n" + "\n".join(
            f"{x},0,1,1" for x in range(10)) + "\n"
        with pytest.raises(TrackLoadError, match="not closed"):
            load_track(csv)

    def test_bad_header(self):
        with pytest.raises(TrackLoadError, match="header"):
            load_track("x,y,wl,wr\n0,0,1,1\n")

    def test_bundled_tracks_load(self):
        for name in ("tracks/stadium.csv", "tracks/circle.csv"):
            track = load_track(name)
            assert track.total_length > 10.0
            assert np.all(track.width_left > 0)


class TestFrenet:
    def test_point_on_sample_has_zero_offset(self, circle):
        k = 100
        q = cart_to_frenet(circle, circle.points[k])
        assert q.s == pytest.approx(circle.cum_arc_length[k], abs=1e-9)
        assert q.d == pytest.approx(0.0, abs=1e-9)

    def test_left_normal_offset(self, circle):
        k = 40
        mid = 0.5 * (circle.points[k] + circle.points[(k + 1) % circle.n])
        p = mid + 0.3 * circle.seg_normal[k]
        q = cart_to_frenet(circle, p)
        assert q.d == pytest.approx(0.3, abs=1e-6)

    def test_round_trip_random_points(self, circle):
        rng = np.random.default_rng(7)
        s = rng.uniform(0, circle.total_length, 1000)
        d = rng.uniform(-0.9, 0.9, 1000)
        pts = frenet_to_cart_batch(circle, s, d)
        s2, d2, _ = cart_to_frenet_batch(circle, pts)
        pts2 = frenet_to_cart_batch(circle, s2, d2)
        err = np.hypot(*(pts - pts2).T)
        assert err.max() < 1e-6

    def test_round_trip_stadium(self, stadium):
        rng = np.random.default_rng(3)
        s = rng.uniform(0, stadium.total_length, 1000)
        d = rng.uniform(-0.85, 0.85, 1000)
        pts = frenet_to_cart_batch(stadium, s, d)
        s2, d2, _ = cart_to_frenet_batch(stadium, pts)
        pts2 = frenet_to_cart_batch(stadium, s2, d2)
        assert np.hypot(*(pts - pts2).T).max() < 1e-6

    def test_seam_wrap(self, circle):
        # points near the start/finish line map to s near 0 or near L, never mid
        L = circle.total_length
        for eps in (1e-4, 1e-3, 0.01):
            p = frenet_to_cart(circle, FrenetPose(L - eps, 0.1))
            q = cart_to_frenet(circle, p)
            assert min(q.s, L - q.s) < 0.05

    def test_out_of_corridor(self, circle):
        with pytest.raises(OutOfCorridorError):
            cart_to_frenet(circle, np.array([100.0, 100.0]))

    @given(st.floats(0, 1), st.floats(-0.8, 0.8))
    @settings(max_examples=50, deadline=None)
    def test_round_trip_property(self, frac, d):
        track = tracks.circle_track(radius=4.0, n_points=360, width=1.0)
        s = frac * track.total_length
        p = frenet_to_cart(track, FrenetPose(s, d))
        q = cart_to_frenet(track, p)
        p2 = frenet_to_cart(track, q)
        assert np.hypot(*(p - p2)) < 1e-6


class TestReferenceLines:
    def test_centerline_zero_offsets(self, stadium):
        line = make_reference_line(stadium, "centerline", 2.0)
        assert np.all(line.offsets == 0.0)
        assert np.all(line.speeds > 0)

    def test_shortest_path_pins_inner_circle(self, circle):
        cfg = LineConfig()
        line = make_reference_line(circle, "shortest_path", 3.0, cfg)
        inner = circle.width_left - cfg.margin  # CCW circle: inside is left
        assert np.max(np.abs(line.offsets - inner)) < 1e-3
        # analytic check: resulting path radius matches r - (w - margin)
        radii = np.hypot(line.path[:, 0], line.path[:, 1])
        assert np.median(radii) == pytest.approx(4.0 - inner.mean(), abs=5e-3)

    def test_racing_line_shorter_than_centerline(self, stadium):
        rl = make_reference_line(stadium, "racing_line", 2.0)
        cl = make_reference_line(stadium, "centerline", 2.0)
        assert rl.path_length() <= cl.path_length()
        # and it actually reduces integrated squared curvature
        assert np.sum(rl.path_curvature ** 2) < np.sum(cl.path_curvature ** 2)

    def test_lines_respect_margins(self, stadium):
        cfg = LineConfig()
        for kind in ("racing_line", "shortest_path", "centerline"):
            line = make_reference_line(stadium, kind, 2.0, cfg)
            assert np.all(line.offsets <= stadium.width_left - cfg.margin + 1e-9)
            assert np.all(line.offsets >= -(stadium.width_right - cfg.margin) - 1e-9)

    def test_speed_profile_curvature_capped(self, stadium):
        cfg = LineConfig(a_lat_max=2.0)
        line = make_reference_line(stadium, "centerline", 5.0, cfg)
        cap = np.sqrt(cfg.a_lat_max / np.maximum(np.abs(line.path_curvature), 1e-6))
        assert np.all(line.speeds <= np.minimum(5.0, cap) + 1e-9)
        # corners actually cap below the requested lap speed
        assert line.speeds.min() < 5.0

    def test_infeasible_margin(self, circle):
        cfg = LineConfig(vehicle_width=4.0)  # margin > half-width
        with pytest.raises(InfeasibleBoundsError):
            make_reference_line(circle, "centerline", 2.0, cfg)

    def test_bad_kind_and_speed(self, circle):
        with pytest.raises(ValueError):
            make_reference_line(circle, "diagonal", 2.0)
        with pytest.raises(ValueError):
            make_reference_line(circle, "centerline", -1.0)

    def test_lap_time_consistency(self, circle):
        line = make_reference_line(circle, "centerline", 2.0)
        assert line.lap_time() == pytest.approx(line.path_length() / 2.0, rel=1e-6)
