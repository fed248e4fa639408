import numpy as np
import pytest

from slipstream import tracks
from slipstream.gpr import OpponentProfile

TRACKS_DIR = "tracks"


@pytest.fixture(scope="session")
def circle():
    return tracks.circle_track(radius=4.0, n_points=360, width=1.0)


@pytest.fixture(scope="session")
def stadium():
    return tracks.stadium_track(straight=7.0, radius=2.5,
                                width_left=1.0, width_right=1.0)


@pytest.fixture(scope="session")
def square():
    return tracks.square_track(side=1.0, width=0.5)


def flat_profile(track_length: float, v: float, d: float = 0.0,
                 opponent_id: int = 0) -> OpponentProfile:
    """Profile with constant offset/speed everywhere (exact constant GP mean)."""
    prof = OpponentProfile(opponent_id=opponent_id, track_length=track_length)
    for s in np.arange(0.0, track_length, track_length / 400):
        prof.ingest(float(s), d, v)
    prof.refit_if_needed()
    assert prof.ready
    return prof


def stadium_scenario(**overrides):
    scn = {
        "track": "tracks/stadium.csv",
        "dt": 0.025,
        "seed": 1,
        "ego": {"behavior": "racing_line", "lap_speed": 1.8},
        "opponents": [{"behavior": "centerline", "speed_scaler": 0.70,
                       "start_s": 3.0}],
        "noise": {},
    }
    scn.update(overrides)
    return scn
