"""Regenerate the bundled track CSVs in tracks/."""

from pathlib import Path

from slipstream import geometry as geo
from slipstream import tracks

ROOT = Path(__file__).resolve().parent.parent


def main() -> None:
    out = ROOT / "tracks"
    out.mkdir(exist_ok=True)

    st = tracks.stadium_track(straight=7.0, radius=2.5, width_left=1.0, width_right=1.0)
    geo.save_track(out / "stadium.csv", st.points, st.width_left, st.width_right)
    print(f"stadium.csv: L = {st.total_length:.2f} m, {st.n} samples")

    c = tracks.circle_track(radius=4.0, n_points=360, width=1.0)
    geo.save_track(out / "circle.csv", c.points, c.width_left, c.width_right)
    print(f"circle.csv: L = {c.total_length:.2f} m, {c.n} samples")


if __name__ == "__main__":
    main()
