"""Write the bundled free-flow trajectory fixture (highD-like tracks layout).

Three lanes on a 400 m stretch observed for 120 s at 25 frames per second,
sampled once per second. Each vehicle keeps a constant speed. Vehicle lengths
are shifted so that lanes / mean length = 0.49 per meter.
"""
import csv
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "trmfit" / "data"
LANES, ROAD, DURATION, FPS, SAMPLE = 3, 400.0, 120.0, 25, 25
RHO_MAX = 0.49


def main(seed=7):
    rng = np.random.default_rng(seed)
    vehicles = []
    for lane in range(LANES):
        t_in = -15.0 + rng.uniform(0, 3)
        while t_in < DURATION:
            speed = rng.uniform(27.0, 36.0) + 2.0 * lane
            truck = rng.uniform() < 0.3
            length = rng.uniform(10.0, 16.0) if truck else rng.uniform(4.0, 5.2)
            vehicles.append([lane + 1, t_in, speed, length])
            t_in += rng.uniform(2.5, 5.0)
    tracks = []
    for lane, t_in, speed, length in vehicles:
        frames = [f for f in range(0, int(DURATION * FPS) + 1, SAMPLE)
                  if 0.0 <= speed * (f / FPS - t_in) <= ROAD]
        if len(frames) >= 2:
            tracks.append((lane, t_in, speed, length, frames))
    # shift lengths so lanes / mean length hits the target exactly
    lengths = np.round(np.array([tr[3] for tr in tracks]), 4)
    target = LANES / RHO_MAX
    lengths = np.round(lengths + (target - lengths.mean()), 4)
    lengths[-1] = round(lengths[-1] + target * lengths.size - lengths.sum(), 4)
    rows = []
    for vid, ((lane, t_in, speed, _, frames), length) in enumerate(zip(tracks, lengths), start=1):
        for frame in frames:
            x = speed * (frame / FPS - t_in)
            rows.append((frame, vid, round(x, 3), float(length), round(speed, 3), lane))
    rows.sort()
    OUT.mkdir(parents=True, exist_ok=True)
    with open(OUT / "free_flow.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "id", "x", "width", "xVelocity", "laneId"])
        w.writerows(rows)
    (OUT / "free_flow.toml").write_text(
        'trajectories = "free_flow.csv"\n'
        "lanes = 3\n"
        "\n[mapping]\n"
        'id_col = "id"\n'
        't_col = "frame"\n'
        'x_col = "x"\n'
        'length_col = "width"\n'
        'time_unit = "frame"\n'
        'position_unit = "m"\n'
        f"frame_rate = {FPS}\n"
        "\n[grid]\n"
        "x_start = 0.0\n"
        f"x_end = {ROAD}\n"
        "n_x = 11\n"
        "t_start = 0.0\n"
        f"t_end = {DURATION}\n"
        "n_t = 60\n"
    )
    print(f"{len(tracks)} vehicles, {len(rows)} samples, mean length {lengths.mean():.6f}")


if __name__ == "__main__":
    main()
