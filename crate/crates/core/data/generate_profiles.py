"""Regenerates the bundled synthetic 1-minute history CSVs.

Four weekdays per season of residential, commercial and industrial feeder
load (kW) and global horizontal insolation (W/m2). Shapes are typical of a
hot-climate utility: afternoon air-conditioning peaks in summer, morning
and evening heating peaks in winter. Deterministic for a given seed.

    python3 generate_profiles.py
"""

import csv
import datetime as dt
import math
import pathlib

import numpy as np

HERE = pathlib.Path(__file__).parent
DAYS = 4

# Hourly shapes, fraction of class peak, hour 0..23.
SHAPES = {
    "summer": {
        "residential": [0.50, 0.46, 0.44, 0.43, 0.43, 0.46, 0.52, 0.58, 0.60, 0.60, 0.62, 0.66,
                        0.70, 0.75, 0.80, 0.86, 0.92, 0.97, 1.00, 0.98, 0.92, 0.80, 0.67, 0.56],
        "commercial": [0.38, 0.36, 0.35, 0.35, 0.36, 0.40, 0.52, 0.68, 0.82, 0.90, 0.95, 0.98,
                       1.00, 1.00, 0.99, 0.97, 0.93, 0.85, 0.70, 0.58, 0.50, 0.45, 0.42, 0.40],
        "industrial": [0.62, 0.60, 0.60, 0.60, 0.62, 0.70, 0.88, 0.95, 0.97, 0.98, 0.98, 0.96,
                       0.94, 0.97, 0.98, 0.98, 0.96, 0.90, 0.78, 0.70, 0.66, 0.65, 0.64, 0.63],
    },
    "winter": {
        "residential": [0.55, 0.52, 0.51, 0.51, 0.54, 0.64, 0.82, 0.92, 0.86, 0.72, 0.64, 0.60,
                        0.58, 0.56, 0.56, 0.58, 0.66, 0.82, 0.96, 1.00, 0.95, 0.85, 0.72, 0.62],
        "commercial": [0.45, 0.44, 0.44, 0.44, 0.46, 0.52, 0.66, 0.84, 0.94, 0.98, 1.00, 0.99,
                       0.97, 0.96, 0.95, 0.94, 0.92, 0.86, 0.72, 0.62, 0.56, 0.52, 0.49, 0.47],
        "industrial": [0.62, 0.61, 0.60, 0.60, 0.62, 0.72, 0.88, 0.96, 0.98, 0.98, 0.97, 0.95,
                       0.93, 0.96, 0.97, 0.97, 0.95, 0.88, 0.76, 0.69, 0.66, 0.65, 0.64, 0.63],
    },
}
PEAK_KW = {"residential": 1000.0, "commercial": 1200.0, "industrial": 900.0}
SUN = {"summer": (6.5, 20.0, 1000.0), "winter": (7.25, 17.75, 620.0)}
START = {"summer": dt.datetime(2024, 7, 15), "winter": dt.datetime(2024, 1, 15)}


def smooth_shape(hourly, minute):
    """Linear interpolation between hour midpoints."""
    x = (minute / 60.0) - 0.5
    lo = math.floor(x)
    f = x - lo
    return (1 - f) * hourly[lo % 24] + f * hourly[(lo + 1) % 24]


def load_series(rng, season, cls):
    out = []
    noise = 0.0
    for day in range(DAYS):
        level = 1.0 + rng.normal(0.0, 0.03)
        for m in range(1440):
            noise = 0.97 * noise + rng.normal(0.0, 0.006)
            v = PEAK_KW[cls] * level * smooth_shape(SHAPES[season][cls], m) * (1.0 + noise + rng.normal(0.0, 0.004))
            out.append(max(v, 0.0))
    return out


def solar_series(rng, season):
    rise, sset, peak = SUN[season]
    out = []
    for day in range(DAYS):
        cloudiness = rng.uniform(0.05, 0.35)
        cloud = 0.0
        for m in range(1440):
            h = m / 60.0
            if h <= rise or h >= sset:
                out.append(0.0)
                continue
            clear = peak * math.sin(math.pi * (h - rise) / (sset - rise)) ** 1.3
            # Persistent cloud cover with occasional fast passing clouds.
            cloud = 0.96 * cloud + rng.normal(0.0, 0.06)
            dip = cloudiness * min(1.0, abs(cloud))
            if rng.random() < 0.01:
                dip = min(0.9, dip + rng.uniform(0.2, 0.6))
            out.append(round(max(clear * (1.0 - dip), 0.0), 1))
    return out


def write(path, start, values, header):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["timestamp", header])
        for k, v in enumerate(values):
            t = start + dt.timedelta(minutes=k)
            w.writerow([t.strftime("%Y-%m-%d %H:%M"), f"{v:.2f}"])


def main():
    rng = np.random.default_rng(20240715)
    for season in ("summer", "winter"):
        for cls in ("residential", "commercial", "industrial"):
            write(HERE / f"{cls}_{season}.csv", START[season], load_series(rng, season, cls), "kw")
        write(HERE / f"solar_{season}.csv", START[season], solar_series(rng, season), "w_per_m2")


if __name__ == "__main__":
    main()
