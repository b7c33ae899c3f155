#!/usr/bin/env python3
"""Regenerate the bundled synthetic drive-cycle library.

The library is a stand-in spanning 5-70 mph per road type; real cycles can
replace it by dropping CSVs with the same layout next to manifest.csv.
Deterministic: fixed seed derived from (road_type, target speed).
"""

from __future__ import annotations

import csv
import zlib
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "opmodenet" / "data" / "cycles"
ROAD_TYPES = ["motorway", "primary", "secondary", "residential", "unclassified"]
TARGET_MEANS = [5.0, 15.0, 25.0, 35.0, 45.0, 55.0, 65.0]
DURATION_S = 300

# per-road-type character: (oscillation amplitude scale, noise sd mph/s)
CHARACTER = {
    "motorway": (0.15, 0.4),
    "primary": (0.30, 0.8),
    "secondary": (0.40, 1.0),
    "residential": (0.55, 1.2),
    "unclassified": (0.45, 1.0),
}


def make_cycle(road_type: str, mean_mph: float) -> np.ndarray:
    seed = zlib.crc32(f"{road_type}:{mean_mph}".encode())
    rng = np.random.default_rng(seed)
    amp_scale, noise_sd = CHARACTER[road_type]
    t = np.arange(DURATION_S)
    amp = amp_scale * mean_mph + 2.0
    phase = rng.uniform(0, 2 * np.pi)
    base = mean_mph + amp * np.sin(2 * np.pi * t / 75.0 + phase)
    walk = np.cumsum(rng.normal(0.0, noise_sd, DURATION_S))
    walk -= np.linspace(walk[0], walk[-1], DURATION_S)  # detrended
    v = np.clip(base + walk, 0.0, None)
    for _ in range(4):  # renormalize mean after clamping
        m = v.mean()
        if m <= 0:
            break
        v = np.clip(v * (mean_mph / m), 0.0, None)
    return v


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    rows = []
    for road_type in ROAD_TYPES:
        for mean in TARGET_MEANS:
            cycle_id = f"{road_type}_{int(mean):02d}"
            v = make_cycle(road_type, mean)
            with open(OUT / f"{cycle_id}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", "speed_mph"])
                for i, s in enumerate(v):
                    w.writerow([i, f"{s:.4f}"])
            rows.append([cycle_id, road_type, f"{v.mean():.4f}"])
    with open(OUT / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cycle_id", "road_type", "mean_speed"])
        w.writerows(rows)
    print(f"wrote {len(rows)} cycles to {OUT}")


if __name__ == "__main__":
    main()
