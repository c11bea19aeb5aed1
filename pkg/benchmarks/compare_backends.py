#!/usr/bin/env python3
"""Compare the compiled kernel extension against the pure-numpy fallback.

Runs the same synthetic bench (640x480 RGB, 91x61 grid, 6-element array,
plus an 80x60 thermal sensor) under each available backend and prints a
per-stage table.

Usage: python benchmarks/compare_backends.py [--frames N] [--resolution WxH]
"""

import argparse
import ctypes
import tempfile
from pathlib import Path

from omnifuse import backend
from omnifuse.pipeline import run_bench
from omnifuse.synth import make_synthetic_dataset, scene_run_config

SCENE = {
    "n_frames": 1,
    "rgb": {"width": 640, "height": 480},
    "prompt": "bench",
    "sensors": [
        {"sensor_id": "mic0", "kind": "microphone_array", "payload": "snapshot",
         "geometry": {"type": "circular", "num_elements": 6,
                      "radius_m": 0.05, "wavelength_m": 0.0857},
         "sources": [{"azimuth_deg": 10.0, "elevation_deg": 5.0}], "snr_db": 20.0},
        {"sensor_id": "thermal0", "kind": "thermal", "payload": "thermal_csv",
         "size": [80, 60],
         "hot_spots": [{"x_frac": 0.5, "y_frac": 0.5, "sigma_frac": 0.05, "value": 40.0}],
         "ambient": 20.0, "noise_std": 0.1, "t_lo": 20.0, "t_hi": 40.0},
    ],
}


def pin_allocator():
    """Stop glibc from mmap-ing large numpy temporaries (timing hygiene)."""
    try:
        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        libc.mallopt(-3, 1 << 30)
        libc.mallopt(-1, -1)
    except OSError:
        pass


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--frames", type=int, default=200)
    parser.add_argument("--warmup", type=int, default=20)
    parser.add_argument("--resolution", default="640x480")
    args = parser.parse_args()
    width, height = (int(t) for t in args.resolution.lower().split("x"))

    pin_allocator()
    with tempfile.TemporaryDirectory() as tmp:
        seed_dir = Path(tmp) / "seed"
        make_synthetic_dataset(SCENE, seed_dir, seed=1)
        reports = {}
        for name in backend.available_backends():
            with backend.use_backend(name):
                config = scene_run_config(seed_dir)
                reports[name] = run_bench(config, n_frames=args.frames,
                                          resolution=(width, height), warmup=args.warmup)

    stages = sorted({s for r in reports.values() for s in r.stage_stats})
    names = list(reports)
    print(f"\n{args.frames} frames at {width}x{height}, "
          f"two sensors (6-element array on a 91x61 grid + 80x60 thermal)\n")
    header = f"{'stage':>12} " + " ".join(f"{n + ' p50(ms)':>18}" for n in names)
    print(header)
    print("-" * len(header))
    for stage in stages:
        row = f"{stage:>12} "
        for name in names:
            stats = reports[name].stage_stats.get(stage)
            row += f"{stats['p50_ms']:>18.3f}" if stats else f"{'-':>18}"
        print(row)
    print("-" * len(header))
    row = f"{'end-to-end':>12} "
    for name in names:
        row += f"{reports[name].end_to_end_fps:>14.1f} fps"
    print(row)
    if len(names) == 2:
        speedup = reports[names[0]].end_to_end_fps / reports[names[1]].end_to_end_fps
        print(f"\n{names[0]} backend is {speedup:.2f}x the {names[1]} backend end-to-end")
    cache = reports[names[0]].steering_cache_speedup
    if cache:
        print(f"steering-table cache: {cache:.1f}x faster than rebuilding per frame")


if __name__ == "__main__":
    main()
