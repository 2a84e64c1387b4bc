"""Time the geometry kernels under both backends.

    python3 benchmarks/bench_kernels.py [--robots 2000] [--repeats 20]

Prints one line per kernel with the median wall time of each backend and the
speed-up.  The numba column is skipped when numba is unavailable or disabled
through ``SNNHRL_NUMBA=0``.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from snnhrl import _kernels
from snnhrl.envs import GatherSpec, make_maze, sample_balls
from snnhrl.core import RngStream


def median_time(fn, repeats: int) -> float:
    fn()  # warm-up (triggers compilation for numba)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cases(n: int):
    r = np.random.default_rng(0)
    segs = make_maze(0).segment_array()
    pos = np.column_stack([r.uniform(-0.9, 4.9, n), r.uniform(-0.9, 0.9, n)])
    disp = r.normal(scale=0.3, size=(n, 2))
    angles = np.broadcast_to(np.linspace(-np.pi, np.pi, 8, endpoint=False), (n, 8)).copy()
    spec = GatherSpec()
    balls = np.stack([sample_balls(spec, RngStream(0, i)).positions for i in range(min(n, 256))])
    balls = np.resize(balls, (n,) + balls.shape[1:])
    alive = np.ones(balls.shape[:2], dtype=bool)
    return {
        "ray_segments": lambda: _kernels.ray_segments(pos, angles, segs, 8.0),
        "ray_circles": lambda: _kernels.ray_circles(pos, angles, balls, alive, spec.ball_radius, 6.0),
        "move_with_walls": lambda: _kernels.move_with_walls(pos, disp, segs, 1e-6),
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--robots", type=int, default=2000)
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args(argv)
    backends = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])
    print(f"{'kernel':<18}" + "".join(f"{b:>12}" for b in backends) + ("    speed-up" if len(backends) == 2 else ""))
    for name, fn in cases(args.robots).items():
        row = {}
        for b in backends:
            _kernels.use_backend(b)
            row[b] = median_time(fn, args.repeats)
        line = f"{name:<18}" + "".join(f"{row[b] * 1e3:>10.3f}ms" for b in backends)
        if len(backends) == 2:
            line += f"{row['numpy'] / row['numba']:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
