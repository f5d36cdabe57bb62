"""
Benchmark: simulation and local-time throughput (paths per second).
Measures how the cost of simulating a path and band-counting its local time
grows with the number of steps, serially and on all cores.
"""

import os
import sys
import time

# Add project root
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from pathcalc.localtime import default_dy, default_epsilon, level_grid_for, local_time_field
from pathcalc.paths import TimeGrid
from pathcalc.simulate import SimSpec, map_ensemble


def field_size(path) -> int:
    eps = default_epsilon(path.grid.steps)
    field = local_time_field(path, level_grid_for(path, eps, default_dy(eps)), eps)
    return field.increments.nnz


def run_throughput_benchmark(steps: int, n_paths: int, threads) -> float:
    """Simulate n_paths paths of `steps` steps and build their fields. Returns paths/sec."""
    spec = SimSpec(grid=TimeGrid(1.0, steps), seed=steps)
    t0 = time.perf_counter()
    map_ensemble(spec, n_paths, field_size, threads)
    t1 = time.perf_counter()
    return n_paths / (t1 - t0)


def main():
    n_paths = 32
    print("Local-time field throughput (paths/sec) vs steps")
    print("-" * 50)
    for steps in [1_000, 10_000, 100_000]:
        serial = run_throughput_benchmark(steps, n_paths, 1)
        parallel = run_throughput_benchmark(steps, n_paths, None)
        print(f"  N={steps:7d} -> {serial:8.1f} paths/sec serial, {parallel:8.1f} paths/sec all cores")
    print("Done.")


if __name__ == "__main__":
    main()
