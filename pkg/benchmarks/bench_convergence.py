"""
Convergence benchmark:
- Tanaka and Lévy residuals over one Brownian ensemble at (N, eps), (4N, eps/2), (16N, eps/4).
- Prints the RMS residual at each resolution and the shrink factor between them.
Refinement should shrink every RMS by a factor of at least 1.2.
"""

import os
import sys
import time

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from pathcalc import verify
from pathcalc.paths import TimeGrid
from pathcalc.simulate import SimSpec


def run_convergence_benchmark(steps: int, epsilon: float, n_paths: int, seed: int) -> tuple[float, float, float]:
    """Returns (tanaka_rms, levy_rel_rms_half, seconds)."""
    spec = SimSpec(grid=TimeGrid(1.0, steps), seed=seed)
    t0 = time.perf_counter()
    tanaka = verify.tanaka_ensemble(spec, n_paths, epsilon=epsilon)
    levy = verify.convention_study(spec, n_paths, epsilon=epsilon, kind="max")
    return tanaka.ensemble.rms, levy.details["rel_rms_half"], time.perf_counter() - t0


def main():
    n_paths = 50
    seed = 7
    print("Tanaka / Lévy RMS residual under refinement")
    print("-" * 60)
    previous = None
    steps, epsilon = 10_000, 0.08
    for _ in range(3):
        tanaka, levy, seconds = run_convergence_benchmark(steps, epsilon, n_paths, seed)
        line = f"  N={steps:7d} eps={epsilon:.3f} -> tanaka {tanaka:.4f}, levy {levy:.4f} ({seconds:.1f}s)"
        if previous is not None:
            line += f"  shrink {previous[0] / tanaka:.2f} / {previous[1] / levy:.2f}"
        print(line)
        previous = (tanaka, levy)
        steps, epsilon = 4 * steps, epsilon / 2.0
    print("Done.")


if __name__ == "__main__":
    main()
