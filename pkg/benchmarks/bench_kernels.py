"""Compare the compiled kernels with the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from formation_rl import _kernels_py
from formation_rl.dynamics import PHYSICS_DT, SUBSTEPS, QuadrotorParams

try:
    from formation_rl import _kernels as compiled
except ImportError:
    compiled = None


def cases(n_drones: int, n_columns: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    prm = QuadrotorParams().as_array()
    q = rng.normal(size=(n_drones, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    state = [rng.normal(size=(n_drones, 3)), q, rng.normal(size=(n_drones, 3)), rng.normal(size=(n_drones, 3))]
    cmd = np.column_stack([rng.uniform(0.1, 0.4, n_drones), rng.uniform(-1, 1, (n_drones, 3))])
    points = rng.uniform([2, -2, 0], [10, 2, 2], (9 * n_drones, 3))
    centers = rng.uniform([2, -2], [10, 2], (n_columns, 2))
    radii = np.full(n_columns, 0.15)

    def control(mod):
        s = [a.copy() for a in state]
        thr = np.zeros((n_drones, 4))
        return lambda: mod.control_step_batch(*s, cmd, prm, SUBSTEPS, PHYSICS_DT, thr)

    def distance(mod):
        return lambda: mod.static_distance_batch(points, centers, radii, 2.0)

    return {"control_step": control, "static_distance": distance}


def bench(fn, repeat: int) -> float:
    number = max(1, repeat)
    return min(timeit.repeat(fn, number=number, repeat=5)) / number


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=200)
    args = parser.parse_args()
    backends = {"python": _kernels_py}
    if compiled is not None:
        backends["compiled"] = compiled
    else:
        print("compiled extension not built; timing the fallback only")
    print(f"{'kernel':<16}{'drones':>7}{'columns':>8}" + "".join(f"{b:>14}" for b in backends) + f"{'speedup':>10}")
    for n_drones, n_columns in [(3, 10), (3, 20), (64 * 3, 10)]:
        for name, make in cases(n_drones, n_columns).items():
            times = {b: bench(make(mod), args.repeat) for b, mod in backends.items()}
            cells = "".join(f"{times[b] * 1e6:>12.2f}us" for b in backends)
            speed = f"{times['python'] / times['compiled']:>9.1f}x" if "compiled" in times else ""
            print(f"{name:<16}{n_drones:>7}{n_columns:>8}{cells}{speed}")


if __name__ == "__main__":
    main()
