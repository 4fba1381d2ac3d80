"""Time the numba kernels against the pure-numpy fallback.

Each backend runs in its own interpreter because the choice is made at
import time from LAZYSCHED_DISABLE_NUMBA.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--realizations 50]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
from lazysched import kernels
from lazysched.core import SystemConfig, reference_chain
from lazysched.lazy_sched import dp_solve
from lazysched.online_heuristic import online_arrays
from lazysched.sim import GENERAL_POLICIES, ExperimentSpec, generate_realization
from lazysched.waterfill_offline import offline_arrays

repeat, n_real = int(sys.argv[1]), int(sys.argv[2])
cfg, chain = SystemConfig(), reference_chain()
spec = ExperimentSpec(policies=GENERAL_POLICIES, seed=0)
reals = [generate_realization(spec, index=k) for k in range(n_real)]
top = 101 * 80_000

def best(fn):
    fn()  # warm-up, includes JIT compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)

out = {
    "backend": kernels.BACKEND,
    "lazy_dp_solve": best(lambda: dp_solve(cfg, chain, max_backlog=top)),
    "offline_waterfill": best(lambda: [offline_arrays(r, cfg) for r in reals]),
    "online_heuristic": best(lambda: [online_arrays(r, cfg) for r in reals]),
}
print(json.dumps(out))
"""


def run(disable: bool, repeat: int, n_real: int) -> dict:
    env = dict(os.environ, LAZYSCHED_DISABLE_NUMBA="1" if disable else "0")
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat), str(n_real)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--realizations", type=int, default=50)
    args = ap.parse_args()

    fast = run(False, args.repeat, args.realizations)
    slow = run(True, args.repeat, args.realizations)
    if fast["backend"] != "numba":
        print("numba not importable; both columns use numpy")
    print(f"{'kernel':<20}{'numba s':>12}{'numpy s':>12}{'speedup':>10}")
    for k in ("lazy_dp_solve", "offline_waterfill", "online_heuristic"):
        print(f"{k:<20}{fast[k]:>12.4f}{slow[k]:>12.4f}{slow[k] / fast[k]:>9.1f}x")
    print(f"(best of {args.repeat}; water-fill and heuristic over {args.realizations} realizations of 100 slots)")


if __name__ == "__main__":
    main()
