"""Compare the compiled and pure-Python stepping kernels.

Each backend runs in its own interpreter, selected with IMPULSEKIT_BACKEND, so the
import-time choice is exercised exactly as users see it.

    python benchmarks/bench_kernels.py [--reps 200] [--repeat 3]
"""
import argparse
import json
import os
import subprocess
import sys

WORKLOAD = r"""
import json, sys, time
import impulsekit
from impulsekit.process import drifted_bm, ou, sample_segment
from impulsekit.policy import hit_lower
from impulsekit.rng import Streams

reps, repeat = int(sys.argv[1]), int(sys.argv[2])
cases = {
    "drifted-bm (constant coefficients)": drifted_bm(-1.0, 0.5),
    "ou (affine drift)": ou(1.0, 0.0, 0.5),
}
out = {"backend": impulsekit.BACKEND}
for name, spec in cases.items():
    best = float("inf")
    for _ in range(repeat):
        streams = Streams(0)
        t0 = time.perf_counter()
        steps = 0
        for r in range(reps):
            seg = sample_segment(spec, 1.0, hit_lower(0.0), 1e-4, 5.0, streams.cycle(r, 0))
            steps += seg.n_steps
        best = min(best, time.perf_counter() - t0)
    out[name] = {"seconds": best, "steps": steps}
print(json.dumps(out))
"""


def run_backend(backend, reps, repeat):
    env = dict(os.environ, IMPULSEKIT_BACKEND=backend)
    proc = subprocess.run([sys.executable, "-c", WORKLOAD, str(reps), str(repeat)], env=env,
                          capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"{backend} backend failed:\n{proc.stderr}")
    return json.loads(proc.stdout)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--reps", type=int, default=200)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    results = {b: run_backend(b, args.reps, args.repeat) for b in ("python", "cython")}
    print(f"{'workload':38s} {'python s':>10s} {'cython s':>10s} {'speedup':>8s} {'Msteps/s (cy)':>14s}")
    for name in results["python"]:
        if name == "backend":
            continue
        py, cy = results["python"][name], results["cython"][name]
        # identical seeds and kernels give identical paths, hence equal step counts
        assert py["steps"] == cy["steps"], "backends disagree on path lengths"
        print(f"{name:38s} {py['seconds']:10.3f} {cy['seconds']:10.3f} "
              f"{py['seconds'] / cy['seconds']:8.1f} {cy['steps'] / cy['seconds'] / 1e6:14.2f}")


if __name__ == "__main__":
    main()
