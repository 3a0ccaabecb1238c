"""Compare the numba kernels against the pure-python/numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 3]

Each backend runs in its own interpreter (the backend is fixed at import
time by FUNNELFB_DISABLE_NUMBA). Results of both are checked for agreement.
"""
import argparse
import json
import os
import subprocess
import sys
import time

CHILD = r"""
import json, sys, time
from funnelfb import *
from funnelfb._jit import backend

repeat = int(sys.argv[1])
scenarios = [
    ScenarioSpec(drift=DriftFunction.affine(1, 1), perturbation=PerturbationSignal.sinusoid(),
                 funnel=FunnelFunction.identity(), eta=-1, x0=2.0),
    ScenarioSpec(drift=DriftFunction.quadratic(1), perturbation=PerturbationSignal.noise_spline(0, 1, 1),
                 funnel=FunnelFunction.exp_minus_one(0.5), eta=1, x0=-2.0),
]
box = CompactBox((-1, 1), (-1, 1))
drift = DriftFunction.affine(1, 1)

def best(fn):
    fn()  # warm-up / compile
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        val = fn()
        out.append(time.perf_counter() - t0)
    return min(out), val

res = {"backend": backend()}
res["integrate_s"], finals = best(lambda: [integrate(s).stats.final_abs_x for s in scenarios])
res["chi_64_s"], v64 = best(lambda: chi_eval(box, drift, 123.4).value)
res["chi_127_s"], v127 = best(lambda: chi_eval(box, drift, 123.4, GridResolution().doubled()).value)
res["values"] = finals + [v64, v127]
print(json.dumps(res))
"""


def run(disable, repeat):
    env = dict(os.environ)
    env["FUNNELFB_DISABLE_NUMBA"] = "1" if disable else "0"
    out = subprocess.run([sys.executable, "-c", CHILD, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    t0 = time.perf_counter()
    fast = run(False, args.repeat)
    slow = run(True, args.repeat)
    print(f"{'kernel':<16}{'numba [s]':>12}{'fallback [s]':>14}{'speed-up':>10}")
    for key, label in [("integrate_s", "integrate x2"), ("chi_64_s", "chi 64^3"), ("chi_127_s", "chi 127^3")]:
        print(f"{label:<16}{fast[key]:>12.4f}{slow[key]:>14.4f}{slow[key] / fast[key]:>10.1f}")
    rel = [abs(a - b) / max(abs(b), 1e-300) for a, b in zip(fast["values"], slow["values"])]
    print("relative disagreement between backends: " + " ".join(f"{r:.1e}" for r in rel))
    # libm differences may shift integrator trajectories within tolerance
    worst = max(rel)
    print(f"wall time {time.perf_counter() - t0:.1f}s")
    return 0 if worst < 1e-5 else 1


if __name__ == "__main__":
    sys.exit(main())
