"""Compiled kernels against the pure-Python fallback.

Times ``run_batch`` on both backends for the exact linear sampler and the
Euler-Maruyama path, and checks the records agree bit for bit.

    python benchmarks/bench_kernels.py --trials 200
"""
import argparse
import time

from jordan_exit import kernels
from jordan_exit.model import ProblemSpec, validate
from jordan_exit.simulate import StepPolicy, run_trial

CASES = {
    "exact linear, eps=1e-6": (validate(ProblemSpec(dim=2, lam=1.0)), 1e-6, StepPolicy()),
    "EM cubic, eps=1e-4": (validate(ProblemSpec(dim=2, lam=1.0, nonlinearity="cubic", box_radius=0.5)), 1e-4,
                           StepPolicy(em=1e-3)),
}


def bench(spec, eps, policy, trials, backend):
    t0 = time.perf_counter()
    recs = [run_trial(spec, eps, t, 1, policy=policy, backend=backend) for t in range(trials)]
    return time.perf_counter() - t0, recs


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--trials", type=int, default=200)
    args = p.parse_args(argv)
    if "cython" not in kernels.available():
        raise SystemExit("compiled extension not built; run `pip install -e .` first")
    print(f"{'case':<26}{'cython s':>10}{'python s':>10}{'speedup':>9}  identical")
    for name, (spec, eps, pol) in CASES.items():
        tc, rc = bench(spec, eps, pol, args.trials, "cython")
        tp, rp = bench(spec, eps, pol, args.trials, "python")
        print(f"{name:<26}{tc:10.3f}{tp:10.3f}{tp / tc:9.1f}  {rc == rp}")


if __name__ == "__main__":
    main()
