"""Time the compiled (numba) and pure numpy/Python backends on the hot paths.

The backend is fixed at import time by ``SPATIALBD_DISABLE_NUMBA``, so each
backend runs in its own child interpreter.  Usage::

    python benchmarks/bench_backends.py            # both backends, table on stdout
    python benchmarks/bench_backends.py --repeat 5

The first call of every case is a warm-up (it also triggers numba compilation
or a cache load) and is not timed.
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time


def _cases():
    import dataclasses

    import numpy as np

    from spatialbd.cli import kinetic_problem, model_rates
    from spatialbd.grid import Field, Grid1D, convolve_direct
    from spatialbd.hierarchy import ClosureRule, PairField, PairOperator, chain_rhs_2
    from spatialbd.ibm import Configuration, simulate
    from spatialbd.kernels import discretize, parse_kernel
    from spatialbd.kinetic import etd_coeffs, integrate_kinetic, precompute_problem
    from spatialbd.scenarios import preset

    rng = np.random.default_rng(0)

    g = Grid1D(40.0, 512)
    f = Field(g, rng.uniform(0, 1, 512))
    k = discretize(parse_kernel("gaussian(1,2)"), g, centered=True)

    prob = dataclasses.replace(kinetic_problem(preset("fig3R")), t_end=0.5)
    # dt * loss = 1 > 0.5 forces the exponential integrator on every step
    stiff = dataclasses.replace(prob, b_minus=parse_kernel("const(20)"), dt=0.05, t_end=20.0)
    z = -rng.uniform(0, 80, 512)

    pair = dataclasses.replace(kinetic_problem(preset("fig2L")), grid=Grid1D(40.0, 128))
    pre = precompute_problem(pair)
    op = PairOperator.from_precomputed(pre)
    r1 = Field(pair.grid, rng.uniform(0.3, 2, 128))
    r2 = PairField.product(r1)

    s = preset("weak-interaction")
    rates = model_rates(s)

    return {
        "direct circular convolution N=512": lambda: convolve_direct(f, k),
        "ETD-RK4 weights, 512 nodes": lambda: etd_coeffs(z),
        "kinetic fig3R to t=0.5 (RK4)": lambda: integrate_kinetic(prob, [0.5]),
        "kinetic stiff, 400 steps (ETD-RK4)": lambda: integrate_kinetic(stiff, [20.0]),
        "pair rhs N=128, Kirkwood": lambda: chain_rhs_2(r1, r2, ClosureRule.KIRKWOOD, op),
        "IBM weak-interaction to t=20": lambda: simulate(Configuration.empty(s.L), rates,
                                                         20.0, 1.0, rng=1),
    }


def _child(repeat: int) -> None:
    from spatialbd._accel import BACKEND

    out = {"backend": BACKEND, "cases": {}}
    for name, fn in _cases().items():
        fn()
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        out["cases"][name] = best
    json.dump(out, sys.stdout)


def _run(disable: bool, repeat: int) -> dict:
    env = dict(os.environ, SPATIALBD_DISABLE_NUMBA="1" if disable else "0")
    res = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(repeat)],
                         env=env, check=True, capture_output=True, text=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3, help="timed repetitions (best is kept)")
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.child:
        _child(args.repeat)
        return 0
    fast, slow = _run(False, args.repeat), _run(True, args.repeat)
    width = max(len(n) for n in fast["cases"])
    print(f"{'case':<{width}}  {fast['backend']:>10}  {slow['backend']:>10}  speed-up")
    for name, t_fast in fast["cases"].items():
        t_slow = slow["cases"][name]
        print(f"{name:<{width}}  {t_fast:10.4f}  {t_slow:10.4f}  {t_slow / t_fast:8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
