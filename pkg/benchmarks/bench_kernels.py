"""Compiled versus pure-Python kernels: timing and agreement.

    python3 benchmarks/bench_kernels.py [--repeat N]

Times quasipolynomial evaluation on a contour-sized batch and one closed-loop
simulation per scattering mode, for every backend that imports, and reports
the largest difference between backends.
"""
import argparse
import time

import numpy as np

from sigmastab import kernels
from sigmastab.model import Gains, LoopConfig
from sigmastab.quasipoly import characteristic
from sigmastab.sim import SimConfig


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def eval_case(n):
    cfg = LoopConfig.make(1, 1, 0.1, "fixed-d", d=15)
    q = characteristic(cfg, Gains(19.69, 72.24))
    rng = np.random.default_rng(0)
    s = rng.uniform(-20, 5, n) + 1j * rng.uniform(-500, 500, n)
    width = max(len(q.coeffs(tau)) for tau in q.delays)
    delays = np.array(q.delays, dtype=float)
    coeffs = np.zeros((len(delays), width))
    for k, tau in enumerate(q.delays):
        c = q.coeffs(tau)
        coeffs[k, :len(c)] = c
    return delays, coeffs, s


def sim_args(cfg, gains):
    sc = SimConfig(cfg, gains, x0=1.0)
    m1, m2 = sc.delay_steps
    mode = 1 if cfg.scattering.active else 0
    d = cfg.scattering.d_for(gains.kp) if mode else 0.0
    return (mode, cfg.a, cfg.b, gains.kp, gains.ki, float(d), 0.0, 1.0, 0.0, sc.dt, sc.steps,
            m1, m2, 0.0, 0.0)


SIM_CASES = {
    "none": (LoopConfig.make(1, 1, 0.1), Gains(3.26, 5.33)),
    "fixed-d": (LoopConfig.make(1, 1, 0.1, "fixed-d", d=15), Gains(19.69, 72.24)),
    "zeta": (LoopConfig.make(1, 1, 0.1, "zeta", zeta=0.8336), Gains(28.46, 114.76)),
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--points", type=int, default=100_000)
    args = ap.parse_args(argv)
    found = kernels.backends()
    print(f"backends: {', '.join(found)} (active: {kernels.BACKEND})")

    delays, coeffs, s = eval_case(args.points)
    ref = None
    print(f"\nqp_eval on {args.points} points")
    for name, mod in found.items():
        t, out = best_of(lambda: mod.qp_eval(delays, coeffs, s), args.repeat)
        err = 0.0 if ref is None else float(np.max(np.abs(out - ref) / (1 + np.abs(ref))))
        ref = out if ref is None else ref
        print(f"  {name:<8} {t * 1e3:9.2f} ms   max rel diff {err:.1e}")

    for label, (cfg, gains) in SIM_CASES.items():
        a = sim_args(cfg, gains)
        print(f"\nsim_run {label}: {a[10]} steps")
        ref = None
        timing = {}
        for name, mod in found.items():
            t, out = best_of(lambda: mod.sim_run(*a), args.repeat)
            rec = out[0]
            err = 0.0 if ref is None else float(np.max(np.abs(rec - ref)))
            ref = rec if ref is None else ref
            timing[name] = t
            print(f"  {name:<8} {t * 1e3:9.2f} ms   max abs diff {err:.1e}")
        if len(timing) > 1:
            print(f"  speed-up {timing['python'] / timing['cython']:.1f}x")


if __name__ == "__main__":
    main()
