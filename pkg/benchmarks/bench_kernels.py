"""Time the compiled and pure-Python kernels on identical inputs.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from cbslab import kernels
from cbslab.problem import build_powerlaw_problem, make_rng, sample_batch


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def oracle_case(backend, d, n_steps, batch, paper_mode):
    problem = build_powerlaw_problem(d, 2.0, 3.0, 1.0)
    u0 = problem.init_error ** 2
    gamma = 0.25 * min(batch / problem.trace, 1.0)
    return lambda: backend.oracle_moments(problem.eigenvalues, u0, gamma, batch, n_steps, 1.0, paper_mode)


def sgd_case(backend, d, batch, n_batches):
    problem = build_powerlaw_problem(d, 2.0, 3.0, 1.0)
    data = sample_batch(problem, batch * n_batches, make_rng(0))
    gamma = 0.25 * min(batch / problem.trace, 1.0)

    def run():
        w = np.zeros(d)
        w_sum = np.zeros(d)
        backend.sgd_chunk(data.covariates, data.responses, w, w_sum, gamma, batch, 0)
        return w

    return run


def _primary(out):
    # the oracle returns (bias, variance, min entry); compare the bias vector
    return np.asarray(out[0] if isinstance(out, tuple) else out)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    names = [n for n in ("python", "compiled") if n in kernels.BACKENDS]
    if "compiled" not in names:
        print("compiled backend not built; timing the Python kernels only")
    cases = [
        ("oracle d=512 n=4096 B=1", lambda be: oracle_case(be, 512, 4096, 1, False)),
        ("oracle d=512 n=4096 B=16 paper", lambda be: oracle_case(be, 512, 4096, 16, True)),
        ("sgd d=256 B=1 n=8192", lambda be: sgd_case(be, 256, 1, 8192)),
        ("sgd d=256 B=32 n=1024", lambda be: sgd_case(be, 256, 32, 1024)),
    ]
    print(f"{'case':<34s}" + "".join(f"{n:>12s}" for n in names) + ("   speedup" if len(names) == 2 else ""))
    for label, make in cases:
        results = {}
        for name in names:
            elapsed, out = best_of(make(kernels.get_backend(name)), args.repeat)
            results[name] = (elapsed, out)
        row = f"{label:<34s}" + "".join(f"{results[n][0] * 1e3:>10.2f}ms" for n in names)
        if len(names) == 2:
            a, b = (_primary(results[n][1]) for n in names)
            assert np.allclose(a, b, rtol=1e-9, atol=1e-12), f"backends disagree on {label}"
            row += f"{results['python'][0] / results['compiled'][0]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
