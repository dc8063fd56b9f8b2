"""Time the numba and numpy paths of the hot kernels side by side.

    python3 benchmarks/bench_kernels.py [--repeat 5]

JIT compilation is triggered once before timing.
"""

import argparse
import timeit

import numpy as np

from fissioncv import _kernels as kern


def cases(rng):
    target = rng.standard_normal(64 * 64)
    batch = rng.standard_normal((100, 64 * 64))
    weights = rng.random(64 * 64)
    values = rng.standard_normal(100_000) * 50
    image = rng.standard_normal((128, 128))
    a, b = rng.standard_normal((1000, 84)), rng.standard_normal((100, 84))
    return [
        ("sq_residual_norms 100x4096", kern.sq_residual_norms_numpy, kern.sq_residual_norms, (target, batch, weights)),
        ("log_sum_exp 1e5", kern.log_sum_exp_numpy, kern.log_sum_exp, (values,)),
        ("tv_value_and_grad 128x128", kern.tv_value_and_grad_numpy, kern.tv_value_and_grad, (image, 0.01)),
        ("mean_pairwise_distance 1000x100x84", kern.mean_pairwise_distance_numpy, kern.mean_pairwise_distance, (a, b)),
    ]


def best(fn, args, repeat):
    timer = timeit.Timer(lambda: fn(*args))
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    print(f"backend={kern.BACKEND}")
    print(f"{'kernel':38s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, slow, fast, fargs in cases(np.random.default_rng(args.seed)):
        fast(*fargs)
        t0 = best(slow, fargs, args.repeat)
        t1 = best(fast, fargs, args.repeat)
        print(f"{name:38s} {t0 * 1e3:10.3f} {t1 * 1e3:10.3f} {t0 / t1:8.2f}")


if __name__ == "__main__":
    main()
