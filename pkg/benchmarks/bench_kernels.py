"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""

import argparse
import time

import numpy as np

from ordernet import _pykernels

try:
    from ordernet import _ckernels
except ImportError:
    _ckernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def distances(n, seed=0):
    p = np.random.default_rng(seed).random((n, 2))
    return np.ascontiguousarray(np.sqrt(((p[:, None] - p[None]) ** 2).sum(-1)))


def cases():
    for n in (10, 14, 16):
        d = distances(n)
        yield f"held_karp n={n}", lambda impl, d=d: impl.held_karp(d)
    for k in (8, 12, 16):
        d = distances(k, 1)
        yield f"matching k={k}", lambda impl, d=d: impl.matching(d)
    rng = np.random.default_rng(2)
    # one relu-bn layer of the tsp encoder: batch 128, n=10, pairs flattened
    x = rng.standard_normal((128 * 10 * 10, 64)).astype(np.float32)
    g = rng.standard_normal(x.shape).astype(np.float32)
    gamma = np.ones(64, np.float32)
    beta = np.zeros(64, np.float32)

    def fwd(impl):
        return impl.relu_bn_forward(x, gamma, beta, 1e-5, np.empty_like(x))

    def bwd(impl):
        mean, var = impl.relu_bn_forward(x, gamma, beta, 1e-5, np.empty_like(x))
        return impl.relu_bn_backward(x, g, gamma, np.asarray(mean), np.asarray(var), 1e-5, np.empty_like(x))

    yield "relu_bn forward 12800x64", fwd
    yield "relu_bn forward+backward", bwd


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    if _ckernels is None:
        print("compiled extension not built; run: pip install -e . --no-build-isolation")
    print(f"{'kernel':28s} {'python (s)':>11s} {'cython (s)':>11s} {'speedup':>8s}")
    for name, fn in cases():
        py = best_of(lambda: fn(_pykernels), args.repeat)
        if _ckernels is None:
            print(f"{name:28s} {py:11.4f} {'-':>11s} {'-':>8s}")
            continue
        cy = best_of(lambda: fn(_ckernels), args.repeat)
        print(f"{name:28s} {py:11.4f} {cy:11.4f} {py / cy:7.1f}x")


if __name__ == "__main__":
    main()
