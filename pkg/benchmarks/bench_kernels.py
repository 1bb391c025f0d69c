"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--scale S]

Both backends receive identical inputs; the clustering kernels are also
checked for bit-identical output.
"""
import argparse
import time

import numpy as np

from parcellate import _kernels_py

try:
    from parcellate import _kernels
except ImportError:  # extension not built
    _kernels = None


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(scale, rng):
    m = int(50_000 * scale)
    z = rng.normal(size=(m, 6)) * 40
    c = rng.normal(size=(100, 6)) * 40

    def flip(mod):
        return lambda: mod.flip_assign(z, c)

    batches = rng.integers(0, m, size=(max(1, int(200 * scale)), 1000))

    def minibatch(mod):
        def run():
            cc, n = c[:20].copy(), np.zeros(20, dtype=np.int64)
            mod.minibatch_run(z, cc, n, batches)
            return cc, n
        return run

    tracks = rng.normal(size=(int(2000 * scale), 12, 3)) * 10
    tracks += rng.integers(0, 20, size=(tracks.shape[0], 1, 1)) * 30.0

    def qb(mod):
        return lambda: mod.quickbundles(tracks, 15.0)

    x = rng.normal(size=(300, 400))
    x = (x - x.mean(0)) / x.std(0)
    y = x[:, :10] @ rng.normal(size=10) + rng.normal(size=300)
    gram = np.ascontiguousarray(x.T @ x / 300)
    corr = x.T @ (y - y.mean()) / 300
    usable = np.ones(400, dtype=np.uint8)

    def cd(mod):
        def run():
            beta = np.zeros(400)
            mod.cd_gram(gram, corr, beta, 0.02, 0.0, 1e-7, 100000, usable)
            return beta
        return run

    return [
        (f"flip_assign m={m} K=100", flip, True),
        (f"minibatch_run {batches.shape[0]}x1000 K=20", minibatch, True),
        (f"quickbundles m={tracks.shape[0]} Q=12", qb, True),
        ("cd_gram n=300 p=400", cd, False),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--scale", type=float, default=1.0)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<36}{'python [s]':>12}{'cython [s]':>12}{'speedup':>10}  identical")
    for name, make, exact in cases(args.scale, rng):
        t_py, out_py = _best(make(_kernels_py), args.repeat)
        if _kernels is None:
            print(f"{name:<36}{t_py:>12.4f}{'n/a':>12}")
            continue
        t_cy, out_cy = _best(make(_kernels), args.repeat)
        a = out_py if isinstance(out_py, tuple) else (out_py,)
        b = out_cy if isinstance(out_cy, tuple) else (out_cy,)
        if exact:
            same = all(np.array_equal(u, v) for u, v in zip(a, b))
        else:
            same = all(np.allclose(u, v, atol=1e-8) for u, v in zip(a, b))
        print(f"{name:<36}{t_py:>12.4f}{t_cy:>12.4f}{t_py / t_cy:>9.1f}x  {same}")


if __name__ == "__main__":
    main()
