"""Compare the compiled and pure-python kernel backends.

Usage: python3 bench/bench_kernels.py [--repeat N] [--iterations N]

Times every kernel on both backends at the sizes training and data
generation actually use, then times whole training iterations in a
subprocess per backend (backend choice is fixed at import).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from noisyjoint import kernels


def kernel_cases(rng):
    p = rng.standard_normal((64, 64))
    g = rng.standard_normal((64, 64))
    big_p = rng.standard_normal(200_000)
    big_g = rng.standard_normal(200_000)
    n = 100_000
    cdf = np.ascontiguousarray(np.cumsum(np.full((10, 10), 0.1), axis=0).T)
    cdf[:, -1] = 1.0
    rows = rng.integers(0, 10, size=n)
    u = rng.random(n)
    labels = np.ascontiguousarray(rng.integers(0, 10, size=(n, 3)))
    true, pred = rng.integers(0, 10, size=n), rng.integers(0, 10, size=n)

    def adam(mod, p, g):
        m, v = np.zeros_like(p), np.zeros_like(p)
        def run():
            mod.adam_update(p.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1), 1e-4, 0.9, 0.999, 1e-8, 0.1, 0.001)
        return run

    return {
        "adam_update 64x64": lambda mod: adam(mod, p.copy(), g),
        "adam_update 200k": lambda mod: adam(mod, big_p.copy(), big_g),
        "sample_from_cdf 100k": lambda mod: (lambda: mod.sample_from_cdf(u, cdf, rows)),
        "vote 100k x 3": lambda mod: (lambda: mod.vote(labels, 10, u)),
        "confusion 100k": lambda mod: (lambda: mod.confusion(true, pred, 10)),
    }


TRAIN_SNIPPET = """
import time
from noisyjoint.datagen import DatasetSpec, make_dataset
from noisyjoint.trainer import ExperimentConfig, train
from noisyjoint import kernels
ds = make_dataset(DatasetSpec(seed=0, n_train=256, n_test=500))
for mode in ("noisy_baseline", "proposed"):
    cfg = ExperimentConfig(mode=mode, iterations={iters}, log_interval={iters}, lr=1e-3, use_continuous=False)
    t = time.perf_counter()
    train(cfg, ds)
    print(kernels.BACKEND, mode, (time.perf_counter() - t) / {iters} * 1e3)
"""


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--iterations", type=int, default=200)
    args = ap.parse_args(argv)

    backends = kernels.backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the python backend is available")
    cases = kernel_cases(np.random.default_rng(0))
    print(f"{'kernel':24s}" + "".join(f"{b:>14s}" for b in backends) + "   speedup")
    for name, make in cases.items():
        times = {}
        for b, mod in backends.items():
            fn = make(mod)
            number = 20
            times[b] = min(timeit.repeat(fn, number=number, repeat=args.repeat)) / number * 1e6
        line = f"{name:24s}" + "".join(f"{times[b]:11.1f} us" for b in backends)
        if "compiled" in times:
            line += f"   {times['python'] / times['compiled']:6.2f}x"
        print(line)

    print()
    print(f"training, ms per iteration ({args.iterations} iterations):")
    for pure in ("", "1"):
        env = dict(os.environ)
        env.pop("NOISYJOINT_PURE", None)
        if pure:
            env["NOISYJOINT_PURE"] = pure
        out = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET.format(iters=args.iterations)],
                             env=env, capture_output=True, text=True, check=True).stdout
        for line in out.strip().splitlines():
            backend, mode, ms = line.split()
            print(f"  {backend:10s} {mode:16s} {float(ms):8.2f}")


if __name__ == "__main__":
    main()
