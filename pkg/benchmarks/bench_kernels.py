"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--n 512] [--steps 60] [--features 8] [--repeat 5]

For each model kind, one mini-batch loss-and-gradient call is timed on both
backends (best of ``--repeat``).  The script also checks that the two
backends agree on loss and gradients before reporting speedups.
"""
import argparse
import timeit

import numpy as np

from irnn import kernels
from irnn.datapipe import SequenceSet, TimeSeriesSample
from irnn.model import init_model


def random_set(n, steps, features, seed):
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        L = int(rng.integers(steps // 2, steps + 1))
        values = np.zeros((steps, features))
        elapsed = np.zeros((steps, features))
        mask = np.zeros((steps, features))
        values[:L] = np.clip(rng.normal(size=(L, features)), -4, 4)
        elapsed[:L] = rng.exponential(0.5, size=(L, features))
        mask[:L] = rng.uniform(size=(L, features)) < 0.4
        times = np.zeros(steps)
        times[:L] = np.cumsum(rng.uniform(0.05, 0.5, size=L))
        samples.append(TimeSeriesSample(values, elapsed, mask, L, i % 2, f"s{i}", times))
    return SequenceSet.from_samples(samples, [f"x{d}" for d in range(features)])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=512)
    ap.add_argument("--steps", type=int, default=60)
    ap.add_argument("--features", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    try:
        cy = kernels.get_backend("cython")
    except ImportError:
        print("compiled kernels are not built; only the numpy fallback is available")
        return 1
    npk = kernels.get_backend("numpy")
    data = random_set(args.n, args.steps, args.features, 0)
    print(f"batch {args.n} x {args.steps} steps x {args.features} features, best of {args.repeat}")
    print(f"{'model':<12}{'cython ms':>12}{'numpy ms':>12}{'speedup':>10}{'max |diff|':>14}")
    for kind in ("irnn", "gru_forward", "gru_simple", "logistic"):
        model = init_model(kind, args.features, np.random.default_rng(1))
        prep = kernels.prepare(model, data)
        la, ga = kernels.loss_and_grad(model, prep, cy)
        lb, gb = kernels.loss_and_grad(model, prep, npk)
        diff = max([abs(la - lb)] + [float(np.max(np.abs(ga[k] - gb[k]))) for k in ga])
        times = {}
        for name, impl in (("cython", cy), ("numpy", npk)):
            t = timeit.repeat(lambda: kernels.loss_and_grad(model, prep, impl), number=1, repeat=args.repeat)
            times[name] = 1000 * min(t)
        print(f"{kind:<12}{times['cython']:>12.2f}{times['numpy']:>12.2f}{times['numpy'] / times['cython']:>9.1f}x{diff:>14.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
