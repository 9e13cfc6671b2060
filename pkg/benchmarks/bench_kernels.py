"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 200]

Prints the median time per call of each kernel for both backends and the
speed-up, after checking the two agree on the benchmark inputs.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from msol import _pykernels as py
from msol.envs.layout import load_layout

try:
    from msol import _ckernels as cy
except ImportError:  # extension not built
    cy = None


def cases(batch: int, rng: np.random.Generator) -> dict:
    layout = load_layout("taxi30")
    n_loc = layout.n_locations
    logits = rng.normal(size=(batch, 6))
    u = rng.random(batch)
    logit = rng.normal(size=batch)

    def taxi_args():
        return (rng.integers(0, n_loc, batch), np.zeros(batch, np.int64), rng.integers(0, 2, batch),
                np.zeros(batch, np.int64), rng.integers(0, 6, batch), rng.integers(0, 4, batch),
                rng.integers(0, 4, batch), layout.neighbors, layout.special_idx, False, 50, -0.1, 2.0)

    def bandit_args():
        return (rng.random((batch, 2)) * 10, rng.random((batch, 2, 2)) * 10, rng.integers(0, 2, batch),
                np.zeros(batch, np.int64), rng.integers(0, 4, batch), 0.5, 10.0, 1.0, 50)

    rewards = rng.normal(size=(5, batch))
    dones = (rng.random((5, batch)) < 0.1).astype(np.float64)
    boot = rng.normal(size=batch)
    taxi, bandit = taxi_args(), bandit_args()
    return {
        "sample_categorical": lambda k: k.sample_categorical(logits, u),
        "sample_bernoulli": lambda k: k.sample_bernoulli(logit, u),
        "taxi_step": lambda k: k.taxi_step(*[a.copy() if isinstance(a, np.ndarray) else a for a in taxi]),
        "bandits_step": lambda k: k.bandits_step(*[a.copy() if isinstance(a, np.ndarray) else a for a in bandit]),
        "discounted_returns": lambda k: k.discounted_returns(rewards, dones, boot, 0.95),
    }


def agree(a, b) -> bool:
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.allclose(np.asarray(x), np.asarray(y), atol=1e-12) for x, y in zip(a, b))


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--batch", type=int, default=150)
    parser.add_argument("--repeat", type=int, default=200)
    args = parser.parse_args()
    fns = cases(args.batch, np.random.default_rng(0))
    print(f"batch {args.batch}, median of {args.repeat} calls")
    print(f"{'kernel':20s} {'numpy us':>10s} {'cython us':>10s} {'speed-up':>9s}")
    for name, fn in fns.items():
        t_py = np.median(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat)) * 1e6
        if cy is None:
            print(f"{name:20s} {t_py:10.1f} {'n/a':>10s}")
            continue
        if not agree(fn(py), fn(cy)):
            raise SystemExit(f"{name}: backends disagree")
        t_cy = np.median(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat)) * 1e6
        print(f"{name:20s} {t_py:10.1f} {t_cy:10.1f} {t_py / t_cy:8.1f}x")


if __name__ == "__main__":
    main()
