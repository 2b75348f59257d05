"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--simulation]

Covers the two calls that dominate a simulation: one local-training pass
(``sgd_epochs``) and a forward/backward pass over a batch (``loss_and_grad``),
at the default model size (16 -> 32 -> 10) and a device shard of 360 examples.
``--simulation`` also times the shipped hierarchical run under each backend,
each in a fresh process with ``FEDCD_KERNELS`` set.
"""

import argparse
import os
import subprocess
import sys
import timeit
from pathlib import Path

import numpy as np

from fedcd import _pykernels

try:
    from fedcd import _ckernels
except ImportError:
    _ckernels = None


def setup(sizes=(16, 32, 10), n=360, seed=0):
    rng = np.random.default_rng(seed)
    sizes = np.array(sizes, dtype=np.int64)
    n_params = int(sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:])))
    params = rng.normal(scale=0.2, size=n_params)
    X = rng.normal(size=(n, int(sizes[0])))
    y = rng.integers(0, int(sizes[-1]), size=n).astype(np.int64)
    order = np.concatenate([rng.permutation(n) for _ in range(3)]).astype(np.int64)
    return sizes, params, X, y, order


def bench(mod, repeat, number):
    sizes, params, X, y, order = setup()
    cases = {
        "sgd_epochs (3 epochs, batch 32)":
            lambda: mod.sgd_epochs(sizes, 0, params.copy(), X, y, order, 0.1, 32),
        "loss_and_grad (360 examples)":
            lambda: mod.loss_and_grad(sizes, 0, params, X, y),
        "predict (360 examples)":
            lambda: mod.predict(sizes, 0, params, X),
    }
    return {k: min(timeit.repeat(f, repeat=repeat, number=number)) / number for k, f in cases.items()}


SIM_SNIPPET = """
import time
from fedcd.config import load_config
from fedcd.engine import run_simulation
from fedcd.runner import build_shards
cfg = load_config({path!r})
shards, n = build_shards(cfg)
t = time.perf_counter()
run_simulation(cfg.simulation_config(), shards, n)
print(time.perf_counter() - t)
"""


def bench_simulation(backend):
    cfg = Path(__file__).resolve().parents[1] / "configs" / "hierarchical.yaml"
    env = dict(os.environ, FEDCD_KERNELS=backend)
    out = subprocess.run([sys.executable, "-c", SIM_SNIPPET.format(path=str(cfg))],
                         env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20)
    ap.add_argument("--simulation", action="store_true", help="also time a full default run")
    args = ap.parse_args()
    py = bench(_pykernels, args.repeat, args.number)
    c = bench(_ckernels, args.repeat, args.number) if _ckernels is not None else None
    print(f"{'kernel':<34}{'python ms':>12}{'compiled ms':>14}{'speedup':>10}")
    for k, t in py.items():
        if c is None:
            print(f"{k:<34}{t * 1e3:>12.3f}{'n/a':>14}{'':>10}")
        else:
            print(f"{k:<34}{t * 1e3:>12.3f}{c[k] * 1e3:>14.3f}{t / c[k]:>9.1f}x")
    if args.simulation:
        t_py = bench_simulation("python")
        line = f"{'hierarchical run (45 rounds)':<34}{t_py * 1e3:>12.0f}"
        if c is not None:
            t_c = bench_simulation("c")
            line += f"{t_c * 1e3:>14.0f}{t_py / t_c:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
