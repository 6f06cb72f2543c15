"""Compare the numba and pure-numpy log-posterior kernels.

Run from the repository root::

    python benchmarks/bench_kernels.py [--repeats 2000] [--fit-iters 300]

Part one times one log-posterior-plus-gradient evaluation for every model
with both backends in this process. Part two times a short NUTS fit in two
subprocesses, one with ``HCRISK_DISABLE_NUMBA=1``, because the sampler's
transition is itself compiled when numba is present.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from hcrisk.inference import PosteriorTarget
from hcrisk.model import ModelSpec
from hcrisk.simulation import generate_dataset

FIT_SNIPPET = """
import time, warnings
warnings.simplefilter("ignore")
import hcrisk
from hcrisk.inference import SamplerConfig, run_chains
from hcrisk.model import ModelSpec, PriorConfig
from hcrisk.simulation import generate_dataset
data = generate_dataset(seed=1)
cfg = SamplerConfig(n_chains=1, n_iterations={iters}, n_burnin={burn}, seed=3)
run_chains(data, ModelSpec.from_name("M6"), PriorConfig(), SamplerConfig(n_chains=1, n_iterations=20, n_burnin=10))
t0 = time.perf_counter()
run_chains(data, ModelSpec.from_name("M6"), PriorConfig(), cfg)
print(hcrisk.backend(), time.perf_counter() - t0)
"""


def time_kernel(target: PosteriorTarget, z: np.ndarray, repeats: int) -> float:
    target.logp_grad(z)  # compile / warm caches
    t0 = time.perf_counter()
    for _ in range(repeats):
        target.logp_grad(z)
    return (time.perf_counter() - t0) / repeats


def bench_kernels(repeats: int) -> None:
    data, truth = generate_dataset(seed=1, return_truth=True)
    print(f"{'model':<6}{'numba (us)':>12}{'numpy (us)':>12}{'speedup':>10}")
    for i in range(1, 7):
        spec = ModelSpec.from_name(f"M{i}")
        fast = PosteriorTarget(data, spec, backend="numba")
        slow = PosteriorTarget(data, spec, backend="numpy")
        z = np.zeros(fast.dim)
        z[: 2 * 7] = np.log(np.concatenate([truth.lambda_, truth.theta]))
        t_fast = time_kernel(fast, z, repeats)
        t_slow = time_kernel(slow, z, repeats // 10 or 1)
        print(f"M{i:<5}{1e6 * t_fast:>12.1f}{1e6 * t_slow:>12.1f}{t_slow / t_fast:>10.1f}")


def bench_fit(iters: int) -> None:
    code = FIT_SNIPPET.format(iters=iters, burn=iters // 2)
    rows = []
    for disable in ("0", "1"):
        env = dict(os.environ, HCRISK_DISABLE_NUMBA=disable)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, seconds = out.stdout.split()
        rows.append((backend, float(seconds)))
    print(f"\nM6 fit, 1 chain x {iters} iterations")
    for backend, seconds in rows:
        print(f"  {backend:<6}{seconds:8.2f} s")
    print(f"  speedup {rows[1][1] / rows[0][1]:.1f}x")


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=2000)
    parser.add_argument("--fit-iters", type=int, default=300)
    args = parser.parse_args(argv)
    bench_kernels(args.repeats)
    bench_fit(args.fit_iters)


if __name__ == "__main__":
    main()
