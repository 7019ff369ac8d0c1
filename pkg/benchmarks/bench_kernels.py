"""Compare the compiled kernel extension against the numpy fallback.

Runs each hot kernel on representative shapes (hidden width 16..128) and
reports per-call time for both backends plus the speedup. Also times one
full training step through the public API under each backend (subprocess,
since the backend is fixed at import time).

Usage: python benchmarks/bench_kernels.py [--repeats N] [--quick]
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from activekg.diffnum import _kernels_py  # noqa: E402

try:
    from activekg.diffnum import _kernels_cy
except ImportError:  # pragma: no cover - build-env dependent
    _kernels_cy = None


def _workloads(rng: np.random.Generator, d: int):
    w = rng.standard_normal((d, d))
    x = rng.standard_normal(d)
    b = rng.standard_normal(d)
    y = np.abs(rng.standard_normal(d))
    y /= y.sum()
    gy = rng.standard_normal(d)
    logp = np.log(y)
    return [
        ("affine", lambda k: k.affine(w, x, b)),
        ("affine_bw", lambda k: k.affine_bw(w, x, gy)),
        ("softmax", lambda k: k.softmax(x)),
        ("softmax_bw", lambda k: k.softmax_bw(y, gy)),
        ("log_softmax", lambda k: k.log_softmax(x)),
        ("log_softmax_bw", lambda k: k.log_softmax_bw(logp, gy)),
        ("logsumexp", lambda k: k.logsumexp(x)),
        ("sigmoid", lambda k: k.sigmoid(x)),
        ("sigmoid_bw", lambda k: k.sigmoid_bw(y, gy)),
        ("tanh", lambda k: k.tanh_(x)),
        ("tanh_bw", lambda k: k.tanh_bw(np.tanh(x), gy)),
        ("softplus", lambda k: k.softplus(x)),
        ("softplus_bw", lambda k: k.softplus_bw(x, gy)),
    ]


def _time_call(fn, repeats: int) -> float:
    fn()  # warm
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_kernels(repeats: int) -> None:
    if _kernels_cy is None:
        print("compiled extension not built; kernel table skipped")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16} {'d':>4} {'python us':>10} {'cython us':>10} {'speedup':>8}")
    for d in (16, 64, 128):
        for name, call in _workloads(rng, d):
            t_py = _time_call(lambda: call(_kernels_py), repeats)
            t_cy = _time_call(lambda: call(_kernels_cy), repeats)
            ratio = t_py / t_cy if t_cy > 0 else float("inf")
            print(
                f"{name:<16} {d:>4} {t_py * 1e6:>10.2f} {t_cy * 1e6:>10.2f}"
                f" {ratio:>7.2f}x"
            )


_STEP_SNIPPET = """
import time
import numpy as np
from activekg.diffnum import BACKEND_NAME
from activekg.kg import GeneratorConfig, generate_benchmark
from activekg.train import Model, Schedules, TrainConfig, train_run
from activekg.oracle import simulated_answer

gen = GeneratorConfig(n_entities=120, n_relations=6, n_items=24, seed=0, max_hops=3,
                      hop_distribution={1: 0.5, 2: 0.3, 3: 0.2})
graph, items = generate_benchmark(gen)
cfg = TrainConfig(d=16, steps=%d, batch_size=4, seed=0, oracle_noise=0.0)
rng_o = np.random.default_rng(1)
oracle = lambda q, item: simulated_answer(q, item, 0.0, rng_o)
t0 = time.perf_counter()
train_run(graph, items, cfg, Schedules(total_steps=cfg.steps), oracle)
dt = time.perf_counter() - t0
print(f"{BACKEND_NAME}: %d steps in {dt:.2f}s ({dt / %d * 1e3:.0f} ms/step)")
"""


def bench_train_step(steps: int) -> None:
    print(f"\nfull training step ({steps} steps, d=16, batch 4):")
    for env_val in ("0", "1"):
        env = dict(os.environ, ACTIVEKG_PURE_PY=env_val)
        code = _STEP_SNIPPET % (steps, steps, steps)
        out = subprocess.run(
            [sys.executable, "-c", code], env=env, capture_output=True, text=True
        )
        print(out.stdout.strip() or out.stderr.strip())


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=2000)
    ap.add_argument("--quick", action="store_true", help="skip the training-step timing")
    args = ap.parse_args()
    bench_kernels(args.repeats)
    if not args.quick:
        bench_train_step(steps=6)


if __name__ == "__main__":
    main()
