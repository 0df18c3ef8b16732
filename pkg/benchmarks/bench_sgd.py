"""Compare the compiled and pure-Python SGD kernels on one teacher-student run.

    python3 benchmarks/bench_sgd.py [--d 30] [--m 60] [--epochs 20] [--repeats 3]
"""

import argparse
import time

import numpy as np

from crbounds import kernels
from crbounds.core_model import Activation, ModelConfig
from crbounds.experiments import generate_dataset, generate_teacher
from crbounds.fisher_empirical import TwoLayerParams


def _case(d, m, epochs, seed=42):
    cfg = ModelConfig(d=d, n1=d, m=m, sigma_eps2=0.2)
    act = Activation.TANH
    teacher = generate_teacher(cfg, seed)
    x, y = generate_dataset(teacher, cfg, m, seed + 1, act)
    init = TwoLayerParams.sample(cfg, np.random.default_rng(seed + 2))
    rng = np.random.default_rng(seed + 3)
    orders = np.stack([rng.permutation(m) for _ in range(epochs)]).astype(np.int64)
    return init, np.ascontiguousarray(x.T), y, orders, 0.03 / m, act.code


def _time(backend, case, batch, repeats):
    init, x, y, orders, lr, code = case
    best, out = np.inf, None
    for _ in range(repeats):
        w1, w2 = init.w1.copy(), init.w2.copy()
        t0 = time.perf_counter()
        done, losses = kernels.sgd_epochs(w1, w2, x, y, orders, lr, code, batch, np.inf,
                                          backend=backend)
        best = min(best, time.perf_counter() - t0)
        out = (w1, w2, losses)
    return best, out


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--d", type=int, default=30)
    p.add_argument("--m", type=int, default=60)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--repeats", type=int, default=3)
    args = p.parse_args()
    case = _case(args.d, args.m, args.epochs)
    backends = kernels.available_backends()
    print(f"d=N={args.d} M={args.m} epochs={args.epochs} backends={','.join(backends)}")
    print("batch,backend,seconds,speedup,max_abs_diff_w1")
    for batch in (1, 8):
        ref = None
        base = None
        for backend in ("python",) + tuple(b for b in backends if b != "python"):
            sec, (w1, _, _) = _time(backend, case, batch, args.repeats)
            if ref is None:
                ref, base = w1, sec
            diff = float(np.max(np.abs(w1 - ref)))
            print(f"{batch},{backend},{sec:.4f},{base / sec:.1f},{diff:.3g}")


if __name__ == "__main__":
    main()
