"""Time the numba kernels against the pure-numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py``. Each kernel is called
once to trigger compilation, then timed over several repeats; the table
reports the best time per call for each backend and the speedup.
"""

import argparse
import time

import numpy as np

from resnest_lab.kernels import get_backend


def _best(fn, repeats: int) -> float:
    fn()
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _cases(seed: int):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((12, 12))
    b = rng.standard_normal((16, 16))
    sym = rng.standard_normal((60, 60))
    sym = sym + sym.T
    tall = rng.standard_normal((80, 40))
    m, k, n_o, n = 16, 4, 2, 64
    base = rng.standard_normal((m, n))
    vl = rng.standard_normal((k, n))
    y = rng.standard_normal((n_o, n))
    wl = rng.standard_normal((m, k)) * 0.3
    wo = rng.standard_normal((n_o, m)) * 0.1
    no_decay = np.zeros(0, dtype=np.int64)
    return {
        "kron 12x12 (x) 16x16": lambda mod: mod.kron(a, b),
        "jacobi_eigh 60x60": lambda mod: mod.jacobi_eigh(sym, 100),
        "jacobi_svd 80x40": lambda mod: mod.jacobi_svd(tall, 100),
        "pphi_train 2000 iters": lambda mod: mod.pphi_train(base, vl, y, wl.copy(), wo.copy(), 1e-3, 0.9,
                                                            2000, 1e-14, 1000, no_decay, 1.0),
    }


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    numpy_mod = get_backend("numpy")
    try:
        numba_mod = get_backend("numba")
    except ImportError:
        numba_mod = None
    print(f"{'kernel':26s} {'numpy [ms]':>12s} {'numba [ms]':>12s} {'speedup':>8s}")
    for name, call in _cases(args.seed).items():
        t_np = _best(lambda: call(numpy_mod), args.repeats)
        if numba_mod is None:
            print(f"{name:26s} {t_np * 1e3:12.3f} {'n/a':>12s} {'n/a':>8s}")
            continue
        t_nb = _best(lambda: call(numba_mod), args.repeats)
        print(f"{name:26s} {t_np * 1e3:12.3f} {t_nb * 1e3:12.3f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
