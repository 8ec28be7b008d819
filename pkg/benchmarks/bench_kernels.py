"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both variants are imported directly, so the JSQA_DISABLE_NUMBA flag does not
matter here. Numba compile time is excluded by a warm-up call.
"""

import argparse
import timeit

import numpy as np

from jsqa import _kernels as K
from jsqa.audio import design_resample_filter


def cases(rng):
    up, down = 1, 3  # 48 kHz -> 16 kHz
    h = design_resample_filter(up, down)
    x48 = rng.standard_normal(48000 * 4)
    n_out = -(-x48.size * up // down)
    ref, est = rng.standard_normal((2, 32000))
    X = rng.standard_normal((2000, 2))
    y = np.where(X[:, 0] > 0, 1.0, -1.0)
    order = rng.permutation(2000)
    ranks_in = rng.integers(0, 500, 20000).astype(float)
    return {
        "resample 4 s 48k->16k": (
            lambda: K.resample_polyphase_numba(x48, h, up, down, (h.size - 1) // 2, n_out),
            lambda: K.resample_polyphase_numpy(x48, h, up, down, (h.size - 1) // 2, n_out),
        ),
        "si_sdr energies, 32000 samples": (
            lambda: K.si_sdr_energies_numba(ref, est),
            lambda: K.si_sdr_energies_numpy(ref, est),
        ),
        "svm epoch, 2000 rows": (
            lambda: K.svm_epoch_numba(X, y, np.zeros(2), 0.0, order, 0.1, 1.0),
            lambda: K.svm_epoch_numpy(X, y, np.zeros(2), 0.0, order, 0.1, 1.0),
        ),
        "average ranks, 20000 values with ties": (
            lambda: K.average_ranks_numba(ranks_in),
            lambda: K.average_ranks_numpy(ranks_in),
        ),
    }


def best_of(fn, repeat):
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat=repeat, number=number)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"{'kernel':<40}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for name, (fast, slow) in cases(np.random.default_rng(0)).items():
        fast()  # compile
        t_nb, t_np = best_of(fast, args.repeat), best_of(slow, args.repeat)
        print(f"{name:<40}{t_nb * 1e3:>12.3f}{t_np * 1e3:>12.3f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
