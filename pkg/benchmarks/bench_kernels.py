"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from stemcal import _backend
from stemcal.calibration import build_token_mask
from stemcal.separation import butterworth_sos


def cases(rng):
    sos = butterworth_sos(300.0, 16000, 4)
    audio = rng.standard_normal(16000 * 2)
    src, curr = rng.standard_normal((2, 8, 512, 512))
    g = rng.uniform(size=512)
    g[:64] = 0.0
    g[64:128] = 1.0
    text = rng.standard_normal((8, 512, 77))
    mask = build_token_mask(77, (5, 9)).bits
    probs = np.exp(src) / np.exp(src).sum(axis=-1, keepdims=True)
    return {
        "sosfilt (2 s @ 16 kHz, order 4)": lambda b: _backend.sosfilt(sos, audio, b),
        "interpolate_rows (8x512x512)": lambda b: _backend.interpolate_rows(src, curr, g, b),
        "add_outer_bias (8x512x77)": lambda b: _backend.add_outer_bias(text, g, mask, 2.5, b),
        "softmax_rows (8x512x512)": lambda b: _backend.softmax_rows(src, b),
        "row_entropy (8x512x512)": lambda b: _backend.row_entropy(probs, 1e-12, b),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    backends = sorted(_backend.BACKENDS)
    print(f"default backend: {_backend.NAME}")
    print(f"{'kernel':<34}" + "".join(f"{b + ' [ms]':>16}" for b in backends) + f"{'speedup':>10}")
    for name, fn in cases(np.random.default_rng(0)).items():
        times = {}
        for b in backends:
            number = 1 if (b == "python" and name.startswith("sosfilt")) else 3
            best = min(timeit.repeat(lambda: fn(b), number=number, repeat=args.repeat)) / number
            times[b] = best * 1e3
        ratio = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:<34}" + "".join(f"{times[b]:>16.2f}" for b in backends) + f"{ratio:>9.1f}x")


if __name__ == "__main__":
    main()
