"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

The first numba call (compilation) is excluded from timings.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from docwarmer import kernels as K


def _strings(rng, n, max_len=24):
    alphabet = np.array(list("abcdefghij0123456789 ,.-"))
    return ["".join(rng.choice(alphabet, rng.integers(0, max_len + 1))) for _ in range(n)]


def cases(rng):
    left, right = _strings(rng, 2000), _strings(rng, 2000)
    ca, oa = K.pack_strings(left)
    cb, ob = K.pack_strings(right)
    img = rng.random((1100, 850))
    boxes = rng.integers(0, 1001, (20000, 4))
    boxes = np.stack([np.minimum(boxes[:, 0], boxes[:, 2]), np.minimum(boxes[:, 1], boxes[:, 3]),
                      np.maximum(boxes[:, 0], boxes[:, 2]), np.maximum(boxes[:, 1], boxes[:, 3])], 1).astype(np.int64)
    return {
        "levenshtein_many (2000 pairs)": (K._levenshtein_many_jit, K._levenshtein_many_np, (ca, oa, cb, ob)),
        "area_resize (1100x850 -> 64x64)": (K._area_resize_jit, K._area_resize_np, (img, 64, 64)),
        "grid_indices (20000 boxes)": (K._grid_indices_jit, K._grid_indices_np, (boxes, 3, 3)),
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, (fast, slow, a) in cases(rng).items():
        ref = fast(*a)  # compile
        assert np.allclose(ref, slow(*a)), name
        t_fast = min(timeit.repeat(lambda: fast(*a), number=1, repeat=args.repeat)) * 1e3
        t_slow = min(timeit.repeat(lambda: slow(*a), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:34s} {t_fast:10.2f} {t_slow:10.2f} {t_slow / t_fast:7.1f}x")


if __name__ == "__main__":
    main()
