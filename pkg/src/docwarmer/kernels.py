"""Hot numeric kernels with numba and pure-numpy implementations.

Every kernel exists twice: ``_<name>_jit`` (compiled by numba unless disabled)
and ``_<name>_np`` (vectorised numpy). The public wrapper picks one according
to :data:`docwarmer._accel.USE_NUMBA`; the benchmark and the test-suite call
both directly.
"""
from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "area_resize",
    "encode_codepoints",
    "grid_indices",
    "levenshtein",
    "levenshtein_many",
]


def encode_codepoints(s: str) -> np.ndarray:
    """Unicode code points of ``s`` as int32 (one element per code point)."""
    return np.frombuffer(s.encode("utf-32-le"), dtype=np.int32).copy()


def pack_strings(strings) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate code points of many strings; returns (codes, offsets)."""
    arrays = [encode_codepoints(s) for s in strings]
    offsets = np.zeros(len(arrays) + 1, dtype=np.int64)
    if arrays:
        offsets[1:] = np.cumsum([a.size for a in arrays])
        codes = np.concatenate(arrays) if offsets[-1] else np.zeros(0, np.int32)
    else:
        codes = np.zeros(0, np.int32)
    return codes, offsets


# ---------------------------------------------------------------- levenshtein


@njit
def _levenshtein_jit(a, b):
    n = a.shape[0]
    m = b.shape[0]
    if n == 0:
        return m
    if m == 0:
        return n
    prev = np.arange(m + 1)
    cur = np.empty(m + 1, dtype=prev.dtype)
    for i in range(1, n + 1):
        cur[0] = i
        ai = a[i - 1]
        for j in range(1, m + 1):
            cost = 0 if ai == b[j - 1] else 1
            best = prev[j - 1] + cost
            if prev[j] + 1 < best:
                best = prev[j] + 1
            if cur[j - 1] + 1 < best:
                best = cur[j - 1] + 1
            cur[j] = best
        prev, cur = cur, prev
    return prev[m]


def _levenshtein_np(a: np.ndarray, b: np.ndarray) -> int:
    n, m = a.shape[0], b.shape[0]
    if n == 0:
        return int(m)
    if m == 0:
        return int(n)
    ramp = np.arange(m + 1)
    prev = ramp.copy()
    for i in range(1, n + 1):
        sub = prev[:-1] + (b != a[i - 1])
        tmp = np.minimum(sub, prev[1:] + 1)
        base = np.empty(m + 1, dtype=prev.dtype)
        base[0] = i
        base[1:] = tmp
        # insertion chain: cur[j] = min_k<=j base[k] + (j - k)
        prev = np.minimum.accumulate(base - ramp) + ramp
    return int(prev[m])


@njit
def _levenshtein_many_jit(codes_a, off_a, codes_b, off_b):
    n = off_a.shape[0] - 1
    out = np.empty(n, dtype=np.int64)
    for p in range(n):
        out[p] = _levenshtein_jit(codes_a[off_a[p]:off_a[p + 1]], codes_b[off_b[p]:off_b[p + 1]])
    return out


def _levenshtein_many_np(codes_a, off_a, codes_b, off_b) -> np.ndarray:
    n = off_a.shape[0] - 1
    out = np.empty(n, dtype=np.int64)
    for p in range(n):
        out[p] = _levenshtein_np(codes_a[off_a[p]:off_a[p + 1]], codes_b[off_b[p]:off_b[p + 1]])
    return out


def levenshtein(a: str, b: str) -> int:
    """Minimal number of code-point insertions, deletions and substitutions."""
    ca, cb = encode_codepoints(a), encode_codepoints(b)
    if USE_NUMBA:
        return int(_levenshtein_jit(ca, cb))
    return _levenshtein_np(ca, cb)


def levenshtein_many(left, right) -> np.ndarray:
    """Pairwise edit distances for two equal-length sequences of strings."""
    left, right = list(left), list(right)
    if len(left) != len(right):
        raise ValueError(f"length mismatch: {len(left)} vs {len(right)}")
    ca, oa = pack_strings(left)
    cb, ob = pack_strings(right)
    if USE_NUMBA:
        return _levenshtein_many_jit(ca, oa, cb, ob)
    return _levenshtein_many_np(ca, oa, cb, ob)


# ---------------------------------------------------------------- area resize


@njit
def _area_resize_jit(img, out_h, out_w):
    h, w = img.shape
    out = np.zeros((out_h, out_w))
    sy = h / out_h
    sx = w / out_w
    for oy in range(out_h):
        y0 = oy * sy
        y1 = y0 + sy
        for ox in range(out_w):
            x0 = ox * sx
            x1 = x0 + sx
            acc = 0.0
            for iy in range(int(np.floor(y0)), min(h, int(np.ceil(y1)))):
                wy = min(y1, iy + 1.0) - max(y0, float(iy))
                if wy <= 0.0:
                    continue
                for ix in range(int(np.floor(x0)), min(w, int(np.ceil(x1)))):
                    wx = min(x1, ix + 1.0) - max(x0, float(ix))
                    if wx > 0.0:
                        acc += img[iy, ix] * wy * wx
            out[oy, ox] = acc / (sy * sx)
    return out


def _coverage(n_in: int, n_out: int) -> np.ndarray:
    scale = n_in / n_out
    lo = np.arange(n_out)[:, None] * scale
    hi = lo + scale
    pix = np.arange(n_in)[None, :]
    overlap = np.minimum(hi, pix + 1.0) - np.maximum(lo, pix)
    return np.clip(overlap, 0.0, None) / scale


def _area_resize_np(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    return _coverage(img.shape[0], out_h) @ img @ _coverage(img.shape[1], out_w).T


def area_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Box-filter resample of a 2-D float image (exact fractional coverage)."""
    img = np.ascontiguousarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] == 0 or img.shape[1] == 0:
        raise ValueError(f"expected a non-empty 2-D image, got shape {img.shape}")
    if USE_NUMBA:
        return _area_resize_jit(img, int(out_h), int(out_w))
    return _area_resize_np(img, int(out_h), int(out_w))


# ---------------------------------------------------------------- grid lookup


@njit
def _grid_indices_jit(boxes, rows, cols):
    n = boxes.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        # doubled centre keeps the arithmetic integral; ties go to the lower cell
        cx2 = boxes[i, 0] + boxes[i, 2]
        cy2 = boxes[i, 1] + boxes[i, 3]
        c = (cx2 * cols + 1999) // 2000 - 1
        r = (cy2 * rows + 1999) // 2000 - 1
        c = min(max(c, 0), cols - 1)
        r = min(max(r, 0), rows - 1)
        out[i] = r * cols + c
    return out


def _grid_indices_np(boxes: np.ndarray, rows: int, cols: int) -> np.ndarray:
    cx2 = boxes[:, 0] + boxes[:, 2]
    cy2 = boxes[:, 1] + boxes[:, 3]
    c = np.clip((cx2 * cols + 1999) // 2000 - 1, 0, cols - 1)
    r = np.clip((cy2 * rows + 1999) // 2000 - 1, 0, rows - 1)
    return (r * cols + c).astype(np.int64)


def grid_indices(boxes, rows: int, cols: int) -> np.ndarray:
    """Grid cell index of each box centre for normalized (0-1000) boxes."""
    boxes = np.ascontiguousarray(np.asarray(boxes, dtype=np.int64).reshape(-1, 4))
    if USE_NUMBA:
        return _grid_indices_jit(boxes, int(rows), int(cols))
    return _grid_indices_np(boxes, int(rows), int(cols))
