import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from docwarmer import kernels as K
from docwarmer.kernels import encode_codepoints, pack_strings
from oracles import area_resize_supersample, grid_index_geometric, levenshtein_recursive

short_text = st.text(alphabet="abcé漢 ", max_size=12)


@given(short_text, short_text)
def test_levenshtein_both_paths_match_oracle(a, b):
    want = levenshtein_recursive(a, b)
    ca, cb = encode_codepoints(a), encode_codepoints(b)
    assert int(K._levenshtein_jit(ca, cb)) == want
    assert K._levenshtein_np(ca, cb) == want
    assert K.levenshtein(a, b) == want


def test_levenshtein_many_matches_pairwise():
    rng = np.random.default_rng(0)
    alphabet = list("abcd")
    left = ["".join(rng.choice(alphabet, rng.integers(0, 9))) for _ in range(200)]
    right = ["".join(rng.choice(alphabet, rng.integers(0, 9))) for _ in range(200)]
    want = np.array([levenshtein_recursive(a, b) for a, b in zip(left, right)])
    ca, oa = pack_strings(left)
    cb, ob = pack_strings(right)
    np.testing.assert_array_equal(K._levenshtein_many_jit(ca, oa, cb, ob), want)
    np.testing.assert_array_equal(K._levenshtein_many_np(ca, oa, cb, ob), want)
    np.testing.assert_array_equal(K.levenshtein_many(left, right), want)


def test_levenshtein_many_rejects_length_mismatch():
    with pytest.raises(ValueError):
        K.levenshtein_many(["a"], [])


def test_pack_strings_empty_inputs():
    codes, offsets = pack_strings([])
    assert codes.size == 0 and offsets.tolist() == [0]
    codes, offsets = pack_strings(["", ""])
    assert offsets.tolist() == [0, 0, 0]


def test_codepoints_are_not_bytes():
    assert encode_codepoints("漢字").tolist() == [ord("漢"), ord("字")]


@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
def test_area_resize_matches_supersampling(h, w, oh, ow, seed):
    img = np.random.default_rng(seed).random((h, w))
    want = area_resize_supersample(img, oh, ow)
    np.testing.assert_allclose(K._area_resize_jit(img, oh, ow), want, atol=1e-12)
    np.testing.assert_allclose(K._area_resize_np(img, oh, ow), want, atol=1e-12)
    np.testing.assert_allclose(K.area_resize(img, oh, ow), want, atol=1e-12)


def test_area_resize_preserves_constant_and_mean():
    img = np.full((7, 5), 0.3)
    np.testing.assert_allclose(K.area_resize(img, 3, 2), 0.3)
    img = np.arange(24, dtype=float).reshape(4, 6)
    assert K.area_resize(img, 2, 3).mean() == pytest.approx(img.mean())


def test_area_resize_rejects_bad_shape():
    with pytest.raises(ValueError):
        K.area_resize(np.zeros((0, 3)), 1, 1)
    with pytest.raises(ValueError):
        K.area_resize(np.zeros(3), 1, 1)


box_strategy = st.tuples(st.integers(0, 1000), st.integers(0, 1000), st.integers(0, 1000), st.integers(0, 1000)).map(
    lambda t: (min(t[0], t[2]), min(t[1], t[3]), max(t[0], t[2]), max(t[1], t[3]))
)


@given(st.lists(box_strategy, min_size=1, max_size=30), st.integers(1, 7), st.integers(1, 7))
def test_grid_indices_match_geometric_oracle(boxes, rows, cols):
    want = [grid_index_geometric(b, rows, cols) for b in boxes]
    arr = np.asarray(boxes, dtype=np.int64)
    assert K._grid_indices_jit(arr, rows, cols).tolist() == want
    assert K._grid_indices_np(arr, rows, cols).tolist() == want
    out = K.grid_indices(boxes, rows, cols)
    assert out.tolist() == want
    assert ((0 <= out) & (out < rows * cols)).all()


def test_env_flag_selects_numpy_path():
    code = "from docwarmer import _accel; print(_accel.USE_NUMBA)"
    env = {**os.environ, "DOCWARMER_DISABLE_NUMBA": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"
    env.pop("DOCWARMER_DISABLE_NUMBA")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "True"
