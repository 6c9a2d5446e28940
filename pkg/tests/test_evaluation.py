import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from docwarmer.evaluation import EvalReport, ScoredItem, anls, build_report, nls, nls_many, score_items, topk_anls
from docwarmer.kernels import levenshtein
from oracles import nls_reference

text = st.text(alphabet="aAbB c漢", max_size=10)


def test_levenshtein_examples():
    assert levenshtein("kitten", "sitting") == 3
    assert levenshtein("same", "same") == 0
    assert levenshtein("abc", "") == 3


@given(text, text, text)
def test_levenshtein_metric_axioms(a, b, c):
    assert levenshtein(a, b) == levenshtein(b, a)
    assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)


def test_nls_examples():
    assert nls("Total", "total") == 1.0
    assert nls("abcd", "wxyz") == 0.0
    assert nls("27,21", "27,210") == pytest.approx(5 / 6, abs=1e-12)
    assert nls("", "x") == 0.0
    assert nls("", "") == 1.0
    assert nls("  a   b ", "A B") == 1.0
    with pytest.raises(ValueError):
        nls("a", "a", tau=1.0)


def test_threshold_boundary_is_inclusive():
    # d = 1/2 exactly: kept at tau 0.5
    assert nls("ab", "ax") == 0.5
    assert nls("abc", "xyz") == 0.0


@given(text, text)
def test_nls_matches_reference_and_bounds(p, g):
    s = nls(p, g)
    assert 0.0 <= s <= 1.0
    assert s == pytest.approx(nls_reference(p, g), abs=1e-12)
    assert nls_many([p], [g])[0] == pytest.approx(s, abs=1e-12)


def test_anls_examples():
    assert anls([1.0, 1.0]) == 1.0
    assert anls([1.0, 0.0]) == 0.5
    with pytest.raises(ValueError):
        anls([])


def test_anls_matches_brute_force_mean():
    rng = np.random.default_rng(4)
    words = ["invoice", "invoce", "total", "tota1", "date", "name", ""]
    preds = [words[i] for i in rng.integers(0, len(words), 200)]
    golds = [words[i] for i in rng.integers(0, len(words) - 1, 200)]
    items = score_items([str(i) for i in range(200)], preds, golds)
    brute = sum(nls_reference(p, g) for p, g in zip(preds, golds)) / 200
    assert anls(items) == pytest.approx(brute, abs=1e-12)
    assert anls(list(reversed(items))) == pytest.approx(anls(items), abs=1e-12)
    assert isinstance(items[0], ScoredItem)


def test_topk_examples():
    assert topk_anls([["abc"]], ["abc"]) == anls([nls("abc", "abc")])
    # candidates scoring 0.0 (below tau), 1.0 and 0.8
    assert topk_anls([["zzzzz", "hello", "hellx"]], ["hello"]) == 1.0
    with pytest.raises(ValueError):
        topk_anls([[]], ["a"])
    with pytest.raises(ValueError):
        topk_anls([["a"]], ["a", "b"])


@given(st.lists(st.tuples(st.lists(text, min_size=5, max_size=5), text), min_size=1, max_size=8))
def test_topk_monotone_in_k(items):
    cands = [c for c, _ in items]
    golds = [g for _, g in items]
    scores = [topk_anls([c[:k] for c in cands], golds) for k in (1, 3, 5)]
    assert scores[0] <= scores[1] <= scores[2]


def _trace(qid, answers, cands, stop="converged"):
    its = [{"t": t, "answer": a, "candidates": [{"content": c} for c in cs]} for t, (a, cs) in enumerate(zip(answers, cands))]
    return {"qid": qid, "iterations": its, "stop_reason": stop}


def test_report_rows_and_carry_forward():
    traces = [
        _trace("a", ["x", "gold", "gold"], [["gold"], ["gold"], ["gold"]]),
        _trace("b", ["y", "y"], [["no"], ["other", "y"]], "max_iter"),
    ]
    golds = {"a": "gold", "b": "y"}
    r = build_report(traces, None, golds, "toy", "Top-3 R")
    assert len(r.generator_anls) == 3
    assert r.generator_anls == [0.5, 1.0, 1.0]
    assert r.warmer_anls[0] == 0.5 and r.warmer_topk_anls[1] == 1.0
    assert r.counts == {"questions": 2, "stop_converged": 1, "stop_max_iter": 1}
    assert r.best_iteration_anls == 1.0
    assert "Vanilla" in r.to_table()


def test_report_uses_external_warmer_row():
    traces = [_trace("a", ["x", "gold"], [[], ["gold"]])]
    r = build_report(traces, {"a": ["gold"]}, {"a": "gold"})
    assert r.warmer_anls[0] == 1.0
    r = build_report(traces, None, {"a": "gold"})
    assert r.warmer_anls[0] is None


def test_report_roundtrip():
    r = build_report([_trace("a", ["x", "x"], [["x"], ["x"]])], None, {"a": "x"}, "toy", "lbl", config_hash="abc", seed=3)
    back = EvalReport.from_json(r.to_json())
    assert back == r and back.config_hash == "abc"


def test_report_id_mismatch_lists_ids():
    with pytest.raises(KeyError, match="b"):
        build_report([_trace("a", ["x"], [[]])], None, {"a": "x", "b": "y"})
    with pytest.raises(KeyError, match="a"):
        build_report([_trace("a", ["x"], [[]])], {}, {"a": "x"})


def test_empty_prediction_scores_zero():
    assert not math.isnan(nls("", "gold")) and nls("", "gold") == 0.0
