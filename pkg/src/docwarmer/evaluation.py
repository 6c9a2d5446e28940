"""ANLS scoring and per-iteration reports.

Comparison is case-insensitive with whitespace collapsed; a normalized
similarity below the threshold (default 0.5) scores 0. Empty predictions
score 0 against a non-empty gold answer.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .kernels import levenshtein, levenshtein_many

TAU = 0.5


@dataclass(frozen=True)
class ScoredItem:
    qid: str
    prediction: str
    gold: str
    nls: float
    iteration: int | None = None


def _canon(s: str) -> str:
    return " ".join(s.lower().split())


def nls(pred: str, gold: str, tau: float = TAU) -> float:
    if not 0 < tau < 1:
        raise ValueError(f"threshold must be in (0, 1), got {tau}")
    p, g = _canon(pred), _canon(gold)
    d = levenshtein(p, g) / max(len(p), len(g), 1)
    score = 1.0 - d
    return score if score >= tau else 0.0


def nls_many(preds: Sequence[str], golds: Sequence[str], tau: float = TAU) -> np.ndarray:
    p = [_canon(x) for x in preds]
    g = [_canon(x) for x in golds]
    dist = levenshtein_many(p, g).astype(float)
    denom = np.maximum(np.maximum([len(x) for x in p], [len(x) for x in g]), 1) if p else np.ones(0)
    score = 1.0 - dist / denom
    return np.where(score >= tau, score, 0.0)


def score_items(qids, preds, golds, iteration=None, tau: float = TAU) -> list[ScoredItem]:
    scores = nls_many(preds, golds, tau)
    return [ScoredItem(q, p, g, float(s), iteration) for q, p, g, s in zip(qids, preds, golds, scores)]


def anls(items: Sequence[ScoredItem] | Sequence[float]) -> float:
    items = list(items)
    if not items:
        raise ValueError("anls of an empty list")
    vals = [it.nls if isinstance(it, ScoredItem) else float(it) for it in items]
    return float(sum(vals) / len(vals))


def topk_anls(candidates_per_item: Sequence[Sequence[str]], golds: Sequence[str], tau: float = TAU) -> float:
    """Mean over items of the best nls among each item's candidates."""
    if len(candidates_per_item) != len(golds):
        raise ValueError("candidates and golds differ in length")
    if not golds:
        raise ValueError("topk_anls of an empty list")
    best = []
    for cands, gold in zip(candidates_per_item, golds):
        if not cands:
            raise ValueError("every item needs at least one candidate")
        best.append(float(nls_many(list(cands), [gold] * len(cands), tau).max()))
    return float(np.mean(best))


# ---------------------------------------------------------------- reports


@dataclass
class EvalReport:
    dataset: str
    config_label: str
    generator_anls: list[float]
    warmer_anls: list[float | None]
    warmer_topk_anls: list[float | None] = field(default_factory=list)
    counts: dict[str, int] = field(default_factory=dict)
    config_hash: str | None = None
    seed: int | None = None
    # mean over questions of the best generator iteration; an upper bound for analysis only
    best_iteration_anls: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))

    def to_table(self) -> str:
        def fmt(v):
            return "-" if v is None else f"{100 * v:.2f}"

        rows = [("Iter.", "Warmer", "Warmer@K", "Generator")]
        topk = self.warmer_topk_anls or [None] * len(self.generator_anls)
        for i, (g, w, k) in enumerate(zip(self.generator_anls, self.warmer_anls, topk)):
            rows.append(("Vanilla" if i == 0 else str(i), fmt(w), fmt(k), fmt(g)))
        widths = [max(len(r[c]) for r in rows) for c in range(4)]
        lines = [f"{self.dataset} | {self.config_label}" + (f" | {self.config_hash}" if self.config_hash else "")]
        for n, r in enumerate(rows):
            lines.append("  ".join(cell.rjust(w) if c else cell.ljust(w) for c, (cell, w) in enumerate(zip(r, widths))))
            if n == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"


def _iteration_view(trace: Mapping, t: int) -> Mapping:
    its = trace["iterations"]
    return its[min(t, len(its) - 1)]


def build_report(traces: Sequence[Mapping], warmer_outputs: Mapping[str, Sequence[str]] | None,
                 golds: Mapping[str, str], dataset: str = "", config_label: str = "",
                 tau: float = TAU, config_hash: str | None = None, seed: int | None = None) -> EvalReport:
    """Per-iteration ANLS for generator and Warmer.

    ``traces`` are serialized inference traces (``qid``, ``iterations``).
    Row 0 is vanilla generation; the Warmer's row 0 uses ``warmer_outputs``
    when given, else the prior-free candidates stored at iteration 0. Traces that stopped early carry their last
    iteration forward to the longest trace length.
    """
    trace_ids = [t["qid"] for t in traces]
    missing = sorted(set(golds) ^ set(trace_ids))
    if warmer_outputs is not None:
        missing += sorted(q for q in trace_ids if q not in warmer_outputs and q not in missing)
    if missing:
        raise KeyError(f"question id mismatch: {', '.join(map(str, missing[:20]))}")
    if not traces:
        raise ValueError("no traces to score")

    n_iter = max(len(t["iterations"]) for t in traces)
    gen, warm, warm_k = [], [], []
    for it in range(n_iter):
        views = [_iteration_view(t, it) for t in traces]
        gold = [golds[t["qid"]] for t in traces]
        gen.append(anls(nls_many([v["answer"] for v in views], gold, tau).tolist()))
        if it == 0 and warmer_outputs is not None:
            cands = [list(warmer_outputs[t["qid"]]) for t in traces]
        else:
            cands = [[c["content"] for c in v.get("candidates", [])] for v in views]
        if any(cands):
            # a question whose document had no entities scores as an empty prediction
            warm.append(anls(nls_many([c[0] if c else "" for c in cands], gold, tau).tolist()))
            warm_k.append(topk_anls([c or [""] for c in cands], gold, tau))
        else:
            warm.append(None)
            warm_k.append(None)
    best = [max(nls_many([it["answer"] for it in t["iterations"]], [golds[t["qid"]]] * len(t["iterations"]), tau))
            for t in traces]
    stops: dict[str, int] = {}
    for t in traces:
        stops[t.get("stop_reason", "unknown")] = stops.get(t.get("stop_reason", "unknown"), 0) + 1
    counts = {"questions": len(traces), **{f"stop_{k}": v for k, v in sorted(stops.items())}}
    return EvalReport(dataset, config_label, gen, warm, warm_k, counts, config_hash, seed, float(np.mean(best)))
