"""Recursive hint loop between the Warmer and a generative backend.

Iteration 0 asks the generator with the plain prompt. Each later iteration
retrieves the Top-K entities conditioned on the previous answer, swaps them
into the prompt as tips (replacing the previous tips) and asks again, until
two consecutive answers agree or the iteration cap is hit.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .jsonl import dumps, read_lines, write_lines
from .llm import Gateway, PromptState, ScriptMiss, TransportError, parse_answer, render_prompt
from .structure import EntitySet
from .warmer.features import DocFeatures
from .warmer.model import Warmer

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Candidate:
    entity_id: int
    content: str
    bbox: tuple[int, int, int, int]
    score: float


@dataclass(frozen=True)
class RetrievedCandidates:
    iteration: int
    items: tuple[Candidate, ...] = ()

    def __len__(self) -> int:
        return len(self.items)

    @property
    def contents(self) -> list[str]:
        return [c.content for c in self.items]


@dataclass
class LoopConfig:
    k: int = 3
    max_iter: int = 5
    use_bbox_hints: bool = False
    convergence_window: int = 2
    recursive: bool = True
    use_warmer: bool = True
    use_prior: bool = True
    doc_type: str = "form"
    workers: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.convergence_window < 2:
            raise ValueError("convergence_window must be >= 2")

    @property
    def label(self) -> str:
        if not self.use_warmer:
            return "Vanilla"
        base = "Top-1" if self.k == 1 else f"Top-{self.k}"
        return base + (" R" if self.recursive else "") + (" w/bbox" if self.use_bbox_hints else "")


@dataclass
class IterationRecord:
    t: int
    candidates: list[dict]
    template_id: str
    prompt_digest: str
    answer: str
    error: str | None = None


@dataclass
class InferenceTrace:
    qid: str
    doc_id: str
    question: str
    iterations: list[IterationRecord] = field(default_factory=list)
    stop_reason: str = ""
    final_answer: str = ""

    @property
    def answers(self) -> list[str]:
        return [it.answer for it in self.iterations]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "InferenceTrace":
        its = [IterationRecord(**it) for it in d["iterations"]]
        return cls(d["qid"], d["doc_id"], d["question"], its, d["stop_reason"], d["final_answer"])


# ---------------------------------------------------------------- operations


def _softmax(x: np.ndarray) -> np.ndarray:
    finite = np.isfinite(x)
    out = np.zeros_like(x, dtype=float)
    if finite.any():
        z = np.exp(x[finite] - x[finite].max())
        out[finite] = z / z.sum()
    return out


def retrieve(warmer: Warmer, doc: DocFeatures, question: str, prior_answer: str | None, k: int,
             iteration: int = 0) -> RetrievedCandidates:
    """Top-k entities by pointer probability; ties keep the lower entity index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if doc.n_entities == 0:
        return RetrievedCandidates(iteration)
    probs = _softmax(warmer.entity_scores(doc, question, prior_answer or None))
    order = np.argsort(-probs, kind="stable")[: min(k, doc.n_entities)]
    items = tuple(Candidate(int(i), doc.contents[i], tuple(doc.boxes[i].as_list()), float(probs[i])) for i in order)
    return RetrievedCandidates(iteration, items)


def vanilla_state(es: EntitySet, question: str, cfg: LoopConfig) -> PromptState:
    template = "bbox_no_tips" if cfg.use_bbox_hints else "no_tips"
    return PromptState(template, {"context": es.text, "target": cfg.doc_type, "question": question},
                       es.image_path, doc_id=es.doc_id)


def update_prompt(prev: PromptState, candidates: RetrievedCandidates, cfg: LoopConfig) -> PromptState:
    """Swap the candidate contents in as tips; no candidates leaves the plain prompt."""
    bbox = cfg.use_bbox_hints
    if not len(candidates):
        return prev.with_tips("bbox_no_tips" if bbox else "no_tips", ())
    if len(candidates) == 1:
        template = "bbox_one_tip" if bbox else "one_tip"
    else:
        template = "bbox_multi_tips" if bbox else "multi_tips"
    boxes = [c.bbox for c in candidates.items] if bbox else ()
    return prev.with_tips(template, candidates.contents, boxes)


def step(gateway: Gateway, state: PromptState) -> str:
    return parse_answer(gateway.ask(state))


def _norm(s: str) -> str:
    return " ".join(s.split())


def check_converged(answers: Sequence[str], window: int = 2) -> bool:
    if len(answers) < window:
        return False
    tail = [_norm(a) for a in answers[-window:]]
    return all(a == tail[0] for a in tail)


def _record(t: int, cands: RetrievedCandidates | None, state: PromptState, answer: str, error=None) -> IterationRecord:
    payload = render_prompt(state)
    items = [] if cands is None else [
        {"entity_id": c.entity_id, "content": c.content, "bbox": list(c.bbox), "score": round(c.score, 6)}
        for c in cands.items
    ]
    return IterationRecord(t, items, state.template_id, payload.digest, answer, error)


def run_loop(es: EntitySet, doc: DocFeatures | None, question: str, warmer: Warmer | None, gateway: Gateway,
             cfg: LoopConfig, qid: str = "") -> InferenceTrace:
    trace = InferenceTrace(qid or question, es.doc_id, question)
    state = vanilla_state(es, question, cfg)
    # prior-free retrieval recorded at iteration 0 for scoring the Warmer alone; not shown to the generator
    cands0 = None
    if warmer is not None and cfg.use_warmer and doc is not None:
        cands0 = retrieve(warmer, doc, question, None, cfg.k, 0)
    try:
        answer, err = step(gateway, state), None
    except (TransportError, ScriptMiss) as exc:
        answer, err = "", str(exc)
    trace.iterations.append(_record(0, cands0, state, answer, err))

    if warmer is None or not cfg.use_warmer or doc is None or doc.n_entities == 0:
        trace.stop_reason = "vanilla"
        trace.final_answer = answer
        return trace

    n_hint = cfg.max_iter if cfg.recursive else 1
    last_good = answer
    for t in range(1, n_hint + 1):
        prior = last_good if cfg.use_prior else None
        cands = retrieve(warmer, doc, question, prior, cfg.k, t)
        state = update_prompt(state, cands, cfg)
        try:
            answer, err = step(gateway, state), None
            last_good = answer
        except (TransportError, ScriptMiss) as exc:
            log.warning("%s iteration %d failed: %s", trace.qid, t, exc)
            answer, err = last_good, str(exc)
        trace.iterations.append(_record(t, cands, state, answer, err))
        if cfg.recursive and err is None and check_converged(trace.answers, cfg.convergence_window):
            trace.stop_reason = "converged"
            break
    else:
        trace.stop_reason = "max_iter" if cfg.recursive else "single_hint"
    trace.final_answer = last_good
    return trace


@dataclass(frozen=True)
class Query:
    qid: str
    doc_id: str
    question: str


def run_queries(queries: Sequence[Query], sets: dict[str, EntitySet], warmer: Warmer | None, gateway: Gateway,
                cfg: LoopConfig, done: Iterable[str] = ()) -> list[InferenceTrace]:
    """Run the loop for every query not in ``done``; output follows input order."""
    skip = set(done)
    todo = [q for q in queries if q.qid not in skip]
    feats: dict[str, DocFeatures] = {}
    if warmer is not None and cfg.use_warmer:
        for q in todo:
            if q.doc_id not in feats:
                feats[q.doc_id] = warmer.document_features(sets[q.doc_id])

    def one(q: Query) -> InferenceTrace:
        return run_loop(sets[q.doc_id], feats.get(q.doc_id), q.question, warmer, gateway, cfg, q.qid)

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            return list(pool.map(one, todo))
    return [one(q) for q in todo]


def write_traces(traces: Iterable[InferenceTrace], path, meta: dict | None = None, append: bool = False) -> int:
    return write_lines(path, (tr.to_dict() for tr in traces), meta, append)


def read_traces(path) -> list[InferenceTrace]:
    return [InferenceTrace.from_dict(d) for d in read_lines(path)]
