"""Synthetic semantic and spatial QA generation with two-axis verification.

Per document: sample text lines, ask the backend for a short question whose
answer is the line verbatim, reformulate it as a "where is ..." question,
then ask whether the line is user-entered content (meaningful) and whether
it answers the question (consistent). One spatial question object serves
both the records (serialized as ``q_spt``) and structural tuning.
"""
from __future__ import annotations

import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .jsonl import read_lines, write_lines
from .llm import Gateway, PromptState, ScriptMiss, TransportError, first_line, parse_yes_no
from .structure import BBox, EntitySet, GridSpec, RegionLabel, TextLineEntity, assign_region, grid_index_of

log = logging.getLogger(__name__)

SPATIAL_FALLBACK = "Where is the answer of {q_sem} located?"
SUBSET_NAMES = {1: "full", 2: "meaningful", 3: "consistent", 4: "dual"}


@dataclass(frozen=True)
class SemanticQA:
    question: str
    answer: str
    entity_id: int
    doc_id: str


@dataclass(frozen=True)
class SpatialQA:
    question: str
    region: RegionLabel
    grid_index: int
    entity_id: int
    doc_id: str


@dataclass(frozen=True)
class VerificationFlags:
    meaningful: bool
    consistent: bool
    raw_justifications: tuple[str, ...] = ()


@dataclass(frozen=True)
class QARecord:
    semantic: SemanticQA
    spatial: SpatialQA
    flags: VerificationFlags

    @property
    def doc_id(self) -> str:
        return self.semantic.doc_id

    def to_dict(self) -> dict:
        return {
            "doc_id": self.semantic.doc_id,
            "entity_id": self.semantic.entity_id,
            "q_sem": self.semantic.question,
            "answer": self.semantic.answer,
            "q_spt": self.spatial.question,
            "region": str(self.spatial.region),
            "grid_index": self.spatial.grid_index,
            "meaningful": self.flags.meaningful,
            "consistent": self.flags.consistent,
            "raw": list(self.flags.raw_justifications),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QARecord":
        doc, eid = str(d["doc_id"]), int(d["entity_id"])
        return cls(
            SemanticQA(d["q_sem"], d["answer"], eid, doc),
            SpatialQA(d["q_spt"], RegionLabel.parse(d["region"]), int(d["grid_index"]), eid, doc),
            VerificationFlags(bool(d["meaningful"]), bool(d["consistent"]), tuple(d.get("raw", ()))),
        )


@dataclass
class GenerationOptions:
    entities_per_doc: int = 10
    doc_type: str = "form"
    verify_with_image: bool = False
    grid: GridSpec = field(default_factory=GridSpec)
    workers: int = 1


# ---------------------------------------------------------------- prompt states
# Exposed so mock scripts can be built against exactly the prompts sent.


def semantic_state(entity: TextLineEntity, es: EntitySet) -> PromptState:
    return PromptState("gen_semantic", {"context": es.text, "target": entity.content}, es.image_path, doc_id=es.doc_id)


def spatial_state(q_sem: str, es: EntitySet) -> PromptState:
    return PromptState("gen_spatial", {"question": q_sem}, es.image_path, doc_id=es.doc_id)


def meaningful_state(entity: TextLineEntity, es: EntitySet, with_image: bool = False) -> PromptState:
    return PromptState("verify_user_input", {"context": es.text, "target": entity.content},
                       es.image_path if with_image else None, doc_id=es.doc_id)


def consistent_state(q_sem: str, answer: str, es: EntitySet, with_image: bool = False) -> PromptState:
    return PromptState("verify_answer", {"target": answer, "question": q_sem},
                       es.image_path if with_image else None, doc_id=es.doc_id)


# ---------------------------------------------------------------- operations


def sample_entities(es: EntitySet, n: int, seed: int) -> list[TextLineEntity]:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not len(es):
        return []
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(es), size=min(n, len(es)), replace=False)
    return [es.entities[int(i)] for i in picks]


def generate_semantic_qa(entity: TextLineEntity, es: EntitySet, gateway: Gateway) -> SemanticQA:
    if not entity.content.strip():
        raise ValueError(f"entity {entity.id} has empty content")
    reply = gateway.ask(semantic_state(entity, es))
    return SemanticQA(first_line(reply.raw_text), entity.content, entity.id, es.doc_id)


def transform_spatial(sem: SemanticQA, entity_bbox: BBox, gateway: Gateway, es: EntitySet | None = None,
                      grid: GridSpec = GridSpec()) -> SpatialQA:
    state = spatial_state(sem.question, es) if es is not None else PromptState("gen_spatial", {"question": sem.question})
    try:
        question = first_line(gateway.ask(state).raw_text)
    except (TransportError, ScriptMiss) as exc:
        log.warning("spatial reformulation failed for %s/%d: %s", sem.doc_id, sem.entity_id, exc)
        question = ""
    if not question:
        question = SPATIAL_FALLBACK.format(q_sem=sem.question)
    return SpatialQA(question, assign_region(entity_bbox), grid_index_of(entity_bbox, grid), sem.entity_id, sem.doc_id)


def _verify(gateway: Gateway, state: PromptState) -> tuple[bool, str]:
    try:
        reply = gateway.ask(state)
    except (TransportError, ScriptMiss) as exc:
        return False, f"<error: {exc}>"
    return parse_yes_no(reply), reply.raw_text


def verify_meaningful(entity: TextLineEntity, es: EntitySet, gateway: Gateway, with_image: bool = False) -> bool:
    return _verify(gateway, meaningful_state(entity, es, with_image))[0]


def verify_consistent(q_sem: str, answer: str, gateway: Gateway, es: EntitySet | None = None,
                      with_image: bool = False) -> bool:
    if es is None:
        state = PromptState("verify_answer", {"target": answer, "question": q_sem})
    else:
        state = consistent_state(q_sem, answer, es, with_image)
    return _verify(gateway, state)[0]


def generate_for_document(es: EntitySet, gateway: Gateway, seed: int,
                          opts: GenerationOptions = GenerationOptions()) -> list[QARecord]:
    records: list[QARecord] = []
    seen: set[str] = set()
    for ent in sorted(sample_entities(es, opts.entities_per_doc, seed), key=lambda e: e.id):
        try:
            sem = generate_semantic_qa(ent, es, gateway)
        except (TransportError, ScriptMiss) as exc:
            log.warning("skipping %s/%d: %s", es.doc_id, ent.id, exc)
            continue
        if not sem.question or sem.question in seen:
            continue
        seen.add(sem.question)
        spt = transform_spatial(sem, ent.bbox, gateway, es, opts.grid)
        ok_m, raw_m = _verify(gateway, meaningful_state(ent, es, opts.verify_with_image))
        ok_c, raw_c = _verify(gateway, consistent_state(sem.question, sem.answer, es, opts.verify_with_image))
        records.append(QARecord(sem, spt, VerificationFlags(ok_m, ok_c, (raw_m, raw_c))))
    return records


def document_seed(seed: int, doc_id: str) -> int:
    return (seed * 1_000_003 + zlib.crc32(doc_id.encode("utf-8"))) % 2**32


def generate_corpus(sets: Sequence[EntitySet], gateway: Gateway, seed: int,
                    opts: GenerationOptions = GenerationOptions()) -> list[QARecord]:
    """Generate records for every document; output order follows ``sets``."""
    def one(es):
        return generate_for_document(es, gateway, document_seed(seed, es.doc_id), opts)

    if opts.workers > 1:
        with ThreadPoolExecutor(opts.workers) as pool:
            chunks = list(pool.map(one, sets))
    else:
        chunks = [one(es) for es in sets]
    return [r for chunk in chunks for r in chunk]


def build_subsets(records: Iterable[QARecord]) -> dict[int, list[QARecord]]:
    records = list(records)
    return {
        1: records,
        2: [r for r in records if r.flags.meaningful],
        3: [r for r in records if r.flags.consistent],
        4: [r for r in records if r.flags.meaningful and r.flags.consistent],
    }


def subset_stats(records: Sequence[QARecord], n_docs: int, n_gold_qa: int = 0) -> dict[str, int]:
    subsets = build_subsets(records)
    row = {"# Doc": n_docs, "# QA": n_gold_qa}
    row.update({f"Set {k}": len(v) for k, v in subsets.items()})
    return row


def write_records(records: Iterable[QARecord], path, meta: dict | None = None) -> int:
    return write_lines(path, (r.to_dict() for r in records), meta)


def read_records(path) -> list[QARecord]:
    return [QARecord.from_dict(d) for d in read_lines(path)]
