"""Staged tuning of the Warmer on synthetic QA.

Structural adaptation trains the grid head (plus backbone) to locate the
cell holding the answer of a spatial question. Semantic adaptation then
trains the span and entity heads (plus backbone, unless frozen) with a
weighted sum of span and entity cross-entropies; the grid head stays frozen.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..evaluation import nls_many
from ..inquiry import QARecord, build_subsets
from ..structure import EntitySet
from .features import DocFeatures
from .model import Warmer, WarmerExample, argmax_lowest

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- losses


def _check_gold(logits: torch.Tensor, gold: torch.Tensor, what: str) -> None:
    n = logits.shape[-1]
    if bool(((gold < 0) | (gold >= n)).any()):
        raise IndexError(f"{what} gold index out of range [0, {n})")


def _ce(logits: torch.Tensor, gold, what: str) -> torch.Tensor:
    logits = logits if logits.dim() == 2 else logits.unsqueeze(0)
    gold = torch.as_tensor(gold, dtype=torch.long).reshape(-1)
    _check_gold(logits, gold, what)
    return F.cross_entropy(logits, gold)


def structural_loss(grid_logits: torch.Tensor, gold_index) -> torch.Tensor:
    """Cross-entropy over grid cells, mean over the batch."""
    return _ce(grid_logits, gold_index, "grid")


def fine_grained_loss(start_logits, end_logits, gold_start, gold_end) -> torch.Tensor:
    """Start CE plus end CE over context tokens."""
    return _ce(start_logits, gold_start, "span start") + _ce(end_logits, gold_end, "span end")


def coarse_grained_loss(entity_logits: torch.Tensor, gold_entity) -> torch.Tensor:
    return _ce(entity_logits, gold_entity, "entity")


def combined_loss(l_fg, l_cg, lambda_fg: float = 1.0, lambda_cg: float = 1.0):
    return lambda_fg * l_fg + lambda_cg * l_cg


# ---------------------------------------------------------------- config / report


@dataclass
class TuningConfig:
    subset_id: int = 4
    use_structural: bool = True
    use_prior_answer: bool = True
    lambda_fg: float = 1.0
    lambda_cg: float = 1.0
    epochs_structural: int = 2
    epochs_semantic: int = 10
    batch_size: int = 16
    learning_rate: float = 2e-5
    weight_decay: float = 0.01
    freeze_backbone: bool = False
    prior_free_copies: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.subset_id not in (1, 2, 3, 4):
            raise ValueError(f"subset_id must be 1-4, got {self.subset_id}")
        if self.lambda_fg < 0 or self.lambda_cg < 0 or (self.lambda_fg == 0 and self.lambda_cg == 0):
            raise ValueError("loss weights must be nonnegative and not both zero")
        if self.epochs_semantic < 1 and not (self.use_structural and self.epochs_structural >= 1):
            raise ValueError("at least one tuning stage must run")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def label(self) -> str:
        return f"S{self.subset_id}-St{int(self.use_structural)}-Prior{int(self.use_prior_answer)}"

    def checkpoint_name(self) -> str:
        return f"warmer_s{self.subset_id}_st{int(self.use_structural)}_pr{int(self.use_prior_answer)}_seed{self.seed}.pt"


@dataclass
class TuningReport:
    config: dict
    structural_losses: list[float] = field(default_factory=list)
    semantic_losses: list[float] = field(default_factory=list)
    checkpoint: str | None = None
    subset_sizes: dict[str, int] = field(default_factory=dict)
    skipped: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)


# ---------------------------------------------------------------- example building


class FeatureCache:
    """Document features computed once per doc id for a given model."""

    def __init__(self, model: Warmer, sets: Sequence[EntitySet]):
        self.model = model
        self.sets = {es.doc_id: es for es in sets}
        self._cache: dict[str, DocFeatures] = {}

    def __getitem__(self, doc_id: str) -> DocFeatures:
        if doc_id not in self._cache:
            self._cache[doc_id] = self.model.document_features(self.sets[doc_id])
        return self._cache[doc_id]

    def entity_set(self, doc_id: str) -> EntitySet:
        return self.sets[doc_id]


def _window_with(model: Warmer, doc: DocFeatures, entity_id: int) -> list[tuple[int, int]]:
    return [w for w in model.windows(doc) if entity_id in set(doc.ctx_entity[w[0]:w[1]].tolist())]


def structural_examples(model: Warmer, records: Sequence[QARecord], cache: FeatureCache) -> list[WarmerExample]:
    out = []
    for r in records:
        doc = cache[r.doc_id]
        wins = _window_with(model, doc, r.spatial.entity_id) or model.windows(doc)[:1]
        out.append(WarmerExample(doc, r.spatial.question, None, wins[0], gold_grid=r.spatial.grid_index))
    return out


def semantic_examples(model: Warmer, records: Sequence[QARecord], cache: FeatureCache,
                      priors: Mapping[tuple[str, str], str] | None = None,
                      augment: bool = False) -> tuple[list[WarmerExample], int]:
    """One example per window containing the gold entity; returns (examples, skipped)."""
    out, skipped = [], 0
    for r in records:
        doc = cache[r.doc_id]
        prior = priors.get((r.doc_id, r.semantic.question)) if priors else None
        wins = _window_with(model, doc, r.semantic.entity_id)
        if not wins:
            skipped += 1
            continue
        for w in wins:
            out.append(WarmerExample(doc, r.semantic.question, prior or None, w,
                                     gold_entity=r.semantic.entity_id, answer=r.semantic.answer))
            if prior and augment:
                out.append(WarmerExample(doc, r.semantic.question, None, w,
                                         gold_entity=r.semantic.entity_id, answer=r.semantic.answer))
    return out, skipped


# ---------------------------------------------------------------- training loops


def _epoch_batches(n: int, batch_size: int, gen: torch.Generator) -> list[list[int]]:
    order = torch.randperm(n, generator=gen).tolist()
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _train(model: Warmer, examples, params, loss_fn, epochs: int, cfg: TuningConfig, stage_seed: int) -> list[float]:
    gen = torch.Generator().manual_seed(cfg.seed * 1009 + stage_seed)
    params = [p for p in params if p.requires_grad]
    opt = torch.optim.AdamW(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    losses = []
    model.train()
    for epoch in range(epochs):
        total, count = 0.0, 0
        for idx in _epoch_batches(len(examples), cfg.batch_size, gen):
            batch = model.collate([examples[i] for i in idx])
            loss = loss_fn(batch)
            if loss is None:
                continue
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
            count += len(idx)
        losses.append(total / max(count, 1))
        log.info("epoch %d loss %.4f", epoch + 1, losses[-1])
    model.eval()
    return losses


def run_structural_adaptation(model: Warmer, records: Sequence[QARecord], cache: FeatureCache,
                              cfg: TuningConfig) -> list[float]:
    """Train grid head + backbone on spatial questions; no-op when the stage is disabled."""
    if not cfg.use_structural or cfg.epochs_structural < 1:
        return []
    if not records:
        raise ValueError("structural adaptation needs at least one spatial record")
    examples = structural_examples(model, records, cache)

    def loss_fn(batch):
        out = model(batch, modes=("grid",))
        return structural_loss(out.grid_logits, batch["gold_grid"])

    params = model.head_parameters("grid") + model.backbone_parameters()
    return _train(model, examples, params, loss_fn, cfg.epochs_structural, cfg, 1)


def semantic_loss(model: Warmer, batch: dict, cfg: TuningConfig) -> torch.Tensor | None:
    out = model(batch, modes=("retrieve", "span"))
    has_span = batch["gold_start"] >= 0
    if cfg.lambda_fg > 0 and bool(has_span.any()):
        l_fg = fine_grained_loss(out.start_logits[has_span], out.end_logits[has_span],
                                 batch["gold_start"][has_span], batch["gold_end"][has_span])
    else:
        l_fg = torch.zeros((), dtype=out.start_logits.dtype)
    has_ent = batch["gold_ent"] >= 0
    if cfg.lambda_cg > 0 and bool(has_ent.any()):
        l_cg = coarse_grained_loss(out.entity_logits[has_ent], batch["gold_ent"][has_ent])
    else:
        l_cg = torch.zeros((), dtype=out.start_logits.dtype)
    total = combined_loss(l_fg, l_cg, cfg.lambda_fg, cfg.lambda_cg)
    return total if total.requires_grad else None


def run_semantic_adaptation(model: Warmer, records: Sequence[QARecord], cache: FeatureCache, cfg: TuningConfig,
                            priors: Mapping[tuple[str, str], str] | None = None) -> tuple[list[float], int]:
    if cfg.epochs_semantic < 1:
        return [], 0
    if not records:
        raise ValueError("semantic adaptation needs a non-empty subset")
    examples, skipped = semantic_examples(model, records, cache, priors if cfg.use_prior_answer else None,
                                          cfg.prior_free_copies)
    if not examples:
        raise ValueError("no semantic example has its gold entity inside a context window")
    for p in model.head_parameters("grid"):
        p.requires_grad_(False)
    params = model.head_parameters("span") + model.head_parameters("entity")
    if not cfg.freeze_backbone:
        params += model.backbone_parameters()
    try:
        losses = _train(model, examples, params, lambda b: semantic_loss(model, b, cfg), cfg.epochs_semantic, cfg, 2)
    finally:
        for p in model.head_parameters("grid"):
            p.requires_grad_(True)
    return losses, skipped


def tune(model: Warmer, records: Sequence[QARecord], sets: Sequence[EntitySet], cfg: TuningConfig,
         priors: Mapping[tuple[str, str], str] | None = None) -> TuningReport:
    """Structural stage (if enabled) followed by semantic stage on the configured subset."""
    torch.manual_seed(cfg.seed)
    cache = FeatureCache(model, sets)
    subsets = build_subsets(records)
    subset = subsets[cfg.subset_id]
    report = TuningReport(asdict(cfg), subset_sizes={str(k): len(v) for k, v in subsets.items()})
    report.structural_losses = run_structural_adaptation(model, subset, cache, cfg)
    report.semantic_losses, report.skipped["semantic_window"] = run_semantic_adaptation(model, subset, cache, cfg, priors)
    return report


# ---------------------------------------------------------------- evaluation helpers


@dataclass(frozen=True)
class EvalQuery:
    doc_id: str
    question: str
    gold_entity: int = -1
    gold_grid: int = -1
    answer: str = ""
    prior: str | None = None


def retrieval_accuracy(model: Warmer, queries: Sequence[EvalQuery], cache: FeatureCache) -> float:
    hits = [argmax_lowest(model.entity_scores(cache[q.doc_id], q.question, q.prior)) == q.gold_entity
            for q in queries]
    return float(np.mean(hits)) if hits else math.nan


def grid_accuracy(model: Warmer, queries: Sequence[EvalQuery], cache: FeatureCache) -> float:
    hits = [argmax_lowest(model.grid_scores(cache[q.doc_id], q.question)) == q.gold_grid for q in queries]
    return float(np.mean(hits)) if hits else math.nan


def warmer_anls(model: Warmer, queries: Sequence[EvalQuery], cache: FeatureCache) -> float:
    """ANLS of the entity head's Top-1 content against each query's answer."""
    preds = []
    for q in queries:
        doc = cache[q.doc_id]
        preds.append(doc.contents[argmax_lowest(model.entity_scores(doc, q.question, q.prior))])
    return float(nls_many(preds, [q.answer for q in queries]).mean())
