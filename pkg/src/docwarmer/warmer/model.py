"""The discriminative Warmer: backbone adapter plus three prediction heads.

Input layout per example (one context window)::

    [CLS] question [SEP] prior-answer [SEP] context-tokens [SEP] | grid tokens | patch tokens

Context token embeddings are summed with a learned projection of their
entity box. Grid tokens are a learned projection of box-filtered cell pixels
plus a cell-index embedding. Entities are mean-pooled over their tokens and
concatenated with fixed visual and sentence features before the entity
retrieval head (a one-layer entity-level transformer and a pointer scorer).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from ..structure import EntitySet, GridSpec
from .features import DocFeatures, SentenceEncoder, VisualEncoder, build_doc_features
from .tokenizer import CLS, PAD, SEP, HashTokenizer

SEG_Q, SEG_A, SEG_C, SEG_GRID, SEG_PATCH = range(5)
BACKBONES = ("tiny", "roberta", "lilt", "layoutlmv3")


@dataclass
class WarmerConfig:
    backbone: str = "tiny"
    hidden: int = 64
    layers: int = 2
    heads: int = 4
    ff: int = 128
    dropout: float = 0.0
    vocab_size: int = 4096
    max_len: int = 256
    max_question_tokens: int = 32
    max_prior_tokens: int = 32
    visual_dim: int = 32
    grid_rows: int = 3
    grid_cols: int = 3
    grid_cell_px: int = 8
    use_grid: bool = True
    use_patches: bool = False
    patch_grid: int = 4
    patch_px: int = 8
    coarse_layers: int = 1
    pretrained_path: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.hidden % self.heads:
            raise ValueError("hidden must be divisible by heads")
        if self.context_budget < 8:
            raise ValueError("max_len leaves no room for context tokens")

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.grid_rows, self.grid_cols)

    @property
    def sentence_dim(self) -> int:
        return self.hidden

    @property
    def context_budget(self) -> int:
        return self.max_len - self.max_question_tokens - self.max_prior_tokens - 4

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------- backbones


class TinyBackbone(nn.Module):
    """Randomly initialised transformer encoder; the test and desk-scale backbone."""

    def __init__(self, cfg: WarmerConfig):
        super().__init__()
        self.hidden = cfg.hidden
        self.word = nn.Embedding(cfg.vocab_size, cfg.hidden, padding_idx=PAD)
        self.pos = nn.Embedding(cfg.max_len, cfg.hidden)
        layer = nn.TransformerEncoderLayer(cfg.hidden, cfg.heads, cfg.ff, cfg.dropout, batch_first=True)
        self.encoder = nn.TransformerEncoder(layer, cfg.layers, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(cfg.hidden)

    def embed_tokens(self, ids: torch.Tensor) -> torch.Tensor:
        return self.word(ids)

    def forward(self, text: torch.Tensor, extra: torch.Tensor, mask: torch.Tensor, bbox=None, pixel_values=None):
        lt = text.shape[1]
        pos = self.pos(torch.arange(lt, device=text.device))
        x = self.norm(torch.cat([text + pos, extra], dim=1))
        return self.encoder(x, src_key_padding_mask=~mask)


class _HFBackbone(nn.Module):
    """Wraps a HuggingFace encoder fed through ``inputs_embeds``."""

    uses_bbox = False
    # some encoders read input_ids for shapes even when given embeddings
    needs_shape_ids = False

    def __init__(self, cfg: WarmerConfig):
        super().__init__()
        self.model = self._build(cfg)
        self.hidden = self.model.config.hidden_size
        if self.hidden != cfg.hidden:
            raise ValueError(f"{cfg.backbone} hidden size {self.hidden} != configured {cfg.hidden}")

    def _build(self, cfg):
        raise NotImplementedError

    def embed_tokens(self, ids):
        return self.model.get_input_embeddings()(ids)

    def forward(self, text, extra, mask, bbox=None, pixel_values=None):
        x = torch.cat([text, extra], dim=1)
        kwargs = {"inputs_embeds": x, "attention_mask": mask.long()}
        if self.needs_shape_ids:
            # non-pad placeholder ids; the embeddings themselves come from inputs_embeds
            kwargs["input_ids"] = mask.long()
        if self.uses_bbox:
            full = torch.zeros(x.shape[0], x.shape[1], 4, dtype=torch.long, device=x.device)
            full[:, : bbox.shape[1]] = (bbox * 1000).round().long().clamp(0, 1000)
            kwargs["bbox"] = full
        if pixel_values is not None:
            kwargs["pixel_values"] = pixel_values
        out = self.model(**kwargs).last_hidden_state
        return out[:, : x.shape[1]]


class RobertaBackbone(_HFBackbone):
    def _build(self, cfg):
        from transformers import RobertaConfig, RobertaModel

        if cfg.pretrained_path:
            return RobertaModel.from_pretrained(cfg.pretrained_path, add_pooling_layer=False)
        conf = RobertaConfig(vocab_size=cfg.vocab_size, hidden_size=cfg.hidden, num_hidden_layers=cfg.layers,
                             num_attention_heads=cfg.heads, intermediate_size=cfg.ff,
                             max_position_embeddings=cfg.max_len + 64, hidden_dropout_prob=cfg.dropout,
                             attention_probs_dropout_prob=cfg.dropout, pad_token_id=PAD)
        return RobertaModel(conf, add_pooling_layer=False)


class LiltBackbone(_HFBackbone):
    uses_bbox = True

    def _build(self, cfg):
        from transformers import LiltConfig, LiltModel

        if cfg.pretrained_path:
            return LiltModel.from_pretrained(cfg.pretrained_path, add_pooling_layer=False)
        if cfg.hidden % 6:
            raise ValueError("lilt splits hidden into six box embeddings; hidden must be divisible by 6")
        conf = LiltConfig(vocab_size=cfg.vocab_size, hidden_size=cfg.hidden, num_hidden_layers=cfg.layers,
                          num_attention_heads=cfg.heads, intermediate_size=cfg.ff,
                          max_position_embeddings=cfg.max_len + 64, hidden_dropout_prob=cfg.dropout,
                          attention_probs_dropout_prob=cfg.dropout, channel_shrink_ratio=1, pad_token_id=PAD)
        return LiltModel(conf, add_pooling_layer=False)


class LayoutLMv3Backbone(_HFBackbone):
    uses_bbox = True
    needs_shape_ids = True

    def _build(self, cfg):
        from transformers import LayoutLMv3Config, LayoutLMv3Model

        if cfg.pretrained_path:
            return LayoutLMv3Model.from_pretrained(cfg.pretrained_path)
        # 4 coordinate + 2 shape embeddings must add up to hidden
        coord = cfg.hidden // 6
        conf = LayoutLMv3Config(vocab_size=cfg.vocab_size, hidden_size=cfg.hidden, num_hidden_layers=cfg.layers,
                                num_attention_heads=cfg.heads, intermediate_size=cfg.ff,
                                max_position_embeddings=cfg.max_len + 64, hidden_dropout_prob=cfg.dropout,
                                attention_probs_dropout_prob=cfg.dropout, pad_token_id=PAD,
                                input_size=cfg.patch_grid * cfg.patch_px, patch_size=cfg.patch_px,
                                num_channels=3, visual_embed=False,
                                coordinate_size=coord, shape_size=(cfg.hidden - 4 * coord) // 2)
        return LayoutLMv3Model(conf)


def make_backbone(cfg: WarmerConfig) -> nn.Module:
    return {"tiny": TinyBackbone, "roberta": RobertaBackbone, "lilt": LiltBackbone,
            "layoutlmv3": LayoutLMv3Backbone}[cfg.backbone](cfg)


# ---------------------------------------------------------------- examples and batches


@dataclass
class WarmerExample:
    """One (document window, question) pair; gold fields are -1 when absent."""

    doc: DocFeatures
    question: str
    prior: str | None = None
    window: tuple[int, int] = (0, 0)
    gold_entity: int = -1      # entity id in the document
    gold_grid: int = -1
    answer: str | None = None  # for span labelling


def make_windows(n_ctx: int, budget: int) -> list[tuple[int, int]]:
    """Overlapping context windows with stride budget // 2; the last is end-aligned."""
    if n_ctx <= budget:
        return [(0, n_ctx)]
    stride = max(budget // 2, 1)
    out, start = [], 0
    while True:
        if start + budget >= n_ctx:
            out.append((n_ctx - budget, n_ctx))
            return out
        out.append((start, start + budget))
        start += stride


def find_span(tokens: Sequence[str], answer_tokens: Sequence[str]) -> tuple[int, int] | None:
    """First exact occurrence of ``answer_tokens`` in ``tokens`` (inclusive end)."""
    n = len(answer_tokens)
    if n == 0:
        return None
    for i in range(len(tokens) - n + 1):
        if list(tokens[i:i + n]) == list(answer_tokens):
            return i, i + n - 1
    return None


@dataclass
class EncodedFeatures:
    tokens: torch.Tensor        # (B, Lt, d) text positions: T_q, T_a and T_c by mask
    grid: torch.Tensor | None   # (B, J, d)
    patches: torch.Tensor | None
    q_vec: torch.Tensor         # (B, d)
    a_vec: torch.Tensor         # (B, d), zeros without a prior answer


@dataclass
class HeadOutputs:
    entity_logits: torch.Tensor | None = None   # (B, E), -inf on padding
    entity_mask: torch.Tensor | None = None
    start_logits: torch.Tensor | None = None    # (B, Lt), -inf outside the context
    end_logits: torch.Tensor | None = None
    context_mask: torch.Tensor | None = None
    grid_logits: torch.Tensor | None = None     # (B, J)
    entity_features: torch.Tensor | None = None


_NEG = float("-inf")


class Warmer(nn.Module):
    def __init__(self, cfg: WarmerConfig | None = None):
        super().__init__()
        cfg = cfg or WarmerConfig()
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        d, ds, dv = cfg.hidden, cfg.sentence_dim, cfg.visual_dim
        self.tokenizer = HashTokenizer(cfg.vocab_size)
        self.sentence_encoder = SentenceEncoder(ds)
        self.visual_encoder = VisualEncoder(dv)

        self.backbone = make_backbone(cfg)
        self.segment = nn.Embedding(5, d)
        self.coords = nn.Linear(4, ds)
        self.grid_proj = nn.Linear(cfg.grid_cell_px ** 2, d)
        self.grid_pos = nn.Embedding(cfg.grid.size, d)
        self.patch_proj = nn.Linear(cfg.patch_px ** 2, d)
        self.patch_pos = nn.Embedding(cfg.patch_grid ** 2, d)

        self.span_head = nn.Linear(d, 2)

        fused = d + dv + ds
        self.entity_in = nn.Linear(fused, d)
        layer = nn.TransformerEncoderLayer(d, cfg.heads, 2 * d, cfg.dropout, batch_first=True)
        self.entity_encoder = nn.TransformerEncoder(layer, cfg.coarse_layers, enable_nested_tensor=False)
        self.entity_query = nn.Linear(2 * d + ds, d)
        self.entity_key = nn.Linear(d + fused, d)
        # direct cosine match between the prior answer and each entity's sentence feature
        self.prior_gain = nn.Parameter(torch.tensor(2.0))

        self.grid_query = nn.Linear(d, d)
        self.grid_key = nn.Linear(d, d)

    # -------------------------------------------------------------- head groups

    def head_parameters(self, name: str) -> list[nn.Parameter]:
        mods = {
            "grid": [self.grid_query, self.grid_key, self.grid_proj, self.grid_pos],
            "span": [self.span_head],
            "entity": [self.entity_in, self.entity_encoder, self.entity_query, self.entity_key],
        }[name]
        params = [p for m in mods for p in m.parameters()]
        return params + [self.prior_gain] if name == "entity" else params

    def backbone_parameters(self) -> list[nn.Parameter]:
        mods = [self.backbone, self.segment, self.coords, self.patch_proj, self.patch_pos]
        return [p for m in mods for p in m.parameters()]

    # -------------------------------------------------------------- features

    def document_features(self, es: EntitySet) -> DocFeatures:
        cfg = self.cfg
        patches = (cfg.patch_grid, cfg.patch_px) if cfg.use_patches else None
        return build_doc_features(es, self.tokenizer, self.sentence_encoder, self.visual_encoder,
                                  cfg.grid, cfg.grid_cell_px, patches)

    def windows(self, doc: DocFeatures) -> list[tuple[int, int]]:
        return make_windows(len(doc.ctx_ids), self.cfg.context_budget)

    def project_coords(self, bbox) -> torch.Tensor:
        """Learned affine map of (x_min, y_min, x_max, y_max) / 1000 to sentence width."""
        b = torch.as_tensor(bbox, dtype=self.coords.weight.dtype)
        return self.coords(b)

    def build_grid_embeddings(self, cell_pixels) -> torch.Tensor:
        """Project flattened cell pixels, shape (..., J, cell_px**2), to backbone width."""
        x = torch.as_tensor(cell_pixels, dtype=self.grid_proj.weight.dtype)
        return self.grid_proj(x)

    # -------------------------------------------------------------- batching

    def collate(self, examples: Sequence[WarmerExample]) -> dict:
        cfg, tok = self.cfg, self.tokenizer
        dtype = self.coords.weight.dtype
        rows = []
        for ex in examples:
            q = tok.encode(ex.question)[: cfg.max_question_tokens]
            a = tok.encode(ex.prior)[: cfg.max_prior_tokens] if ex.prior else []
            w0, w1 = ex.window if ex.window != (0, 0) else (0, len(ex.doc.ctx_ids))
            ids = [CLS] + q + [SEP]
            seg = [SEG_Q] * len(ids)
            if a:
                ids += a + [SEP]
                seg += [SEG_A] * (len(a) + 1)
            c0 = len(ids)
            ids += ex.doc.ctx_ids[w0:w1].tolist() + [SEP]
            seg += [SEG_C] * (w1 - w0) + [SEG_C]
            ents = sorted(set(ex.doc.ctx_entity[w0:w1].tolist()))
            gold_ent = ents.index(ex.gold_entity) if ex.gold_entity in ents else -1
            span = None
            if ex.answer:
                span = find_span(ex.doc.token_text[w0:w1], tok.tokenize(ex.answer))
            rows.append(dict(ids=ids, seg=seg, q_len=len(q) + 1, a_span=(len(q) + 2, len(q) + 2 + len(a)),
                             c0=c0, w=(w0, w1), ents=ents, gold_ent=gold_ent, span=span, ex=ex))

        B = len(rows)
        Lt = max(len(r["ids"]) for r in rows)
        E = max(max(len(r["ents"]) for r in rows), 1)
        d_s, d_v = cfg.sentence_dim, cfg.visual_dim
        ids = torch.zeros(B, Lt, dtype=torch.long)
        seg = torch.zeros(B, Lt, dtype=torch.long)
        bbox = torch.zeros(B, Lt, 4, dtype=dtype)
        tmask = torch.zeros(B, Lt, dtype=torch.bool)
        qmask = torch.zeros(B, Lt, dtype=dtype)
        amask = torch.zeros(B, Lt, dtype=dtype)
        cmask = torch.zeros(B, Lt, dtype=torch.bool)
        pool = torch.zeros(B, E, Lt, dtype=dtype)
        emask = torch.zeros(B, E, dtype=torch.bool)
        ent_ids = torch.full((B, E), -1, dtype=torch.long)
        vis = torch.zeros(B, E, d_v, dtype=dtype)
        sent = torch.zeros(B, E, d_s, dtype=dtype)
        s_a = torch.zeros(B, d_s, dtype=dtype)
        J = cfg.grid.size
        grid = torch.zeros(B, J, cfg.grid_cell_px ** 2, dtype=dtype)
        patches = torch.zeros(B, cfg.patch_grid ** 2, cfg.patch_px ** 2, dtype=dtype) if cfg.use_patches else None
        gold_grid = torch.full((B,), -1, dtype=torch.long)
        gold_ent = torch.full((B,), -1, dtype=torch.long)
        gold_start = torch.full((B,), -1, dtype=torch.long)
        gold_end = torch.full((B,), -1, dtype=torch.long)

        for b, r in enumerate(rows):
            ex, n = r["ex"], len(r["ids"])
            w0, w1 = r["w"]
            c0 = r["c0"]
            ids[b, :n] = torch.tensor(r["ids"])
            seg[b, :n] = torch.tensor(r["seg"])
            tmask[b, :n] = True
            qmask[b, : r["q_len"]] = 1.0
            a0, a1 = r["a_span"]
            if a1 > a0:
                amask[b, a0:a1] = 1.0
                s_a[b] = torch.as_tensor(self.sentence_encoder(ex.prior), dtype=dtype)
            cmask[b, c0:c0 + (w1 - w0)] = True
            bbox[b, c0:c0 + (w1 - w0)] = torch.as_tensor(ex.doc.ctx_bbox[w0:w1], dtype=dtype)
            owners = ex.doc.ctx_entity[w0:w1]
            for k, e_id in enumerate(r["ents"]):
                pos = np.nonzero(owners == e_id)[0] + c0
                pool[b, k, torch.as_tensor(pos)] = 1.0 / len(pos)
                emask[b, k] = True
                ent_ids[b, k] = e_id
                vis[b, k] = torch.as_tensor(ex.doc.vis[e_id], dtype=dtype)
                sent[b, k] = torch.as_tensor(ex.doc.sent[e_id], dtype=dtype)
            grid[b] = torch.as_tensor(ex.doc.grid, dtype=dtype)
            if patches is not None and ex.doc.patches is not None:
                patches[b] = torch.as_tensor(ex.doc.patches, dtype=dtype)
            gold_grid[b] = ex.gold_grid
            gold_ent[b] = r["gold_ent"]
            if r["span"] is not None:
                gold_start[b] = c0 + r["span"][0]
                gold_end[b] = c0 + r["span"][1]

        return dict(ids=ids, seg=seg, bbox=bbox, tmask=tmask, qmask=qmask, amask=amask, cmask=cmask,
                    pool=pool, emask=emask, ent_ids=ent_ids, vis=vis, sent=sent, s_a=s_a, grid=grid,
                    patches=patches, gold_grid=gold_grid, gold_ent=gold_ent, gold_start=gold_start,
                    gold_end=gold_end)

    # -------------------------------------------------------------- forward

    def encode(self, batch: dict) -> EncodedFeatures:
        cfg = self.cfg
        text = self.backbone.embed_tokens(batch["ids"]) + self.segment(batch["seg"])
        text = text + self.coords(batch["bbox"]) * batch["cmask"].unsqueeze(-1).to(text.dtype)
        B = text.shape[0]
        extra, masks = [], [batch["tmask"]]
        if cfg.use_grid:
            J = cfg.grid.size
            g = self.build_grid_embeddings(batch["grid"]) + self.grid_pos.weight + self.segment.weight[SEG_GRID]
            extra.append(g)
            masks.append(torch.ones(B, J, dtype=torch.bool))
        if cfg.use_patches and batch.get("patches") is not None:
            P = cfg.patch_grid ** 2
            p = self.patch_proj(batch["patches"]) + self.patch_pos.weight + self.segment.weight[SEG_PATCH]
            extra.append(p)
            masks.append(torch.ones(B, P, dtype=torch.bool))
        extra_t = torch.cat(extra, dim=1) if extra else text.new_zeros(B, 0, text.shape[-1])
        hidden = self.backbone(text, extra_t, torch.cat(masks, dim=1), bbox=batch["bbox"])
        lt = text.shape[1]
        tokens = hidden[:, :lt]
        off = lt
        grid = patches = None
        if cfg.use_grid:
            grid = hidden[:, off:off + cfg.grid.size]
            off += cfg.grid.size
        if cfg.use_patches and batch.get("patches") is not None:
            patches = hidden[:, off:]
        qm, am = batch["qmask"].unsqueeze(-1), batch["amask"].unsqueeze(-1)
        q_vec = (tokens * qm).sum(1) / qm.sum(1).clamp_min(1.0)
        a_vec = (tokens * am).sum(1) / am.sum(1).clamp_min(1.0)
        return EncodedFeatures(tokens, grid, patches, q_vec, a_vec)

    def pool_and_fuse(self, enc: EncodedFeatures, batch: dict) -> torch.Tensor:
        """(B, E, d + dv + ds): mean-pooled token features, visual, sentence."""
        pooled = torch.bmm(batch["pool"], enc.tokens)
        return torch.cat([pooled, batch["vis"], batch["sent"]], dim=-1)

    def forward_heads(self, enc: EncodedFeatures, entities: torch.Tensor | None, batch: dict,
                      modes: Sequence[str] = ("retrieve", "span", "grid")) -> HeadOutputs:
        out = HeadOutputs()
        d = self.cfg.hidden
        if "retrieve" in modes:
            emask = batch["emask"]
            if entities is None or not bool(emask.any(dim=1).all()):
                raise ValueError("retrieve mode needs a non-empty entity set for every example")
            h = self.entity_encoder(self.entity_in(entities), src_key_padding_mask=~emask)
            query = self.entity_query(torch.cat([enc.q_vec, enc.a_vec, batch["s_a"]], dim=-1))
            keys = self.entity_key(torch.cat([h, entities], dim=-1))
            logits = torch.einsum("bed,bd->be", keys, query) / math.sqrt(d)
            logits = logits + self.prior_gain * torch.einsum("bes,bs->be", batch["sent"], batch["s_a"])
            out.entity_logits = logits.masked_fill(~emask, _NEG)
            out.entity_mask = emask
            out.entity_features = entities
        if "span" in modes:
            se = self.span_head(enc.tokens)
            cm = batch["cmask"]
            out.start_logits = se[..., 0].masked_fill(~cm, _NEG)
            out.end_logits = se[..., 1].masked_fill(~cm, _NEG)
            out.context_mask = cm
        if "grid" in modes:
            if enc.grid is None:
                raise ValueError("grid head needs use_grid=True")
            gq = self.grid_query(enc.q_vec)
            gk = self.grid_key(enc.grid)
            out.grid_logits = torch.einsum("bjd,bd->bj", gk, gq) / math.sqrt(d)
        return out

    def forward(self, batch: dict, modes: Sequence[str] = ("retrieve", "span", "grid")) -> HeadOutputs:
        enc = self.encode(batch)
        ents = self.pool_and_fuse(enc, batch) if "retrieve" in modes else None
        return self.forward_heads(enc, ents, batch, modes)

    # -------------------------------------------------------------- inference helpers

    @torch.no_grad()
    def entity_scores(self, doc: DocFeatures, question: str, prior: str | None = None) -> np.ndarray:
        """Entity logits merged over windows by max; entities never seen stay -inf."""
        scores = np.full(doc.n_entities, -np.inf)
        if not doc.n_entities:
            return scores
        was = self.training
        self.eval()
        exs = [WarmerExample(doc, question, prior, w) for w in self.windows(doc)]
        out = self.forward(self.collate(exs), modes=("retrieve",))
        logits = out.entity_logits.double().numpy()
        batch_ids = [sorted(set(doc.ctx_entity[w0:w1].tolist())) for (w0, w1) in (e.window for e in exs)]
        for row, ents in zip(logits, batch_ids):
            for k, e_id in enumerate(ents):
                scores[e_id] = max(scores[e_id], row[k])
        self.train(was)
        return scores

    @torch.no_grad()
    def grid_scores(self, doc: DocFeatures, question: str) -> np.ndarray:
        was = self.training
        self.eval()
        ex = WarmerExample(doc, question, None, self.windows(doc)[0])
        out = self.forward(self.collate([ex]), modes=("grid",))
        self.train(was)
        return out.grid_logits[0].double().numpy()

    # -------------------------------------------------------------- checkpoints

    def save(self, path, extra: dict | None = None) -> None:
        torch.save({"config": asdict(self.cfg), "config_hash": self.cfg.digest(),
                    "state_dict": self.state_dict(), "extra": extra or {}}, path)

    @classmethod
    def load(cls, path, expected_hash: str | None = None) -> "Warmer":
        blob = torch.load(path, map_location="cpu", weights_only=False)
        cfg = WarmerConfig(**blob["config"])
        if cfg.digest() != blob["config_hash"]:
            raise ValueError(f"checkpoint {path}: stored config hash does not match its config")
        if expected_hash is not None and blob["config_hash"] != expected_hash:
            raise ValueError(f"checkpoint {path}: config hash {blob['config_hash']} != expected {expected_hash}")
        model = cls(cfg)
        model.load_state_dict(blob["state_dict"])
        model.checkpoint_extra = blob.get("extra", {})
        return model


def argmax_lowest(x) -> int:
    """Argmax with ties going to the lowest index."""
    arr = np.asarray(x)
    return int(np.flatnonzero(arr == arr.max())[0])
