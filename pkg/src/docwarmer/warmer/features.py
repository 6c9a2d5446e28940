"""Fixed (non-trained) feature extractors and per-document feature caches.

The sentence and visual encoders stand in for pretrained encoders: both are
deterministic random projections of hashed character n-grams / box-filtered
crops, seeded once so every process computes identical features.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from ..kernels import area_resize
from ..structure import BBox, EntitySet, GridSpec, to_pixels
from .tokenizer import HashTokenizer

MIN_CROP_PX = 4


class SentenceEncoder:
    """Case-sensitive bag of character trigrams and words, projected to ``dim``."""

    def __init__(self, dim: int = 64, n_buckets: int = 8192, seed: int = 13):
        self.dim = dim
        self.n_buckets = n_buckets
        rng = np.random.default_rng(seed)
        self._table = rng.standard_normal((n_buckets, dim)).astype(np.float32)

    def features(self, text: str) -> list[str]:
        padded = f"\x02{text}\x03"
        grams = [padded[i:i + 3] for i in range(max(len(padded) - 2, 1))]
        return grams + [f"w:{w}" for w in text.split()]

    def __call__(self, text: str) -> np.ndarray:
        if not text:
            return np.zeros(self.dim, dtype=np.float32)
        idx = [zlib.crc32(f.encode("utf-8")) % self.n_buckets for f in self.features(text)]
        vec = self._table[idx].sum(axis=0)
        norm = float(np.linalg.norm(vec))
        return (vec / norm).astype(np.float32) if norm > 0 else vec


class VisualEncoder:
    """Box-filtered grayscale crop projected to ``dim``; tiny crops give zeros."""

    def __init__(self, dim: int = 32, crop_px: int = 8, seed: int = 29):
        self.dim = dim
        self.crop_px = crop_px
        rng = np.random.default_rng(seed)
        self._proj = (rng.standard_normal((crop_px * crop_px, dim)) / crop_px).astype(np.float32)

    def __call__(self, page: np.ndarray, bbox: BBox) -> np.ndarray:
        h, w = page.shape
        x0, y0, x1, y1 = to_pixels(bbox, (w, h))
        x1, y1 = min(x1, w), min(y1, h)
        if x1 - x0 < MIN_CROP_PX or y1 - y0 < MIN_CROP_PX:
            return np.zeros(self.dim, dtype=np.float32)
        crop = area_resize(page[y0:y1, x0:x1], self.crop_px, self.crop_px)
        return (crop.reshape(-1).astype(np.float32) @ self._proj).astype(np.float32)


_DEFAULT_SENT: dict[int, SentenceEncoder] = {}
_DEFAULT_VIS: dict[int, VisualEncoder] = {}


def embed_sentence(content: str, dim: int = 64) -> np.ndarray:
    if dim not in _DEFAULT_SENT:
        _DEFAULT_SENT[dim] = SentenceEncoder(dim)
    return _DEFAULT_SENT[dim](content)


def embed_visual(page: np.ndarray, bbox: BBox, dim: int = 32) -> np.ndarray:
    if dim not in _DEFAULT_VIS:
        _DEFAULT_VIS[dim] = VisualEncoder(dim)
    return _DEFAULT_VIS[dim](page, bbox)


def load_page(image_path: str | None, page_size: tuple[int, int]) -> np.ndarray:
    """Ink map in [0, 1] (1 = black). A missing ``image_path`` yields a blank page."""
    if image_path is None:
        w, h = page_size
        return np.zeros((max(int(h), 1), max(int(w), 1)))
    from PIL import Image

    try:
        with Image.open(image_path) as im:
            gray = np.asarray(im.convert("L"), dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read page image {image_path!r}: {exc}") from exc
    return 1.0 - gray / 255.0


def grid_cell_pixels(page: np.ndarray, spec: GridSpec, cell_px: int = 8) -> np.ndarray:
    """(rows*cols, cell_px**2): each cell box-filtered to cell_px x cell_px and flattened."""
    h, w = page.shape
    out = np.zeros((spec.size, cell_px * cell_px), dtype=np.float32)
    for i, (x0, y0, x1, y1) in enumerate(spec.cell_boxes((w, h))):
        cell = page[y0:max(y1, y0 + 1), x0:max(x1, x0 + 1)]
        out[i] = area_resize(cell, cell_px, cell_px).reshape(-1)
    return out


def patch_pixels(page: np.ndarray, n: int = 4, px: int = 8) -> np.ndarray:
    """(n*n, px*px) non-overlapping patches of the page resized to n*px square."""
    img = area_resize(page, n * px, n * px)
    return img.reshape(n, px, n, px).transpose(0, 2, 1, 3).reshape(n * n, px * px).astype(np.float32)


@dataclass
class DocFeatures:
    doc_id: str
    ctx_ids: np.ndarray        # (n_ctx,) token ids of all entities in reading order
    ctx_entity: np.ndarray     # (n_ctx,) entity index of each token
    ctx_bbox: np.ndarray       # (n_ctx, 4) entity box / 1000
    sent: np.ndarray           # (n_ent, ds)
    vis: np.ndarray            # (n_ent, dv)
    grid: np.ndarray           # (rows*cols, cell_px**2)
    patches: np.ndarray | None
    contents: list[str]
    boxes: list[BBox]
    token_text: list[str]      # lower-cased token strings, for span labelling

    @property
    def n_entities(self) -> int:
        return len(self.contents)


def build_doc_features(es: EntitySet, tokenizer: HashTokenizer, sent_enc: SentenceEncoder,
                       vis_enc: VisualEncoder, grid: GridSpec, cell_px: int = 8,
                       patches: tuple[int, int] | None = None) -> DocFeatures:
    page = load_page(es.image_path, es.page_size)
    ids, owner, boxes, toks = [], [], [], []
    for i, ent in enumerate(es.entities):
        words = tokenizer.tokenize(ent.content)
        ids.extend(tokenizer.token_id(t) for t in words)
        toks.extend(words)
        owner.extend([i] * len(words))
        boxes.extend([[v / 1000.0 for v in ent.bbox.as_list()]] * len(words))
    dv, ds = vis_enc.dim, sent_enc.dim
    return DocFeatures(
        doc_id=es.doc_id,
        ctx_ids=np.asarray(ids, dtype=np.int64),
        ctx_entity=np.asarray(owner, dtype=np.int64),
        ctx_bbox=np.asarray(boxes, dtype=np.float32).reshape(-1, 4),
        sent=np.stack([sent_enc(e.content) for e in es.entities]) if len(es) else np.zeros((0, ds), np.float32),
        vis=np.stack([vis_enc(page, e.bbox) for e in es.entities]) if len(es) else np.zeros((0, dv), np.float32),
        grid=grid_cell_pixels(page, grid, cell_px),
        patches=patch_pixels(page, *patches) if patches else None,
        contents=[e.content for e in es.entities],
        boxes=[e.bbox for e in es.entities],
        token_text=toks,
    )
