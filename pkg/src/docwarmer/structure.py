"""Normalize OCR / PDF-parser output into canonical entity sets.

Coordinates live on an integer 0-1000 scale per axis. Reading order is
top-to-bottom by 10-unit rows of the box centre, then left-to-right.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np

from .jsonl import read_lines, write_lines
from .kernels import grid_indices

SCALE = 1000
ROW_BUCKET = 10

VERTICAL = ("top", "middle", "bottom")
HORIZONTAL = ("left", "middle", "right")


class ParseError(ValueError):
    """Raised for a malformed OCR/PDF record."""


@dataclass(frozen=True, order=True)
class BBox:
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if any(not 0 <= v <= SCALE for v in vals):
            raise ValueError(f"bbox outside [0, {SCALE}]: {vals}")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"inverted bbox: {vals}")

    @property
    def center(self) -> tuple[float, float]:
        return (self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2

    def as_list(self) -> list[int]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass(frozen=True)
class TextLineEntity:
    id: int
    bbox: BBox
    content: str
    source: str = "ocr"
    kind: str | None = None  # PDF block kind; kept for provenance only

    def to_dict(self) -> dict[str, Any]:
        d = {"id": self.id, "bbox": self.bbox.as_list(), "content": self.content, "source": self.source}
        if self.kind is not None:
            d["kind"] = self.kind
        return d


@dataclass(frozen=True)
class EntitySet:
    doc_id: str
    page_size: tuple[int, int]
    entities: tuple[TextLineEntity, ...]
    image_path: str | None = None
    empty: bool = False

    def __len__(self) -> int:
        return len(self.entities)

    def __iter__(self):
        return iter(self.entities)

    def __getitem__(self, i: int) -> TextLineEntity:
        return self.entities[i]

    @property
    def text(self) -> str:
        """Document text context: entity contents in reading order, one per line."""
        return "\n".join(e.content for e in self.entities)

    def to_dict(self) -> dict[str, Any]:
        d = {
            "doc_id": self.doc_id,
            "page_size": list(self.page_size),
            "image_path": self.image_path,
            "entities": [e.to_dict() for e in self.entities],
        }
        if self.empty:
            d["empty"] = True
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EntitySet":
        ents = tuple(
            TextLineEntity(
                id=int(e["id"]),
                bbox=BBox(*map(int, e["bbox"])),
                content=e["content"],
                source=e.get("source", "ocr"),
                kind=e.get("kind"),
            )
            for e in d["entities"]
        )
        ids = [e.id for e in ents]
        if ids != list(range(len(ents))):
            raise ParseError(f"{d.get('doc_id')}: entity ids must be 0..n-1 in order, got {ids[:10]}")
        return cls(
            doc_id=str(d["doc_id"]),
            page_size=tuple(int(v) for v in d["page_size"]),
            entities=ents,
            image_path=d.get("image_path"),
            empty=bool(d.get("empty", False)),
        )


@dataclass(frozen=True)
class GridSpec:
    rows: int = 3
    cols: int = 3

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def cell_boxes(self, page_size: tuple[int, int]) -> list[tuple[int, int, int, int]]:
        """Pixel rectangles (x0, y0, x1, y1), half-open, tiling the page row-major."""
        w, h = page_size
        xs = [c * w // self.cols for c in range(self.cols + 1)]
        ys = [r * h // self.rows for r in range(self.rows + 1)]
        return [(xs[c], ys[r], xs[c + 1], ys[r + 1]) for r in range(self.rows) for c in range(self.cols)]

    def index_of_point(self, x: float, y: float) -> int:
        """Cell of a normalized page point; boundary points go to the lower cell."""
        c = min(max(math.ceil(x * self.cols / SCALE) - 1, 0), self.cols - 1)
        r = min(max(math.ceil(y * self.rows / SCALE) - 1, 0), self.rows - 1)
        return r * self.cols + c


@dataclass(frozen=True)
class RegionLabel:
    vertical: str
    horizontal: str

    def __post_init__(self):
        if self.vertical not in VERTICAL or self.horizontal not in HORIZONTAL:
            raise ValueError(f"invalid region ({self.vertical}, {self.horizontal})")

    @property
    def index(self) -> int:
        return VERTICAL.index(self.vertical) * 3 + HORIZONTAL.index(self.horizontal)

    def __str__(self) -> str:
        return f"{self.vertical}-{self.horizontal}"

    @classmethod
    def parse(cls, s: str) -> "RegionLabel":
        v, h = s.split("-")
        return cls(v, h)


# ---------------------------------------------------------------- geometry


def grid_index_of(bbox: BBox, spec: GridSpec = GridSpec()) -> int:
    return int(grid_indices([bbox.as_list()], spec.rows, spec.cols)[0])


def assign_region(bbox: BBox) -> RegionLabel:
    idx = grid_index_of(bbox, GridSpec(3, 3))
    return RegionLabel(VERTICAL[idx // 3], HORIZONTAL[idx % 3])


def to_pixels(bbox: BBox, page_size: tuple[int, int]) -> tuple[int, int, int, int]:
    w, h = page_size
    return (
        bbox.x_min * w // SCALE,
        bbox.y_min * h // SCALE,
        -(-bbox.x_max * w // SCALE),
        -(-bbox.y_max * h // SCALE),
    )


# ---------------------------------------------------------------- normalization


def clean_text(text: str) -> str:
    return " ".join(str(text).split())


def _round(v: float) -> int:
    return int(math.floor(v + 0.5))


def _scale_box(x0, y0, x1, y1, width, height) -> BBox:
    vals = [
        _round(x0 * SCALE / width),
        _round(y0 * SCALE / height),
        _round(x1 * SCALE / width),
        _round(y1 * SCALE / height),
    ]
    vals = [min(max(v, 0), SCALE) for v in vals]
    x0, y0, x1, y1 = vals
    x0, x1 = min(x0, x1), max(x0, x1)
    y0, y1 = min(y0, y1), max(y0, y1)
    # thin rules come out zero-area; widen instead of rejecting
    if x0 == x1:
        x0, x1 = (x0, x0 + 1) if x0 < SCALE else (x0 - 1, x0)
    if y0 == y1:
        y0, y1 = (y0, y0 + 1) if y0 < SCALE else (y0 - 1, y0)
    return BBox(x0, y0, x1, y1)


def reading_order_key(bbox: BBox, content: str = ""):
    cy2 = bbox.y_min + bbox.y_max
    return (cy2 // (2 * ROW_BUCKET), bbox.x_min, bbox.y_min, bbox.x_max, bbox.y_max, content)


def _assemble(doc_id, page_size, items, image_path) -> EntitySet:
    """items: (bbox, content, kind, source) tuples in any order."""
    items = sorted(items, key=lambda it: reading_order_key(it[0], it[1]))
    ents = tuple(
        TextLineEntity(id=i, bbox=b, content=c, source=src, kind=k)
        for i, (b, c, k, src) in enumerate(items)
    )
    return EntitySet(doc_id, tuple(page_size), ents, image_path, empty=not ents)


def _page_size(record, default=None) -> tuple[float, float]:
    size = record.get("page_size", default)
    if size is None:
        size = (record.get("width"), record.get("height"))
    try:
        w, h = float(size[0]), float(size[1])
    except (TypeError, ValueError, IndexError) as exc:
        raise ParseError(f"{record.get('doc_id')}: missing or invalid page_size") from exc
    if w <= 0 or h <= 0:
        raise ParseError(f"{record.get('doc_id')}: page_size must be positive, got {size}")
    return w, h


def _rect_from_line(line: dict, idx: int) -> tuple[float, float, float, float]:
    if "rect" in line or "bbox" in line:
        rect = line.get("rect", line.get("bbox"))
        try:
            x0, y0, x1, y1 = (float(v) for v in rect)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"line {idx}: rect must have four numbers, got {rect!r}") from exc
        return x0, y0, x1, y1
    if "polygon" in line:
        poly = np.asarray(line["polygon"], dtype=float)
        if poly.ndim == 1:
            if poly.size % 2:
                raise ParseError(f"line {idx}: flat polygon has odd length {poly.size}")
            poly = poly.reshape(-1, 2)
        if poly.ndim != 2 or poly.shape[1] != 2 or poly.shape[0] < 2:
            raise ParseError(f"line {idx}: polygon must be a list of (x, y) points")
        return poly[:, 0].min(), poly[:, 1].min(), poly[:, 0].max(), poly[:, 1].max()
    raise ParseError(f"line {idx}: needs 'rect' or 'polygon'")


def normalize_ocr(raw: dict[str, Any]) -> EntitySet:
    """OCR record ``{doc_id, page_size, image_path?, lines: [{rect|polygon, text, confidence?}]}``."""
    if not isinstance(raw, dict) or "lines" not in raw:
        raise ParseError("OCR record needs a 'lines' list")
    width, height = _page_size(raw)
    items = []
    for idx, line in enumerate(raw["lines"]):
        if not isinstance(line, dict):
            raise ParseError(f"line {idx}: expected an object, got {type(line).__name__}")
        if "text" not in line:
            raise ParseError(f"line {idx}: missing 'text'")
        text = clean_text(line["text"])
        x0, y0, x1, y1 = _rect_from_line(line, idx)
        if not all(map(math.isfinite, (x0, y0, x1, y1))):
            raise ParseError(f"line {idx}: non-finite coordinates")
        if not text:
            continue
        items.append((_scale_box(x0, y0, x1, y1, width, height), text, None, "ocr"))
    return _assemble(str(raw.get("doc_id", "")), (int(width), int(height)), items, raw.get("image_path"))


def normalize_pdf(parsed: dict[str, Any]) -> EntitySet:
    """PDF record ``{doc_id, page_size (pt), origin?, spans: [{bbox, text, kind?}]}``.

    ``origin`` defaults to ``bottom-left`` (PDF user space); y is flipped to
    top-down before scaling.
    """
    if not isinstance(parsed, dict) or "spans" not in parsed:
        raise ParseError("PDF record needs a 'spans' list")
    width, height = _page_size(parsed)
    flip = parsed.get("origin", "bottom-left") == "bottom-left"
    items = []
    for idx, span in enumerate(parsed["spans"]):
        if not isinstance(span, dict) or "bbox" not in span or "text" not in span:
            raise ParseError(f"span {idx}: needs 'bbox' and 'text'")
        try:
            x0, y0, x1, y1 = (float(v) for v in span["bbox"])
        except (TypeError, ValueError) as exc:
            raise ParseError(f"span {idx}: bbox must have four numbers") from exc
        if flip:
            y0, y1 = height - y1, height - y0
        text = clean_text(span["text"])
        if not text:
            continue
        items.append((_scale_box(x0, y0, x1, y1, width, height), text, span.get("kind"), "pdf"))
    return _assemble(str(parsed.get("doc_id", "")), (int(width), int(height)), items, parsed.get("image_path"))


def renormalize(es: EntitySet) -> EntitySet:
    """Re-apply text cleaning and ordering to an existing entity set (identity on canonical input)."""
    items = [(e.bbox, clean_text(e.content), e.kind, e.source) for e in es.entities if clean_text(e.content)]
    return _assemble(es.doc_id, es.page_size, items, es.image_path)


# ---------------------------------------------------------------- JSONL I/O


def write_jsonl(sets: Iterable[EntitySet], path, meta: dict | None = None) -> int:
    return write_lines(path, (es.to_dict() for es in sets), meta)


def read_jsonl(path) -> list[EntitySet]:
    return [EntitySet.from_dict(d) for d in read_lines(path)]


def index_by_doc(sets: Sequence[EntitySet]) -> dict[str, EntitySet]:
    return {es.doc_id: es for es in sets}
