"""Benchmark adapters and a synthetic template-form corpus for desk-scale runs.

Adapters turn key-value style annotations into a uniform gold QA schema
``{qid, doc_id, question, answer}``. The toy corpus renders small form pages
with PIL, writes OCR-style JSON for them and a scripted-backend file that
answers exactly the generation and verification prompts the pipeline sends.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Any, Iterable, Mapping

import numpy as np

from .jsonl import read_lines, write_lines
from .inquiry import consistent_state, meaningful_state, semantic_state, spatial_state
from .llm import PromptState, ScriptedBackend
from .structure import EntitySet, normalize_ocr

QUESTION_TEMPLATE = "What is the {key}?"
SPATIAL_TEMPLATE = "Where is the {key} located?"


@dataclass(frozen=True)
class GoldQA:
    qid: str
    doc_id: str
    question: str
    answer: str

    def to_dict(self) -> dict:
        return {"qid": self.qid, "doc_id": self.doc_id, "question": self.question, "answer": self.answer}


def kv_to_qa(doc_id: str, pairs: Mapping[str, str] | Iterable[tuple[str, str]],
             template: str = QUESTION_TEMPLATE) -> list[GoldQA]:
    """One question per key; keys keep their input order."""
    items = pairs.items() if isinstance(pairs, Mapping) else pairs
    out = []
    for i, (key, value) in enumerate(items):
        key, value = " ".join(str(key).split()), " ".join(str(value).split())
        if key and value:
            out.append(GoldQA(f"{doc_id}#{i}", doc_id, template.format(key=key), value))
    return out


def funsd_pairs(form: list[dict]) -> list[tuple[str, str]]:
    """FUNSD-style ``form`` entries linked question -> answer."""
    by_id = {e["id"]: e for e in form}
    pairs = []
    for ent in form:
        if ent.get("label") != "question":
            continue
        for a, b in ent.get("linking", []):
            other = by_id.get(b if a == ent["id"] else a)
            if other is not None and other.get("label") == "answer":
                pairs.append((ent["text"].rstrip(" :"), other["text"]))
    return pairs


def cord_pairs(valid_line: list[dict]) -> list[tuple[str, str]]:
    """CORD-style ``valid_line`` groups; the category becomes the key, first occurrence wins."""
    seen: dict[str, str] = {}
    for group in valid_line:
        key = group.get("category", "").replace(".", " ").replace("_", " ")
        text = " ".join(w.get("text", "") for w in group.get("words", []))
        if key and text.strip() and key not in seen:
            seen[key] = text
    return list(seen.items())


def write_golds(golds: Iterable[GoldQA], path) -> None:
    write_lines(path, (g.to_dict() for g in golds))


def read_golds(path) -> list[GoldQA]:
    return [GoldQA(**d) for d in read_lines(path)]


# ---------------------------------------------------------------- toy corpus

TOY_KEYS = ("Name", "Date", "Phone", "Invoice", "Total")
TOY_CELLS = (0, 2, 4, 6, 8)
NOISY_LAYOUTS = (TOY_CELLS, (8, 6, 4, 2, 0))
FILLER = ("Office use only", "Please print clearly", "Signature", "Page 1 of 1")
PAGE_W, PAGE_H = 600, 810
_SYLLABLES = ("ka", "lo", "mi", "ra", "ten", "vo", "su", "del", "an", "qui", "bor", "ex", "zu", "pel")


def _word(rng: np.random.Generator, n: int = 2) -> str:
    return "".join(_SYLLABLES[int(i)] for i in rng.integers(0, len(_SYLLABLES), n)).capitalize()


def _value(key: str, rng: np.random.Generator, plain: bool) -> str:
    if plain:
        return f"{_word(rng, 2)} {_word(rng, 3)}"
    if key == "Name":
        return f"{_word(rng, 2)} {_word(rng, 3)}"
    if key == "Date":
        return f"{rng.integers(1, 29):02d}/{rng.integers(1, 13):02d}/{rng.integers(1990, 2030)}"
    if key == "Phone":
        return f"{rng.integers(200, 999)}-{rng.integers(1000, 9999)}"
    if key == "Invoice":
        return f"INV-{rng.integers(10000, 99999)}"
    return f"${rng.integers(10, 999)}.{rng.integers(0, 100):02d}"


def _cell_origin(cell: int) -> tuple[int, int]:
    return (cell % 3) * PAGE_W // 3, (cell // 3) * PAGE_H // 3


def _render(lines: list[dict], path: str) -> None:
    from PIL import Image, ImageDraw, ImageFont

    im = Image.new("L", (PAGE_W, PAGE_H), 255)
    draw = ImageDraw.Draw(im)
    font = ImageFont.load_default()
    for ln in lines:
        draw.text((ln["rect"][0], ln["rect"][1]), ln["text"], fill=0, font=font)
    im.save(path)


def _text_width(text: str) -> int:
    return 6 * len(text) + 2


@dataclass
class ToyCorpus:
    root: str
    sets: list[EntitySet]
    golds: list[GoldQA]
    script_path: str
    ocr_dir: str
    values: dict[str, dict[str, str]]     # doc_id -> key -> value
    cells: dict[str, dict[str, int]]      # doc_id -> key -> grid cell of the value

    def gold_map(self) -> dict[tuple[str, str], str]:
        return {(g.doc_id, g.question): g.answer for g in self.golds}

    def distractors(self) -> dict[str, list[str]]:
        return {es.doc_id: [e.content for e in es.entities] for es in self.sets}


def toy_document(doc_id: str, rng: np.random.Generator, noisy: bool = False) -> tuple[dict, dict[str, str], dict[str, int]]:
    """OCR record of one template form, its key-value pairs and value cells.

    The clean variant fixes each key's cell and gives each key its own value
    format. The noisy variant shuffles the key-to-cell layout per document,
    draws every value from the same word pattern and jitters more.
    """
    cells = list(NOISY_LAYOUTS[int(rng.integers(0, len(NOISY_LAYOUTS)))] if noisy else TOY_CELLS)
    jitter = 40 if noisy else 12
    lines, values, value_cells = [], {}, {}
    title = f"ACME FORM {int(rng.integers(100, 999))}"
    lines.append({"rect": [250, 20, 250 + _text_width(title), 32], "text": title})
    for key, cell in zip(TOY_KEYS, cells):
        x0, y0 = _cell_origin(cell)
        x = x0 + 20 + int(rng.integers(0, jitter))
        y = y0 + 60 + int(rng.integers(0, jitter))
        value = _value(key, rng, plain=noisy)
        values[key] = value
        value_cells[key] = cell
        label = f"{key}:"
        lines.append({"rect": [x, y, x + _text_width(label), y + 12], "text": label})
        lines.append({"rect": [x, y + 20, x + _text_width(value), y + 32], "text": value})
    for text, cell in zip(FILLER, (1, 3, 5, 7)):
        x0, y0 = _cell_origin(cell)
        x, y = x0 + 30 + int(rng.integers(0, jitter)), y0 + 140 + int(rng.integers(0, jitter))
        lines.append({"rect": [x, y, x + _text_width(text), y + 12], "text": text})
    record = {"doc_id": doc_id, "page_size": [PAGE_W, PAGE_H], "lines": lines}
    return record, values, value_cells


def make_toy_corpus(root: str, n_docs: int = 50, seed: int = 0, noisy: bool = False,
                    prefix: str = "toy") -> ToyCorpus:
    """Write ``ocr/*.json``, ``images/*.png``, ``golds.jsonl`` and ``mock_script.json`` under ``root``."""
    rng = np.random.default_rng(seed)
    ocr_dir, img_dir = os.path.join(root, "ocr"), os.path.join(root, "images")
    os.makedirs(ocr_dir, exist_ok=True)
    os.makedirs(img_dir, exist_ok=True)
    script = ScriptedBackend({}, echo_tips_on_miss=True)
    sets, golds, values, cells = [], [], {}, {}
    for i in range(n_docs):
        doc_id = f"{prefix}{i:03d}"
        record, kv, kc = toy_document(doc_id, rng, noisy)
        img_path = os.path.join(img_dir, f"{doc_id}.png")
        _render(record["lines"], img_path)
        record["image_path"] = img_path
        with open(os.path.join(ocr_dir, f"{doc_id}.json"), "w", encoding="utf-8") as fh:
            json.dump(record, fh, indent=1)
        es = normalize_ocr(record)
        sets.append(es)
        values[doc_id], cells[doc_id] = kv, kc
        golds.extend(kv_to_qa(doc_id, kv))
        _script_document(script, es, kv, rng)
    script_path = os.path.join(root, "mock_script.json")
    script.to_file(script_path)
    write_golds(golds, os.path.join(root, "golds.jsonl"))
    return ToyCorpus(root, sets, golds, script_path, ocr_dir, values, cells)


def _script_document(script: ScriptedBackend, es: EntitySet, kv: Mapping[str, str],
                     rng: np.random.Generator, doc_type: str = "form", p_correct: float = 0.5) -> None:
    """Scripted replies for every entity the generator could sample.

    Also scripts the plain (no-hint) answer to each key question: correct with
    probability ``p_correct``, otherwise another line of the same page.
    """
    by_value = {v: k for k, v in kv.items()}
    others = [e.content for e in es.entities]
    for key, value in kv.items():
        q = QUESTION_TEMPLATE.format(key=key)
        wrong = [c for c in others if c != value]
        reply = value if rng.random() < p_correct else wrong[int(rng.integers(0, len(wrong)))]
        for template in ("no_tips", "bbox_no_tips"):
            script.add(PromptState(template, {"context": es.text, "target": doc_type, "question": q},
                                   es.image_path, doc_id=es.doc_id), f"Answer: {reply}")
    for ent in es.entities:
        key = by_value.get(ent.content)
        if key is not None:
            q_sem = QUESTION_TEMPLATE.format(key=key)
            q_spt = SPATIAL_TEMPLATE.format(key=key)
            meaningful, consistent = "Yes", "Yes"
        else:
            # template text: a question that still matches, but flagged as not user-entered
            q_sem = f"Which text reads {ent.content}?"
            q_spt = f"Where is the text {ent.content} located?"
            meaningful, consistent = "No", "Yes" if ent.id % 2 else "No"
        script.add(semantic_state(ent, es), q_sem)
        script.add(spatial_state(q_sem, es), q_spt)
        for with_image in (False, True):
            script.add(meaningful_state(ent, es, with_image), f'"Response": "{meaningful}"')
            script.add(consistent_state(q_sem, ent.content, es, with_image),
                       f"{{'Response': '{consistent}', 'Explanation': 'scripted'}}")


def load_ocr_dir(path: str) -> list[dict[str, Any]]:
    out = []
    for name in sorted(os.listdir(path)):
        if name.endswith(".json"):
            with open(os.path.join(path, name), encoding="utf-8") as fh:
                out.append(json.load(fh))
    return out
