"""JSON-lines files with an optional leading ``{"_meta": {...}}`` header line."""
from __future__ import annotations

import json
from typing import Any, Iterable

META_KEY = "_meta"


def dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def write_lines(path, rows: Iterable[dict], meta: dict | None = None, append: bool = False) -> int:
    n = 0
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        if meta is not None and not append:
            fh.write(dumps({META_KEY: meta}) + "\n")
        for row in rows:
            fh.write(dumps(row) + "\n")
            fh.flush()
            n += 1
    return n


def read_lines(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            if isinstance(row, dict) and META_KEY in row and len(row) == 1:
                continue
            out.append(row)
    return out


def read_meta(path) -> dict | None:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if not first.strip():
        return None
    row = json.loads(first)
    return row.get(META_KEY) if isinstance(row, dict) else None
