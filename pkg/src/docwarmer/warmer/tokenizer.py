"""Deterministic hashing word tokenizer.

Used by every backbone adapter unless a pretrained tokenizer is configured.
Ids 0-3 are reserved for PAD/CLS/SEP/UNK.
"""
from __future__ import annotations

import re
import zlib

PAD, CLS, SEP, UNK = 0, 1, 2, 3
N_SPECIAL = 4

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class HashTokenizer:
    def __init__(self, vocab_size: int = 4096, lowercase: bool = True):
        if vocab_size <= N_SPECIAL:
            raise ValueError("vocab_size must exceed the number of special tokens")
        self.vocab_size = vocab_size
        self.lowercase = lowercase

    def tokenize(self, text: str) -> list[str]:
        if self.lowercase:
            text = text.lower()
        return _TOKEN_RE.findall(text)

    def token_id(self, token: str) -> int:
        return N_SPECIAL + zlib.crc32(token.encode("utf-8")) % (self.vocab_size - N_SPECIAL)

    def encode(self, text: str) -> list[int]:
        return [self.token_id(t) for t in self.tokenize(text)]
