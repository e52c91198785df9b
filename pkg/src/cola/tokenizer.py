"""Fallback deterministic tokenizer.

Real token IDs are expected to be materialized by an external tokenizer and
shipped inside the dataset file. When they are absent, this module makes
text-only files usable: lowercase, split on Unicode whitespace and
punctuation, then map each token string to an ID by 64-bit FNV-1a hashing
modulo the vocabulary size. The scheme is model-free and fully
deterministic, which is what the rest of the toolkit needs; it makes no
attempt to match any production tokenizer's segmentation.
"""

from __future__ import annotations

import unicodedata

from .seeding import fnv1a_64

DEFAULT_VOCAB_SIZE = 32000


def _is_separator(ch: str) -> bool:
    if ch.isspace():
        return True
    return unicodedata.category(ch).startswith("P")


def split_words(text: str) -> list[str]:
    """Lowercase `text` and split it on whitespace/punctuation boundaries."""
    words = []
    current: list[str] = []
    for ch in text.lower():
        if _is_separator(ch):
            if current:
                words.append("".join(current))
                current = []
        else:
            current.append(ch)
    if current:
        words.append("".join(current))
    return words


def encode(text: str, vocab_size: int = DEFAULT_VOCAB_SIZE) -> list[int]:
    """Map text to token IDs in [0, vocab_size) via FNV-1a word hashing."""
    if vocab_size <= 0:
        raise ValueError(f"vocab_size must be positive, got {vocab_size}")
    return [fnv1a_64(w.encode("utf-8")) % vocab_size for w in split_words(text)]
