"""Word-level caption tokenizer.

Captions are lowercased and split into runs of letters/digits; everything
else (whitespace, punctuation, underscores) separates words and is dropped.
Ids 0-2 are reserved for ``[PAD]``, ``[UNK]`` and ``[CLS]``; corpus words
follow in sorted order so a vocab depends only on the set of words seen.
"""

from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

logger = logging.getLogger(__name__)

PAD, UNK, CLS = "[PAD]", "[UNK]", "[CLS]"
SPECIALS = (PAD, UNK, CLS)
MAX_LEN = 77
_WORD = re.compile(r"[^\W_]+", re.UNICODE)


def split_words(caption: str) -> list[str]:
    return _WORD.findall(caption.lower())


@dataclass
class Vocab:
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if tuple(self.tokens[:3]) != SPECIALS:
            raise ValueError(f"vocab must start with {SPECIALS}")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("vocab has duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.rstrip("\n")])


@dataclass
class TokenizedCaption:
    token_ids: list[int]

    @property
    def length(self) -> int:
        return len(self.token_ids)


def build_vocab(captions: Iterable[str]) -> Vocab:
    words: set[str] = set()
    for caption in captions:
        words.update(split_words(caption))
    return Vocab(list(SPECIALS) + sorted(words - set(SPECIALS)))


def tokenize(caption: str, vocab: Vocab, max_len: int = MAX_LEN) -> TokenizedCaption:
    words = split_words(caption)
    if not words:
        logger.warning("empty caption %r tokenized as a single [UNK]", caption)
        return TokenizedCaption([vocab.unk_id])
    return TokenizedCaption([vocab.index.get(w, vocab.unk_id) for w in words[:max_len]])


def pad_batch(captions: list[TokenizedCaption], pad_id: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad to the longest caption; returns (ids [B, L], mask [B, L])."""
    length = max(c.length for c in captions)
    ids = np.full((len(captions), length), pad_id, dtype=np.int64)
    mask = np.zeros((len(captions), length))
    for i, c in enumerate(captions):
        ids[i, : c.length] = c.token_ids
        mask[i, : c.length] = 1.0
    return ids, mask
