"""Word-level tokenizer with a corpus-built vocabulary."""
from __future__ import annotations

import re
import warnings
from typing import Iterable

import numpy as np

from .errors import EmptySequence, TruncationWarning, UnknownToken

UNK = "<unk>"
DEFAULT_MAX_LEN = 64
_WORD = re.compile(r"[a-z0-9]+(?:'[a-z]+)?")


def split_words(text: str) -> list[str]:
    return _WORD.findall(text.lower())


class Tokenizer:
    """Maps words to ids; id 0 is reserved for unknown words."""

    def __init__(self, words: Iterable[str], max_len: int = DEFAULT_MAX_LEN):
        self.itos = [UNK] + sorted(set(words) - {UNK})
        self.stoi = {w: i for i, w in enumerate(self.itos)}
        self.max_len = max_len

    @classmethod
    def from_texts(cls, texts: Iterable[str], max_len: int = DEFAULT_MAX_LEN) -> "Tokenizer":
        words = set()
        for t in texts:
            words.update(split_words(t))
        return cls(words, max_len)

    def __len__(self):
        return len(self.itos)

    @property
    def vocab_size(self) -> int:
        return len(self.itos)

    def encode(self, text: str, strict: bool = False) -> np.ndarray:
        words = split_words(text)
        if not words:
            raise EmptySequence(f"no tokens in {text!r}")
        if len(words) > self.max_len:
            warnings.warn(f"text of {len(words)} tokens truncated to {self.max_len}",
                          TruncationWarning, stacklevel=2)
            words = words[: self.max_len]
        ids = []
        for w in words:
            i = self.stoi.get(w)
            if i is None:
                if strict:
                    raise UnknownToken(f"word {w!r} is not in the vocabulary")
                i = 0
            ids.append(i)
        return np.asarray(ids, dtype=np.int64)

    def to_dict(self) -> dict:
        return {"words": self.itos[1:], "max_len": self.max_len}

    @classmethod
    def from_dict(cls, d: dict) -> "Tokenizer":
        return cls(d["words"], d.get("max_len", DEFAULT_MAX_LEN))
