from __future__ import annotations

import json
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

UNK_ID = 0
EOS_ID = 1
BOS_ID = 2
SPECIAL_TOKENS = ("<unk>", "<eos>", "<bos>")


class CharVocab:
    """Character vocabulary with reserved UNK, end-of-sequence and begin-of-sequence ids."""

    def __init__(self, chars: Sequence[str]):
        chars = list(chars)
        if len(set(chars)) != len(chars) or any(len(c) != 1 for c in chars):
            raise ValueError("vocabulary entries must be distinct single characters")
        self.chars = chars
        self._ids = {c: i + len(SPECIAL_TOKENS) for i, c in enumerate(chars)}

    def __len__(self) -> int:
        return len(self.chars) + len(SPECIAL_TOKENS)

    def __contains__(self, c: str) -> bool:
        return c in self._ids

    def __eq__(self, other) -> bool:
        return isinstance(other, CharVocab) and self.chars == other.chars

    def id(self, c: str) -> int:
        return self._ids.get(c, UNK_ID)

    def encode(self, text: str) -> list[int]:
        return [self._ids.get(c, UNK_ID) for c in text]

    def token(self, i: int) -> str:
        if i < len(SPECIAL_TOKENS):
            return SPECIAL_TOKENS[i]
        return self.chars[i - len(SPECIAL_TOKENS)]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.chars, f, ensure_ascii=False)

    @classmethod
    def load(cls, path: str | Path) -> "CharVocab":
        with open(path, encoding="utf-8") as f:
            return cls(json.load(f))


def build_char_vocab(texts: Iterable[str], size: int) -> CharVocab:
    """Top ``size`` characters by frequency, ties broken by lower codepoint."""
    counts = Counter()
    for t in texts:
        counts.update(t)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], ord(kv[0])))
    return CharVocab([c for c, _ in ranked[:size]])
