"""Multi-granularity token lattices over a source text.

A lattice holds every character of the text plus every potential word, i.e. a
multi-character span that some dictionary segmenter produced.  Spans are
1-based and inclusive on both ends.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_R = 8


class TokenKind(enum.Enum):
    CHAR = "char"
    WORD = "word"


@dataclass(frozen=True, order=True)
class Span:
    start: int
    end: int

    def __post_init__(self):
        if self.start < 1 or self.end < self.start:
            raise ValueError(f"invalid span [{self.start}, {self.end}]")

    def __len__(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True)
class Token:
    span: Span
    chars: str
    kind: TokenKind

    def __post_init__(self):
        if len(self.chars) != len(self.span):
            raise ValueError(f"token {self.chars!r} does not fit span {self.span}")
        if (self.kind is TokenKind.CHAR) != (len(self.span) == 1):
            raise ValueError(f"token {self.chars!r} has kind {self.kind.value} but length {len(self.span)}")

    @property
    def is_word(self) -> bool:
        return self.kind is TokenKind.WORD

    @classmethod
    def from_text(cls, text: str, start: int, end: int) -> "Token":
        if end > len(text):
            raise ValueError(f"span [{start}, {end}] exceeds text of length {len(text)}")
        kind = TokenKind.CHAR if start == end else TokenKind.WORD
        return cls(Span(start, end), text[start - 1:end], kind)


class Segmenter:
    """Forward maximum matching over a word dictionary.

    Single characters always match, so the output always covers the text.
    """

    def __init__(self, dictionary: Iterable[str], name: str = ""):
        self.dictionary = frozenset(w for w in dictionary if w)
        self.name = name
        self.max_len = max((len(w) for w in self.dictionary), default=1)

    @classmethod
    def from_file(cls, path: str | Path) -> "Segmenter":
        path = Path(path)
        with open(path, encoding="utf-8") as f:
            words = [line.strip() for line in f]
        return cls(words, name=path.stem)

    def __repr__(self) -> str:
        return f"Segmenter({self.name or 'anon'}, {len(self.dictionary)} words)"


def segment(text: str, seg: Segmenter) -> list[Token]:
    tokens = []
    i = 0
    n = len(text)
    while i < n:
        length = 1
        for cand in range(min(seg.max_len, n - i), 1, -1):
            if text[i:i + cand] in seg.dictionary:
                length = cand
                break
        tokens.append(Token.from_text(text, i + 1, i + length))
        i += length
    return tokens


def extract_potential_words(text: str, segs: Sequence[Segmenter]) -> set[Token]:
    if not segs:
        raise ValueError("at least one segmenter is required")
    words = set()
    for seg in segs:
        words.update(t for t in segment(text, seg) if t.is_word)
    return words


def relative_position(a_span: Span, b_span: Span, r: int = DEFAULT_R) -> int:
    """Category of span B relative to span A, in ``[0, 2r+3]``.

    Rows are tested top to bottom: B before A, identical, B after A, B contains
    A, A contains B, and finally partial overlap.
    """
    a, b = a_span.start, a_span.end
    c, d = b_span.start, b_span.end
    if d < a:
        return max(0, r - a + d)
    if a == c and b == d:
        return r
    if b < c:
        return min(2 * r, r + c - b)
    if (c <= a <= b < d) or (c < a <= b <= d):
        return 2 * r + 1
    if (a <= c <= d < b) or (a < c <= d <= b):
        return 2 * r + 2
    return 2 * r + 3


@dataclass(frozen=True)
class SuffixMatch:
    """A candidate output token equal to the summary suffix ending at some position."""

    chars: str
    token_indices: tuple[int, ...]

    @property
    def length(self) -> int:
        return len(self.chars)

    @property
    def is_word(self) -> bool:
        return len(self.chars) > 1


@dataclass(frozen=True, eq=False)
class SourceLattice:
    chars: str
    tokens: tuple[Token, ...]
    abs_pos: tuple[int, ...]
    relpos: np.ndarray
    r: int = DEFAULT_R
    _by_string: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.relpos.setflags(write=False)
        index: dict[str, list[int]] = {}
        for i, tok in enumerate(self.tokens):
            index.setdefault(tok.chars, []).append(i)
        object.__setattr__(self, "_by_string", {k: tuple(v) for k, v in index.items()})

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def num_categories(self) -> int:
        return 2 * self.r + 4

    @property
    def char_set(self) -> frozenset[str]:
        return frozenset(self.chars)

    @property
    def word_set(self) -> frozenset[str]:
        return frozenset(t.chars for t in self.tokens if t.is_word)

    @property
    def word_indices(self) -> list[int]:
        return [i for i, t in enumerate(self.tokens) if t.is_word]

    @property
    def max_word_len(self) -> int:
        return max((len(t.chars) for t in self.tokens), default=1)

    def indices_of(self, s: str) -> tuple[int, ...]:
        """Lattice positions of every token whose string equals ``s``."""
        return self._by_string.get(s, ())

    def dump(self) -> str:
        return "".join(f"{t.span.start}\t{t.span.end}\t{t.kind.value}\t{t.chars}\n" for t in self.tokens)


def relpos_matrix(tokens: Sequence[Token], r: int) -> np.ndarray:
    m = len(tokens)
    out = np.empty((m, m), dtype=np.int64)
    for i, ti in enumerate(tokens):
        for j, tj in enumerate(tokens):
            out[i, j] = relative_position(ti.span, tj.span, r)
    return out


def build_lattice(text: str, words: Iterable[Token] = (), r: int = DEFAULT_R) -> SourceLattice:
    if not text:
        raise ValueError("cannot build a lattice for empty text")
    seen = set()
    word_list = []
    for w in words:
        if not w.is_word:
            raise ValueError(f"{w.chars!r} is not a multi-character word")
        if w.span.end > len(text) or text[w.span.start - 1:w.span.end] != w.chars:
            raise ValueError(f"word {w.chars!r} at {w.span} does not match the text")
        if w.span in seen:
            raise ValueError(f"duplicate word span {w.span}")
        seen.add(w.span)
        word_list.append(w)
    tokens = [Token.from_text(text, i, i) for i in range(1, len(text) + 1)] + word_list
    tokens.sort(key=lambda t: (t.span.start, t.span.end))
    return SourceLattice(
        chars=text,
        tokens=tuple(tokens),
        abs_pos=tuple(t.span.start for t in tokens),
        relpos=relpos_matrix(tokens, r),
        r=r,
    )


def lattice_from_segmenters(text: str, segs: Sequence[Segmenter], r: int = DEFAULT_R) -> SourceLattice:
    words = extract_potential_words(text, segs) if segs else set()
    return build_lattice(text, words, r=r)


def match_suffix_tokens(lattice: SourceLattice, y: str, j: int) -> list[SuffixMatch]:
    """Candidates ``o`` with ``o == y[j-len(o)+1 : j]`` (1-based ``j``).

    The single character is always a candidate even when the source lacks it;
    multi-character candidates are source words, reported once per string.
    """
    if not 1 <= j <= len(y):
        raise ValueError(f"position {j} outside summary of length {len(y)}")
    ch = y[j - 1]
    out = [SuffixMatch(ch, lattice.indices_of(ch))]
    for length in range(2, min(j, lattice.max_word_len) + 1):
        s = y[j - length:j]
        idx = lattice.indices_of(s)
        if idx:
            out.append(SuffixMatch(s, idx))
    return out


def load_dictionary(path: str | Path) -> list[str]:
    with open(path, encoding="utf-8") as f:
        return [w for w in (line.strip() for line in f) if w]


def save_dictionary(path: str | Path, words: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for w in words:
            f.write(w + "\n")
