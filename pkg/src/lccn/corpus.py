"""Corpus IO and a synthetic copy-task corpus.

Synthetic sources are dictionary words separated by noise characters.  The
summary walks the source left to right and keeps, in order, the first
occurrence of every keyword (preceded by a generated glue string chosen by the
keyword's category) and every salient single character (some of which also
receive glue).  Counts are drawn so that the summary token mix matches the
configured copied-word / copied-char / generated fractions.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .lattice import Segmenter, save_dictionary
from .vocab import CharVocab, build_char_vocab  # noqa: F401  (re-exported)

MAX_SOURCE_LEN = 140


class CorpusFormatError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusPair:
    source: str
    summary: str

    def __post_init__(self):
        if not self.source or not self.summary:
            raise ValueError("source and summary must be nonempty")


def save_tsv(path: str | Path, pairs: Sequence[CorpusPair]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for p in pairs:
            if "\t" in p.source + p.summary or "\n" in p.source + p.summary:
                raise CorpusFormatError("tabs and newlines cannot be stored in a TSV corpus")
            f.write(f"{p.source}\t{p.summary}\n")


def load_tsv(path: str | Path) -> list[CorpusPair]:
    pairs = []
    with open(path, encoding="utf-8", newline="") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise CorpusFormatError(f"{path}:{lineno}: expected 'source<TAB>summary'")
            try:
                pairs.append(CorpusPair(parts[0], parts[1]))
            except ValueError as e:
                raise CorpusFormatError(f"{path}:{lineno}: {e}") from None
    return pairs


def save_keywords(path: str | Path, keywords: Sequence[Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for i, kws in enumerate(keywords):
            for k in kws:
                f.write(f"{i}\t{k}\n")


def load_keywords(path: str | Path, n_pairs: int) -> list[set[str]]:
    out: list[set[str]] = [set() for _ in range(n_pairs)]
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            try:
                idx, kw = line.split("\t")
                out[int(idx)].add(kw)
            except (ValueError, IndexError):
                raise CorpusFormatError(f"{path}:{lineno}: expected 'pair_index<TAB>keyword'") from None
    return out


@dataclass
class SynthConfig:
    n_pairs: int = 2000
    seed: int = 0
    n_keywords: int = 30
    n_fillers: int = 30
    word_alphabet: str = "abcdefghijklmnop"
    noise_alphabet: str = "qrstuvwxyz"
    salient_alphabet: str = "0123456789"
    glue_strings: tuple[str, ...] = ("A", "B", "CD", "EF")
    salient_glue: str = "G"
    word_lengths: tuple[int, ...] = (2, 3)
    word_length_weights: tuple[float, ...] = (0.75, 0.25)
    mix: tuple[float, float, float] = (0.37, 0.22, 0.41)  # copied word, copied char, generated
    keywords_per_pair: tuple[int, ...] = (4, 5, 6)
    keyword_repeats: int = 2
    repeat_placement: str = "adjacent"  # or "anywhere" after the first occurrence
    fillers_per_pair: tuple[int, ...] = (2, 3, 4)
    max_source_len: int = MAX_SOURCE_LEN

    def __post_init__(self):
        if self.repeat_placement not in ("adjacent", "anywhere"):
            raise ValueError(f"unknown repeat placement {self.repeat_placement!r}")
        if abs(sum(self.mix) - 1.0) > 1e-9:
            raise ValueError(f"mix fractions must sum to 1, got {self.mix}")


@dataclass
class SyntheticCorpus:
    pairs: list[CorpusPair]
    keywords: list[list[str]]
    dictionaries: list[list[str]]
    keyword_glue: dict[str, str] = field(default_factory=dict)
    glued_salient: frozenset[str] = frozenset()
    # per pair: summary tokens as (kind, string), kind in {"word", "char", "gen"}
    summary_tokens: list[list[tuple[str, str]]] = field(default_factory=list)

    def segmenters(self) -> list[Segmenter]:
        return [Segmenter(d, name=f"domain{i}") for i, d in enumerate(self.dictionaries)]

    def save(self, directory: str | Path, name: str = "corpus") -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_tsv(directory / f"{name}.tsv", self.pairs)
        save_keywords(directory / f"{name}.keywords.tsv", self.keywords)
        for i, d in enumerate(self.dictionaries):
            save_dictionary(directory / f"dict{i}.txt", d)

    def split(self, n_train: int) -> tuple["SyntheticCorpus", "SyntheticCorpus"]:
        def part(sl):
            return SyntheticCorpus(self.pairs[sl], self.keywords[sl], self.dictionaries,
                                   self.keyword_glue, self.glued_salient, self.summary_tokens[sl])
        return part(slice(0, n_train)), part(slice(n_train, None))


def _make_words(rng: random.Random, cfg: SynthConfig, n: int, taken: list[str]) -> list[str]:
    """Random words that are neither substrings nor superstrings of any taken word."""
    words: list[str] = []
    attempts = 0
    while len(words) < n:
        attempts += 1
        if attempts > 100000:
            raise RuntimeError("word alphabet too small for the requested dictionary")
        length = rng.choices(cfg.word_lengths, cfg.word_length_weights)[0]
        w = "".join(rng.choice(cfg.word_alphabet) for _ in range(length))
        if any(w in t or t in w for t in taken + words):
            continue
        words.append(w)
    return words


def generate_synthetic_corpus(cfg: SynthConfig | None = None) -> SyntheticCorpus:
    cfg = cfg or SynthConfig()
    rng = random.Random(cfg.seed)
    keywords = _make_words(rng, cfg, cfg.n_keywords, [])
    fillers = _make_words(rng, cfg, cfg.n_fillers, keywords)

    # two-character prefixes of long fillers become extra dictionary entries of
    # the first domain only, giving overlapping potential words
    prefixes = []
    for f in fillers:
        p = f[:2]
        if len(f) > 2 and p not in prefixes and not any(p in k for k in keywords) and p not in fillers:
            prefixes.append(p)
    dict0 = sorted(set(keywords) | {f for f in fillers if f[:2] not in prefixes} | set(prefixes))
    dict1 = sorted(set(keywords) | set(fillers))

    keyword_glue = {k: rng.choice(cfg.glue_strings) for k in keywords}
    f_word, f_char, f_gen = cfg.mix
    # generated tokens = one glue per keyword + one per glued salient char
    ratio = f_char / f_word
    glue_share = max(0.0, (f_gen / f_word - 1.0) / ratio)
    salient = list(cfg.salient_alphabet)
    n_glued = min(len(salient), round(glue_share * len(salient)))
    glued_salient = frozenset(rng.sample(salient, n_glued))

    pairs, gold, summary_tokens = [], [], []
    while len(pairs) < cfg.n_pairs:
        n_k = rng.choice(cfg.keywords_per_pair)
        # expected salient count ratio * n_k, spread as a binomial over 2 n_k trials
        n_s = sum(rng.random() < ratio / 2 for _ in range(2 * n_k))
        kws = rng.sample(keywords, n_k)
        plan = [("kw", k) for k in kws] + [("sal", rng.choice(salient)) for _ in range(n_s)]
        rng.shuffle(plan)

        items = list(plan)
        for k in kws:
            first = items.index(("kw", k))
            for _ in range(cfg.keyword_repeats - 1):
                at = first + 1 if cfg.repeat_placement == "adjacent" else rng.randint(first + 1, len(items))
                items.insert(at, ("rep", k))
        for f in rng.sample(fillers, rng.choice(cfg.fillers_per_pair)):
            items.insert(rng.randint(0, len(items)), ("fill", f))

        source = []
        prev_word = False
        for kind, s in items:
            is_word = kind != "sal"
            n_noise = rng.randint(1, 2) if (prev_word and is_word) else rng.randint(0, 1)
            source.append("".join(rng.choice(cfg.noise_alphabet) for _ in range(n_noise)))
            source.append(s)
            prev_word = is_word
        source.append("".join(rng.choice(cfg.noise_alphabet) for _ in range(rng.randint(0, 1))))
        src = "".join(source)
        if len(src) > cfg.max_source_len:
            continue

        toks = []
        for kind, s in plan:
            if kind == "kw":
                toks += [("gen", keyword_glue[s]), ("word", s)]
            else:
                if s in glued_salient:
                    toks.append(("gen", cfg.salient_glue))
                toks.append(("char", s))
        pairs.append(CorpusPair(src, "".join(t for _, t in toks)))
        gold.append(list(kws))
        summary_tokens.append(toks)
    return SyntheticCorpus(pairs, gold, [dict0, dict1], keyword_glue, glued_salient, summary_tokens)


def token_mix(corpus: SyntheticCorpus) -> tuple[float, float, float]:
    """Observed (copied word, copied char, generated) fractions of summary tokens."""
    counts = {"word": 0, "char": 0, "gen": 0}
    for toks in corpus.summary_tokens:
        for kind, _ in toks:
            counts[kind] += 1
    total = sum(counts.values())
    return counts["word"] / total, counts["char"] / total, counts["gen"] / total


def template_oracle(corpus: SyntheticCorpus) -> list[str]:
    """Gold keywords joined by their glue, in summary order (salient characters omitted)."""
    out = []
    for pair, kws in zip(corpus.pairs, corpus.keywords):
        ordered = sorted(kws, key=lambda k: pair.summary.index(corpus.keyword_glue[k] + k))
        out.append("".join(corpus.keyword_glue[k] + k for k in ordered))
    return out
