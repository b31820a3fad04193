"""Word-enhanced beam search.

Hypotheses live in a character beam (decoder state up to date, ready to
generate) or a word beam (still feeding the characters of a copied word).
Every round feeds exactly one character to every live hypothesis, so all
hypotheses in the character beam at round t carry exactly t characters and
hypotheses spelling the same string can be merged exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import torch

from .decoder import EOS, ExtendedDistribution, MaskMode
from .encoder import InputMemory
from .lattice import SourceLattice
from .vocab import BOS_ID, CharVocab


@dataclass
class Hypothesis:
    chars: str
    logprob: float
    pending: tuple[int, ...] = ()
    state: object = field(default=None, repr=False)
    finished: bool = False
    steps: int = 0
    ended: bool = False  # emitted the end-of-sequence symbol

    @property
    def in_word_beam(self) -> bool:
        return bool(self.pending)


@dataclass
class BeamSet:
    char_beam: list[Hypothesis] = field(default_factory=list)
    word_beam: list[Hypothesis] = field(default_factory=list)
    finished: list[Hypothesis] = field(default_factory=list)


def logsumexp(values: Sequence[float]) -> float:
    m = max(values)
    if m == float("-inf"):
        return m
    return m + math.log(math.fsum(math.exp(v - m) for v in values))


def avg_log_prob(hyp: Hypothesis, norm: str = "chars") -> float:
    """Log-probability per emitted character (or per decoding step)."""
    if norm == "steps":
        denom = hyp.steps
    else:
        denom = len(hyp.chars) + (1 if hyp.ended else 0)
    return hyp.logprob / denom if denom else 0.0


def rank_key(hyp: Hypothesis, norm: str = "chars"):
    return (-avg_log_prob(hyp, norm), hyp.chars, not hyp.ended)


def k_argmax(hyps: list[Hypothesis], k: int, norm: str = "chars") -> list[Hypothesis]:
    return sorted(hyps, key=lambda h: rank_key(h, norm))[:k]


def merge_same_output(hyps: list[Hypothesis]) -> list[Hypothesis]:
    """Collapse hypotheses with identical output; probabilities add."""
    groups: dict[tuple[str, bool], list[Hypothesis]] = {}
    for h in hyps:
        groups.setdefault((h.chars, h.ended), []).append(h)
    merged = []
    for members in groups.values():
        if len(members) == 1:
            merged.append(members[0])
            continue
        best = max(members, key=lambda h: h.logprob)
        merged.append(replace(best, logprob=logsumexp([h.logprob for h in members])))
    return merged


class _Cache(list):
    """Per-layer inputs plus the most recent top-layer state."""

    state: torch.Tensor = None


class WordBeamSearch:
    def __init__(self, model, lattice: SourceLattice, beam: int = 10, max_len: int = 30, keep=None,
                 mode=MaskMode.HARD, merge: bool = True, norm: str = "chars", allow_words: bool = True,
                 constraint: str | None = None):
        if max_len < 1 or beam < 1:
            raise ValueError("max_len and beam must be at least 1")
        if len(lattice) == 0:
            raise ValueError("empty lattice")
        self.model = model
        self.vocab: CharVocab = model.vocab
        self.lattice = lattice
        self.k = beam
        self.L = max_len
        self.merge = merge
        self.norm = norm
        self.allow_words = allow_words
        self.constraint = constraint
        self.memory: InputMemory = model.encode(lattice)
        self.keep = None if keep is None else torch.as_tensor(keep, dtype=torch.bool).view(1, -1)
        self.mode = mode

    def batched_update(self, beams: BeamSet) -> BeamSet:
        """Feed one pending input to every live hypothesis; matured word hypotheses join the character beam."""
        live = beams.char_beam + beams.word_beam
        if not live:
            return beams
        ids = [h.pending[0] for h in live]
        caches = [h.state for h in live]
        n = len(live)
        memory = self.memory.expand(n)
        batched = None if caches[0] is None else [torch.cat(layer, dim=0) for layer in zip(*caches)]
        with torch.no_grad():
            states, new = self.model.decoder.step(batched, torch.tensor(ids), memory)
        char_beam, word_beam = [], []
        for i, h in enumerate(live):
            cache = _Cache(layer[i:i + 1] for layer in new)
            cache.state = states[i:i + 1]
            h2 = replace(h, pending=h.pending[1:], state=cache)
            (word_beam if h2.pending else char_beam).append(h2)
        return BeamSet(char_beam, word_beam, beams.finished)

    def distributions(self, hyps: list[Hypothesis]) -> list[ExtendedDistribution]:
        n = len(hyps)
        states = torch.cat([h.state.state for h in hyps], dim=0).unsqueeze(1)
        memory = self.memory.expand(n)
        keep = None if self.keep is None else self.keep.expand(n, -1)
        with torch.no_grad():
            out = self.model.outputs(states, memory, keep, self.mode)
        return [ExtendedDistribution.from_outputs(out, i, 0, self.lattice, self.vocab) for i in range(n)]

    def _allowed(self, hyp: Hypothesis, o) -> bool:
        if o is EOS:
            return self.constraint is None or hyp.chars == self.constraint
        if len(hyp.chars) + len(o) > self.L:
            return False
        if self.constraint is not None and not self.constraint.startswith(hyp.chars + o, 0):
            return False
        return True

    def generate(self, char_beam: list[Hypothesis]) -> tuple[list[Hypothesis], list[Hypothesis]]:
        """Expand every ready hypothesis; returns (character/end expansions, word expansions).

        Per hypothesis only the k best expansions of each kind are kept, which
        cannot change the global k-best of either pool.
        """
        if not char_beam:
            return [], []
        n_out, m_out = [], []
        for hyp, dist in zip(char_beam, self.distributions(char_beam)):
            chars_pool, words_pool = [], []
            for o, lp in dist.log_probs(include_unk=False).items():
                if lp == float("-inf"):
                    continue
                is_word = o is not EOS and len(o) > 1
                if is_word and not self.allow_words:
                    continue
                if not self._allowed(hyp, o):
                    continue
                if o is EOS:
                    new = replace(hyp, logprob=hyp.logprob + lp, steps=hyp.steps + 1, ended=True, pending=())
                else:
                    ids = tuple(self.vocab.id(c) for c in o)
                    new = replace(hyp, chars=hyp.chars + o, logprob=hyp.logprob + lp, steps=hyp.steps + 1, pending=ids)
                (words_pool if is_word else chars_pool).append(new)
            if self.k is not None:
                chars_pool = k_argmax(chars_pool, self.k, self.norm)
                words_pool = k_argmax(words_pool, self.k, self.norm)
            n_out += chars_pool
            m_out += words_pool
        return n_out, m_out

    def _done(self, h: Hypothesis) -> bool:
        return h.ended or len(h.chars) == self.L

    def run(self) -> Hypothesis:
        start = Hypothesis("", 0.0, pending=(BOS_ID,))
        beams = BeamSet([start], [], [])
        for _ in range(self.L):
            beams = self.batched_update(beams)
            if self.merge:
                beams.char_beam = merge_same_output(beams.char_beam)
            n, m = self.generate(beams.char_beam)
            # a copied word that exactly reaches the length cap cannot be extended, finish it now
            capped = [h for h in m if len(h.chars) == self.L]
            m = [h for h in m if len(h.chars) < self.L]
            # still-pending words compete with the new word expansions for the k slots
            word_beam = k_argmax(beams.word_beam + m, self.k, self.norm)
            char_beam = k_argmax(n, self.k, self.norm)
            finished = beams.finished + [replace(h, finished=True) for h in char_beam + capped if self._done(h)]
            char_beam = [h for h in char_beam if not self._done(h)]
            if self.merge:
                finished = merge_same_output(finished)
            beams = BeamSet(char_beam, word_beam, finished)
            if not beams.char_beam and not beams.word_beam:
                break
        self.beams = beams
        if beams.finished:
            return k_argmax(beams.finished, 1, self.norm)[0]
        leftovers = beams.char_beam + beams.word_beam
        return k_argmax(leftovers, 1, self.norm)[0]


def word_enhanced_beam_search(model, lattice: SourceLattice, max_len: int = 30, beam: int = 10, keep=None,
                              mode=MaskMode.HARD, merge: bool = True, norm: str = "chars",
                              allow_words: bool = True, constraint: str | None = None) -> Hypothesis:
    search = WordBeamSearch(model, lattice, beam, max_len, keep, mode, merge, norm, allow_words, constraint)
    return search.run()


def standard_beam_search(model, lattice: SourceLattice, max_len: int = 30, beam: int = 10, keep=None,
                         mode=MaskMode.HARD) -> Hypothesis:
    """Plain character-level beam search, recomputing each prefix from scratch.

    Kept as an independent reference; it never emits multi-character words.
    """
    memory = model.encode(lattice)
    live = [Hypothesis("", 0.0)]
    final: list[Hypothesis] = []
    keep_t = None if keep is None else torch.as_tensor(keep, dtype=torch.bool).view(1, -1)
    for _ in range(max_len):
        expansions = []
        for hyp in live:
            with torch.no_grad():
                dist = model.distributions(lattice, hyp.chars, keep_t, mode, memory=memory)[-1]
            for o, lp in dist.log_probs(include_unk=False).items():
                if lp == float("-inf"):
                    continue
                if o is EOS:
                    expansions.append(Hypothesis(hyp.chars, hyp.logprob + lp, steps=hyp.steps + 1, ended=True))
                elif len(o) == 1:
                    expansions.append(Hypothesis(hyp.chars + o, hyp.logprob + lp, steps=hyp.steps + 1))
        best = k_argmax(expansions, beam)
        final += [replace(h, finished=True) for h in best if h.ended or len(h.chars) == max_len]
        live = [h for h in best if not (h.ended or len(h.chars) == max_len)]
        if not live:
            break
    pool = final or live
    return k_argmax(pool, 1)[0]
