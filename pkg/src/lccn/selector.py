"""Keyword selection over potential words and the copy-attention mask it induces."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import torch
import torch.nn as nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from . import diffcore
from .decoder import MaskMode
from .lattice import SourceLattice, Span, Token
from .vocab import CharVocab

SELECTOR_LR = 3e-4


def _run_bilstm(lstm: nn.LSTM, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    packed = pack_padded_sequence(x, lengths, batch_first=True, enforce_sorted=False)
    out, _ = lstm(packed)
    out, _ = pad_packed_sequence(out, batch_first=True, total_length=x.shape[1])
    return out


class ContextEncoder(nn.Module):
    """Maps a batch of texts to per-character context vectors ``(B, I, out_dim)``.

    Subclasses may wrap any pretrained character encoder; ``out_dim`` must be set.
    """

    out_dim: int

    def forward(self, ids: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError


class RecurrentContextEncoder(ContextEncoder):
    def __init__(self, vocab_size: int, d_emb: int = 64, hidden: int = 64):
        super().__init__()
        self.embedding = nn.Embedding(vocab_size, d_emb)
        self.lstm = nn.LSTM(d_emb, hidden, batch_first=True, bidirectional=True)
        self.out_dim = 2 * hidden

    def forward(self, ids, lengths):
        return _run_bilstm(self.lstm, self.embedding(ids), lengths)


@dataclass
class SelectorStates:
    fwd: torch.Tensor  # (B, I, h)
    bwd: torch.Tensor


class WordSelector(nn.Module):
    def __init__(self, vocab: CharVocab, hidden: int = 64, context: ContextEncoder | None = None,
                 dtype=diffcore.DEFAULT_DTYPE):
        super().__init__()
        self.vocab = vocab
        self.hidden = hidden
        self.context = context or RecurrentContextEncoder(len(vocab), hidden, hidden)
        self.lstm = nn.LSTM(self.context.out_dim, hidden, batch_first=True, bidirectional=True)
        self.score = nn.Linear(6 * hidden, 1)
        self.to(dtype)

    def states(self, texts: Sequence[str]) -> SelectorStates:
        lengths = torch.tensor([len(t) for t in texts])
        ids = torch.zeros(len(texts), int(lengths.max()), dtype=torch.long)
        for b, t in enumerate(texts):
            ids[b, : len(t)] = torch.tensor(self.vocab.encode(t))
        x = self.context(ids, lengths)
        out = _run_bilstm(self.lstm, x, lengths)
        return SelectorStates(out[..., : self.hidden], out[..., self.hidden:])

    @staticmethod
    def features(states: SelectorStates, b: int, spans: Sequence[Span]) -> torch.Tensor:
        a = torch.tensor([s.start - 1 for s in spans])
        e = torch.tensor([s.end - 1 for s in spans])
        fa, fb = states.fwd[b, a], states.fwd[b, e]
        ba, bb = states.bwd[b, a], states.bwd[b, e]
        return torch.cat([fa, fb, ba, bb, fb - fa, ba - bb], dim=-1)

    def word_score(self, states: SelectorStates, b: int, spans: Sequence[Span]) -> torch.Tensor:
        if not spans:
            return states.fwd.new_zeros(0)
        return torch.sigmoid(self.score(self.features(states, b, spans)).squeeze(-1))

    def scores(self, texts: Sequence[str], spans: Sequence[Sequence[Span]]) -> list[torch.Tensor]:
        states = self.states(texts)
        return [self.word_score(states, b, s) for b, s in enumerate(spans)]


def label_words(source: str, summary: str, words: Sequence[Token]) -> list[int]:
    """1 for every word whose string also occurs in the summary."""
    return [int(w.chars in summary) for w in words]


def bce_loss(scores: torch.Tensor, labels: torch.Tensor, pos_weight: float | None = None) -> torch.Tensor:
    scores = scores.clamp(1e-12, 1 - 1e-12)
    labels = labels.to(scores.dtype)
    w = 1.0 if pos_weight is None else pos_weight
    return -(w * labels * torch.log(scores) + (1 - labels) * torch.log1p(-scores)).mean()


@dataclass(frozen=True)
class KeywordMask:
    keep: tuple[bool, ...]
    mode: MaskMode = MaskMode.HARD
    selected: tuple[tuple[float, Token], ...] = ()

    def tensor(self) -> torch.Tensor:
        return torch.tensor(self.keep, dtype=torch.bool)

    def dump(self) -> str:
        return "".join(f"{s:.6f}\t{t.span.start}\t{t.span.end}\t{t.chars}\n" for s, t in self.selected)


def mask_from_words(lattice: SourceLattice, kept: Sequence[Token], mode: MaskMode = MaskMode.HARD,
                    scores: Sequence[float] | None = None) -> KeywordMask:
    kept_spans = {t.span for t in kept}
    keep = tuple((not t.is_word) or t.span in kept_spans for t in lattice.tokens)
    scores = scores if scores is not None else [1.0] * len(kept)
    return KeywordMask(keep, MaskMode(mode), tuple(zip(scores, kept)))


def rank_words(words: Sequence[Token], scores: Sequence[float]) -> list[tuple[float, Token]]:
    """Descending score; ties go to the earlier span."""
    return sorted(zip(scores, words), key=lambda st: (-st[0], st[1].span.start, st[1].span.end))


def select_keywords(lattice: SourceLattice, selector: WordSelector, n: int = 10,
                    mode: MaskMode = MaskMode.HARD) -> KeywordMask:
    words = [lattice.tokens[i] for i in lattice.word_indices]
    if not words or n <= 0:
        return mask_from_words(lattice, [], mode)
    with torch.no_grad():
        scores = selector.scores([lattice.chars], [[w.span for w in words]])[0].tolist()
    top = rank_words(words, scores)[:n]
    return mask_from_words(lattice, [t for _, t in top], mode, [s for s, _ in top])


def train_selector(selector: WordSelector, examples: Sequence[tuple[SourceLattice, Sequence[int]]],
                   epochs: int = 5, batch_size: int = 16, lr: float = SELECTOR_LR, seed: int = 0,
                   pos_weight: float | None = None, log=None) -> list[float]:
    """Fixed-rate Adam on per-word binary cross-entropy; returns mean loss per epoch."""
    import random

    rng = random.Random(seed)
    opt = diffcore.make_adam(selector.parameters(), lr)
    order = list(range(len(examples)))
    history = []
    for epoch in range(epochs):
        rng.shuffle(order)
        total, count = 0.0, 0
        for s in range(0, len(order), batch_size):
            batch = [examples[i] for i in order[s:s + batch_size]]
            batch = [(lat, lab) for lat, lab in batch if lat.word_indices]
            if not batch:
                continue
            spans = [[lat.tokens[i].span for i in lat.word_indices] for lat, _ in batch]
            scores = torch.cat(selector.scores([lat.chars for lat, _ in batch], spans))
            labels = torch.tensor([x for _, lab in batch for x in lab], dtype=scores.dtype)
            loss = bce_loss(scores, labels, pos_weight)
            opt.zero_grad()
            diffcore.backward(loss)
            opt.step()
            total += loss.item() * len(batch)
            count += len(batch)
        history.append(total / max(count, 1))
        if log:
            log(f"selector epoch {epoch + 1}: bce {history[-1]:.4f}")
    return history


def selection_precision(masks: Sequence[KeywordMask], gold: Sequence[set[str]]) -> float:
    """Mean over texts of the fraction of selected words that are gold keywords."""
    vals = []
    for m, g in zip(masks, gold):
        if m.selected:
            vals.append(sum(t.chars in g for _, t in m.selected) / len(m.selected))
    return sum(vals) / len(vals) if vals else 0.0


def save_selector(selector: WordSelector, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    diffcore.save_checkpoint(directory / "selector.ckpt", dict(selector.named_parameters()))
    selector.vocab.save(directory / "vocab.json")
    (directory / "selector.cfg").write_text(f"hidden={selector.hidden}\n", encoding="utf-8")


def load_selector(directory: str | Path) -> WordSelector:
    from .model import load_parameters

    directory = Path(directory)
    cfg = dict(line.split("=", 1) for line in (directory / "selector.cfg").read_text().split())
    sel = WordSelector(CharVocab.load(directory / "vocab.json"), hidden=int(cfg["hidden"]))
    load_parameters(sel, diffcore.load_checkpoint(directory / "selector.ckpt"))
    return sel
