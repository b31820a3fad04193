"""Training and corpus-level decoding loops."""
from __future__ import annotations

import logging
import random
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import torch

from . import diffcore
from .beamsearch import standard_beam_search, word_enhanced_beam_search
from .corpus import CorpusPair
from .decoder import MaskMode
from .lattice import Segmenter, SourceLattice, Token, build_lattice, lattice_from_segmenters
from .marginal import nll_loss
from .model import LCCN

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    warmup: int = 4000
    lr_scale: float = 1.0
    seed: int = 0
    clip_norm: float | None = None


def make_lattices(sources: Sequence[str], segmenters: Sequence[Segmenter], r: int = 8,
                  words: bool = True) -> list[SourceLattice]:
    if not words:
        return [build_lattice(s, (), r) for s in sources]
    return [lattice_from_segmenters(s, segmenters, r) for s in sources]


def batches(n: int, size: int, rng: random.Random | None = None) -> list[list[int]]:
    order = list(range(n))
    if rng is not None:
        rng.shuffle(order)
    return [order[i:i + size] for i in range(0, n, size)]


def evaluate_nll(model: LCCN, lattices: Sequence[SourceLattice], summaries: Sequence[str],
                 batch_size: int = 32) -> float:
    total = 0.0
    with torch.no_grad():
        for idx in batches(len(summaries), batch_size):
            loss = nll_loss(model, [lattices[i] for i in idx], [summaries[i] for i in idx])
            total += loss.item() * len(idx)
    return total / max(len(summaries), 1)


def train_lccn(model: LCCN, lattices: Sequence[SourceLattice], summaries: Sequence[str],
               cfg: TrainConfig | None = None, dev: tuple | None = None,
               checkpoint_dir: str | Path | None = None) -> list[dict]:
    """Adam with the inverse-square-root warmup schedule on the marginal NLL.

    Returns one record per epoch with the mean train loss and, if ``dev`` is
    given as ``(lattices, summaries)``, the dev NLL.
    """
    cfg = cfg or TrainConfig()
    rng = random.Random(cfg.seed)
    opt = diffcore.make_adam(model.parameters())
    schedule = diffcore.NoamSchedule(opt, model.cfg.d_model, cfg.warmup, cfg.lr_scale)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        start = time.time()
        total = 0.0
        for idx in batches(len(summaries), cfg.batch_size, rng):
            loss = nll_loss(model, [lattices[i] for i in idx], [summaries[i] for i in idx])
            opt.zero_grad()
            diffcore.backward(loss)
            if cfg.clip_norm:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
            schedule.step()
            opt.step()
            total += loss.item() * len(idx)
        record = {"epoch": epoch, "train_nll": total / len(summaries), "seconds": time.time() - start}
        if dev is not None:
            model.eval()
            record["dev_nll"] = evaluate_nll(model, *dev)
        log.info("epoch %d: %s", epoch, {k: round(v, 4) for k, v in record.items()})
        history.append(record)
        if checkpoint_dir is not None:
            model.save(checkpoint_dir)
    model.eval()
    return history


def summarize(model: LCCN, lattices: Sequence[SourceLattice], beam: int = 10, max_len: int = 40,
              masks: Sequence | None = None, words: bool = True, word_beam: bool = True,
              mode: MaskMode = MaskMode.HARD, norm: str = "chars") -> list[str]:
    """Decode every lattice; ``word_beam=False`` falls back to plain character beam search."""
    out = []
    model.eval()
    for i, lat in enumerate(lattices):
        keep = None if masks is None else masks[i]
        if word_beam:
            hyp = word_enhanced_beam_search(model, lat, max_len, beam, keep, mode, norm=norm, allow_words=words)
        else:
            hyp = standard_beam_search(model, lat, max_len, beam, keep, mode)
        out.append(hyp.chars)
    return out


def pairs_to_examples(pairs: Sequence[CorpusPair], segmenters: Sequence[Segmenter], r: int = 8,
                      words: bool = True) -> tuple[list[SourceLattice], list[str]]:
    return make_lattices([p.source for p in pairs], segmenters, r, words), [p.summary for p in pairs]


@dataclass
class GradcheckReport:
    max_rel_error: float
    worst: tuple
    results: list

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def gradient_check(seed: int = 0, n_samples: int = 50, d_model: int = 16, layers: int = 1,
                   h: float = 1e-5) -> GradcheckReport:
    """Central finite differences against autograd for the batched marginal NLL of a small model."""
    from .model import ModelConfig
    from .vocab import build_char_vocab

    diffcore.set_seed(seed)
    rng = random.Random(seed)
    alphabet = "abcde"
    sources = ["".join(rng.choice(alphabet) for _ in range(rng.randint(5, 9))) for _ in range(3)]
    lattices = []
    for s in sources:
        i = rng.randint(0, len(s) - 3)
        lattices.append(build_lattice(s, [Token.from_text(s, i + 1, i + rng.randint(2, 3))], r=2))
    summaries = [s[1:4] + rng.choice(alphabet) + s[-2:] for s in sources]
    vocab = build_char_vocab(sources + summaries, 32)
    cfg = ModelConfig(d_model=d_model, heads=2, enc_layers=layers, dec_layers=layers, d_ff=2 * d_model, r=2)
    model = LCCN(vocab, cfg, torch.float64)
    params = dict(model.named_parameters())
    results = diffcore.finite_difference_check(
        lambda: nll_loss(model, lattices, summaries), params, n_samples, h, rng
    )
    worst = max(results, key=lambda x: x[-1])
    return GradcheckReport(worst[-1], worst, results)
