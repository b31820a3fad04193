"""Marginal likelihood of a summary over all of its lattice-consistent segmentations.

Conditionals depend only on the preceding character sequence, so the sum over
segmentations factors into a forward recursion over summary positions.
"""
from __future__ import annotations

from typing import Protocol, Sequence

import torch

from .decoder import EOS, ExtendedDistribution
from .lattice import SourceLattice, match_suffix_tokens
from .vocab import EOS_ID, UNK_ID

NEG_INF = float("-inf")


class Conditional(Protocol):
    def log_prob(self, o) -> torch.Tensor: ...


def _lse(terms: list[torch.Tensor]) -> torch.Tensor:
    return torch.logsumexp(torch.stack([torch.as_tensor(t, dtype=torch.float64) for t in terms]), dim=0)


def forward_table(y: str, dists: Sequence[Conditional], lattice: SourceLattice) -> list[torch.Tensor]:
    """``alpha[j] = log P(y_{1:j})`` for ``j = 0..J`` (end symbol excluded)."""
    if len(dists) < len(y) + 1:
        raise ValueError(f"need {len(y) + 1} conditionals, got {len(dists)}")
    alpha = [torch.tensor(0.0, dtype=torch.float64)]
    for j in range(1, len(y) + 1):
        terms = [dists[j - m.length].log_prob(m.chars) + alpha[j - m.length] for m in match_suffix_tokens(lattice, y, j)]
        value = _lse(terms)
        if not torch.isfinite(value):
            raise RuntimeError(f"no path reaches summary position {j}")
        alpha.append(value)
    return alpha


def forward_marginal(y: str, dists: Sequence[Conditional], lattice: SourceLattice) -> torch.Tensor:
    """``log P(y)`` including the final end-of-sequence factor."""
    return forward_table(y, dists, lattice)[-1] + dists[len(y)].log_prob(EOS)


def segmentations(y: str, lattice: SourceLattice) -> list[list[str]]:
    """Every split of ``y`` into single characters and source words."""
    words = sorted(lattice.word_set)
    out: list[list[str]] = []

    def walk(i: int, path: list[str]) -> None:
        if i == len(y):
            out.append(list(path))
            return
        for o in [y[i]] + [w for w in words if y.startswith(w, i)]:
            path.append(o)
            walk(i + len(o), path)
            path.pop()

    walk(0, [])
    return out


def segmentation_log_prob(seg: Sequence[str], dists: Sequence[Conditional]) -> torch.Tensor:
    t = 0
    total = torch.tensor(0.0, dtype=torch.float64)
    for o in seg:
        total = total + dists[t].log_prob(o)
        t += len(o)
    return total + dists[t].log_prob(EOS)


def brute_force_marginal(y: str, dists: Sequence[Conditional], lattice: SourceLattice) -> torch.Tensor:
    """Test oracle: enumerate all segmentations and sum their path probabilities."""
    return _lse([segmentation_log_prob(s, dists) for s in segmentations(y, lattice)])


def candidate_log_probs(model, outputs, b: int, y: str, lattice: SourceLattice) -> torch.Tensor:
    """``(J, Lmax)`` table of ``log P(y_{j-l+1:j} | y_{1:j-l})``; -inf where no token fits.

    Vectorized twin of ``ExtendedDistribution.log_prob`` for training.
    """
    vocab = model.vocab
    J = len(y)
    max_len = max(1, lattice.max_word_len)
    strings: dict[str, int] = {}
    rows, cols, ts, gen_ids, gen_on, str_ids, copy_on = [], [], [], [], [], [], []
    for j in range(1, J + 1):
        for m in match_suffix_tokens(lattice, y, j):
            t = j - m.length
            in_vocab = m.length == 1 and m.chars in vocab
            has_copy = bool(m.token_indices)
            rows.append(j - 1)
            cols.append(m.length - 1)
            ts.append(t)
            if in_vocab or has_copy:
                gen_ids.append(vocab.id(m.chars) if in_vocab else UNK_ID)
                gen_on.append(in_vocab)
            else:
                gen_ids.append(UNK_ID)
                gen_on.append(True)
            str_ids.append(strings.setdefault(m.chars, len(strings)) if has_copy else 0)
            copy_on.append(has_copy)

    log_attn = outputs.log_attn[b, : J + 1, : len(lattice)]
    member = torch.zeros(max(1, len(strings)), len(lattice), dtype=log_attn.dtype)
    for s, k in strings.items():
        member[k, list(lattice.indices_of(s))] = 1.0
    copy_prob = log_attn.exp() @ member.T  # (J+1, n_strings)

    ts_t = torch.tensor(ts)
    gen_on_t = torch.tensor(gen_on, dtype=log_attn.dtype)
    copy_on_t = torch.tensor(copy_on, dtype=log_attn.dtype)
    p_gen = outputs.log_pgen[b, ts_t].exp() * outputs.log_gen[b, ts_t, torch.tensor(gen_ids)].exp()
    p_copy = outputs.log_pcopy[b, ts_t].exp() * copy_prob[ts_t, torch.tensor(str_ids)]
    logp = torch.log(p_gen * gen_on_t + p_copy * copy_on_t)
    table = torch.full((J, max_len), NEG_INF, dtype=log_attn.dtype)
    return table.index_put((torch.tensor(rows), torch.tensor(cols)), logp)


def batched_forward(tables: torch.Tensor, lengths: torch.Tensor, log_end: torch.Tensor) -> torch.Tensor:
    """Forward recursion for a padded batch of candidate tables ``(B, Jmax, Lmax)``."""
    B, Jmax, Lmax = tables.shape
    alpha = [tables.new_zeros(B)]
    for j in range(1, Jmax + 1):
        terms = [tables[:, j - 1, l - 1] + alpha[j - l] for l in range(1, min(j, Lmax) + 1)]
        alpha.append(torch.logsumexp(torch.stack(terms, dim=-1), dim=-1))
    alpha = torch.stack(alpha, dim=1)
    return alpha.gather(1, lengths.view(-1, 1)).squeeze(1) + log_end


def log_marginals(model, lattices: Sequence[SourceLattice], summaries: Sequence[str], memory=None) -> torch.Tensor:
    """``log P(y | x)`` for a batch, teacher-forced on gold characters."""
    memory = memory or model.encode(lattices)
    states = model.decode_states(summaries, memory)
    out = model.outputs(states, memory)
    Jmax = max(len(y) for y in summaries)
    Lmax = max(max(1, lat.max_word_len) for lat in lattices)
    tables = []
    for b, (lat, y) in enumerate(zip(lattices, summaries)):
        t = candidate_log_probs(model, out, b, y, lat)
        padded = t.new_full((Jmax, Lmax), NEG_INF)
        padded[: t.shape[0], : t.shape[1]] = t
        # keep padded rows finite so the recursion never sees an all -inf row
        padded[t.shape[0]:, 0] = 0.0
        tables.append(padded)
    lengths = torch.tensor([len(y) for y in summaries])
    log_end = out.log_pgen[torch.arange(len(summaries)), lengths] + out.log_gen[
        torch.arange(len(summaries)), lengths, EOS_ID
    ]
    if Jmax == 0:
        return log_end
    return batched_forward(torch.stack(tables), lengths, log_end)


def nll_loss(model, lattices: Sequence[SourceLattice], summaries: Sequence[str]) -> torch.Tensor:
    """Mean negative log marginal likelihood over the batch."""
    if not summaries:
        raise ValueError("empty batch")
    return -log_marginals(model, lattices, summaries).mean()
