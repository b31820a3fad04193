"""Character-input Transformer decoder with a lexicon-constrained copy module."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterator

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoder import FeedForward, InputMemory, PositionEncoding
from .lattice import SourceLattice
from .vocab import BOS_ID, EOS_ID, UNK_ID, CharVocab


class Symbol(enum.Enum):
    EOS = "<eos>"
    UNK = "<unk>"

    def __repr__(self):
        return self.value


EOS = Symbol.EOS
UNK = Symbol.UNK


class MaskMode(str, enum.Enum):
    HARD = "hard"
    ZERO = "zero"  # masked logits are set to 0 instead of -inf


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, heads: int):
        super().__init__()
        if d_model % heads:
            raise ValueError(f"d_model={d_model} is not divisible by heads={heads}")
        self.heads = heads
        self.d_head = d_model // heads
        self.w_q = nn.Linear(d_model, d_model, bias=False)
        self.w_k = nn.Linear(d_model, d_model, bias=False)
        self.w_v = nn.Linear(d_model, d_model, bias=False)
        self.proj = nn.Linear(d_model, d_model)

    def _split(self, x):
        b, n, _ = x.shape
        return x.view(b, n, self.heads, self.d_head).transpose(1, 2)

    def forward(self, query, keys, allowed=None):
        """``allowed`` broadcasts to ``(B, 1, Tq, Tk)``; False entries get no weight."""
        q, k, v = self._split(self.w_q(query)), self._split(self.w_k(keys)), self._split(self.w_v(keys))
        logits = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        if allowed is not None:
            logits = logits.masked_fill(~allowed, float("-inf"))
        out = torch.softmax(logits, dim=-1) @ v
        b, _, tq, _ = out.shape
        return self.proj(out.transpose(1, 2).reshape(b, tq, -1))


class DecoderLayer(nn.Module):
    def __init__(self, d_model: int, heads: int, d_ff: int):
        super().__init__()
        self.self_attn = MultiHeadAttention(d_model, heads)
        self.norm1 = nn.LayerNorm(d_model)
        self.cross_attn = MultiHeadAttention(d_model, heads)
        self.norm2 = nn.LayerNorm(d_model)
        self.ff = FeedForward(d_model, d_ff)
        self.norm3 = nn.LayerNorm(d_model)

    def forward(self, x, context, memory: InputMemory, causal=None):
        """``x`` are queries, ``context`` the (cached + current) inputs they may attend to."""
        x = self.norm1(x + self.self_attn(x, context, causal))
        x = self.norm2(x + self.cross_attn(x, memory.H, memory.key_mask[:, None, None, :]))
        return self.norm3(x + self.ff(x))


class TransformerDecoder(nn.Module):
    def __init__(self, embedding: nn.Embedding, d_model: int, heads: int, d_ff: int, layers: int,
                 pos_encoding: str = "sinusoidal", max_len: int = 512):
        super().__init__()
        self.embedding = embedding
        self.position = PositionEncoding(d_model, pos_encoding, max_len)
        self.layers = nn.ModuleList(DecoderLayer(d_model, heads, d_ff) for _ in range(layers))

    def _inputs(self, ids: torch.Tensor, offset: int = 0) -> torch.Tensor:
        x = self.embedding(ids)
        pos = torch.arange(offset, offset + ids.shape[1]).expand(ids.shape[0], -1)
        return x + self.position(pos, x.dtype)

    def forward(self, prefix_ids: torch.Tensor, memory: InputMemory) -> torch.Tensor:
        """States for ``[BOS] + prefix``: ``(B, T+1, d)``; state t conditions on ``y_{1:t}``."""
        if memory.H.shape[1] == 0:
            raise ValueError("empty input memory")
        bos = torch.full((prefix_ids.shape[0], 1), BOS_ID, dtype=torch.long)
        ids = torch.cat([bos, prefix_ids.long()], dim=1)
        x = self._inputs(ids)
        n = ids.shape[1]
        causal = torch.ones(n, n, dtype=torch.bool).tril()
        for layer in self.layers:
            x = layer(x, x, memory, causal)
        return x

    def step(self, cache: list[torch.Tensor] | None, ids: torch.Tensor, memory: InputMemory):
        """Feed one input id per row; returns the new state ``(B, d)`` and the grown cache.

        The cache holds, per layer, that layer's inputs at all earlier positions.
        """
        offset = 0 if cache is None else cache[0].shape[1]
        x = self._inputs(ids.view(-1, 1).long(), offset)
        new_cache = []
        for i, layer in enumerate(self.layers):
            context = x if cache is None else torch.cat([cache[i], x], dim=1)
            new_cache.append(context)
            x = layer(x, context, memory)
        return x[:, 0], new_cache


@dataclass
class StepOutputs:
    """Per decoding position quantities, all in log space.

    Shapes: ``log_pgen``/``log_pcopy`` ``(B, T)``, ``log_gen`` ``(B, T, |V|)``,
    ``log_attn`` ``(B, T, M)``, ``context`` ``(B, T, d)``.
    """

    log_pgen: torch.Tensor
    log_pcopy: torch.Tensor
    log_gen: torch.Tensor
    log_attn: torch.Tensor
    context: torch.Tensor


class CopyModule(nn.Module):
    def __init__(self, d_model: int, vocab_size: int):
        super().__init__()
        self.d_model = d_model
        self.w_q = nn.Linear(d_model, d_model, bias=False)
        self.w_k = nn.Linear(d_model, d_model, bias=False)
        self.w_v = nn.Linear(d_model, d_model, bias=False)
        self.gate = nn.Linear(2 * d_model, 1)
        self.gen_hidden = nn.Linear(2 * d_model, d_model)
        self.gen_out = nn.Linear(d_model, vocab_size)

    def attention(self, states, memory: InputMemory, keep=None, mode: MaskMode = MaskMode.HARD):
        """Single-head attention over the memory: ``(log a_t, c_t)``.

        ``keep`` is a ``(B, M)`` boolean keyword mask; masked tokens either get
        no weight (hard) or a zero logit (zero).
        """
        logits = self.w_q(states) @ self.w_k(memory.H).transpose(-1, -2) / math.sqrt(self.d_model)
        if keep is not None:
            if MaskMode(mode) is MaskMode.HARD:
                logits = logits.masked_fill(~keep[:, None, :], float("-inf"))
            else:
                logits = logits.masked_fill(~keep[:, None, :], 0.0)
        logits = logits.masked_fill(~memory.key_mask[:, None, :], float("-inf"))
        log_attn = torch.log_softmax(logits, dim=-1)
        context = log_attn.exp() @ self.w_v(memory.H)
        return log_attn, context

    def gates(self, states, context):
        z = self.gate(torch.cat([states, context], dim=-1)).squeeze(-1)
        return F.logsigmoid(z), F.logsigmoid(-z)

    def generation_logits(self, states, context):
        logits = self.gen_out(self.gen_hidden(torch.cat([states, context], dim=-1)))
        return logits.index_fill(-1, torch.tensor([BOS_ID]), float("-inf"))

    def forward(self, states, memory: InputMemory, keep=None, mode: MaskMode = MaskMode.HARD) -> StepOutputs:
        log_attn, context = self.attention(states, memory, keep, mode)
        log_pgen, log_pcopy = self.gates(states, context)
        log_gen = torch.log_softmax(self.generation_logits(states, context), dim=-1)
        return StepOutputs(log_pgen, log_pcopy, log_gen, log_attn, context)


class ExtendedDistribution:
    """Output distribution at one decoding position over vocabulary characters,
    source characters, source words, end-of-sequence and UNK.

    Probabilities of characters mix generation and copy; source words are
    reachable through copy only; any other string falls back to UNK.
    """

    def __init__(self, log_pgen, log_pcopy, log_gen, log_attn, lattice: SourceLattice, vocab: CharVocab):
        self.log_pgen = log_pgen
        self.log_pcopy = log_pcopy
        self.log_gen = log_gen
        self.log_attn = log_attn[: len(lattice)]
        self.lattice = lattice
        self.vocab = vocab

    @classmethod
    def from_outputs(cls, out: StepOutputs, b: int, t: int, lattice, vocab) -> "ExtendedDistribution":
        return cls(out.log_pgen[b, t], out.log_pcopy[b, t], out.log_gen[b, t], out.log_attn[b, t], lattice, vocab)

    def _copy(self, indices) -> torch.Tensor:
        return self.log_pcopy + torch.logsumexp(self.log_attn[list(indices)], dim=0)

    def log_prob(self, o) -> torch.Tensor:
        if o is EOS:
            return self.log_pgen + self.log_gen[EOS_ID]
        unk = self.log_pgen + self.log_gen[UNK_ID]
        if o is UNK:
            return unk
        indices = self.lattice.indices_of(o)
        if len(o) == 1 and o in self.vocab:
            gen = self.log_pgen + self.log_gen[self.vocab.id(o)]
            return torch.logaddexp(gen, self._copy(indices)) if indices else gen
        if indices:
            return self._copy(indices)
        return unk

    def prob(self, o) -> float:
        return float(self.log_prob(o).exp())

    def support(self) -> list:
        """Every key with its own probability entry: V, C, W, EOS and UNK."""
        keys = list(self.vocab.chars)
        seen = set(keys)
        for tok in self.lattice.tokens:
            if tok.chars not in seen:
                seen.add(tok.chars)
                keys.append(tok.chars)
        return keys + [EOS, UNK]

    def log_probs(self, include_unk: bool = True) -> dict:
        """All entries as floats, computed in one vectorized pass."""
        with torch.no_grad():
            lg = self.log_gen.detach()
            pgen, pcopy = float(self.log_pgen), float(self.log_pcopy)
            attn = self.log_attn.detach().exp().tolist()
            copy_mass: dict[str, float] = {}
            for tok, a in zip(self.lattice.tokens, attn):
                copy_mass[tok.chars] = copy_mass.get(tok.chars, 0.0) + a
            out = {}
            gen_lp = (lg + pgen).tolist()
            for c in self.vocab.chars:
                i = self.vocab.id(c)
                m = copy_mass.pop(c, 0.0)
                out[c] = math.log(math.exp(gen_lp[i]) + math.exp(pcopy) * m) if m > 0 else gen_lp[i]
            for s, m in copy_mass.items():
                out[s] = pcopy + math.log(m) if m > 0 else float("-inf")
            out[EOS] = gen_lp[EOS_ID]
            if include_unk:
                out[UNK] = gen_lp[UNK_ID]
        return out

    def items(self) -> Iterator[tuple[object, float]]:
        return iter(self.log_probs().items())

    def total(self) -> float:
        return math.fsum(math.exp(v) for v in self.log_probs().values())
