"""Lattice encoder: token composition, absolute positions and relative-position
self-attention over all characters and potential words of a source text."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn as nn
from torch.nn.utils.rnn import pack_padded_sequence

from .lattice import SourceLattice, Token
from .vocab import CharVocab


def sinusoidal_encoding(positions: torch.Tensor, d_model: int, dtype=torch.float64) -> torch.Tensor:
    """Fixed sin/cos encoding; every row has norm sqrt(d_model / 2)."""
    half = torch.arange(0, d_model, 2, dtype=dtype)
    freq = torch.exp(-math.log(10000.0) * half / d_model)
    angles = positions.to(dtype).unsqueeze(-1) * freq
    pe = torch.zeros(*positions.shape, d_model, dtype=dtype)
    pe[..., 0::2] = torch.sin(angles)
    pe[..., 1::2] = torch.cos(angles)
    return pe


class PositionEncoding(nn.Module):
    def __init__(self, d_model: int, mode: str = "sinusoidal", max_len: int = 512):
        super().__init__()
        if mode not in ("sinusoidal", "learned", "none"):
            raise ValueError(f"unknown position encoding {mode!r}")
        self.d_model = d_model
        self.mode = mode
        if mode == "learned":
            self.table = nn.Embedding(max_len + 1, d_model)

    def forward(self, positions: torch.Tensor, dtype) -> torch.Tensor:
        if self.mode == "sinusoidal":
            return sinusoidal_encoding(positions, self.d_model, dtype)
        if self.mode == "learned":
            return self.table(positions)
        return torch.zeros(*positions.shape, self.d_model, dtype=dtype)


class TokenEmbedder(nn.Module):
    """Bidirectional LSTM over a token's characters.

    The output concatenates the backward state at the first character with
    the forward state at the last one.
    """

    def __init__(self, embedding: nn.Embedding, d_model: int):
        super().__init__()
        if d_model % 2:
            raise ValueError("d_model must be even for the bidirectional composer")
        self.embedding = embedding
        self.lstm = nn.LSTM(embedding.embedding_dim, d_model // 2, batch_first=True, bidirectional=True)

    def forward(self, char_ids: Sequence[Sequence[int]]) -> torch.Tensor:
        lengths = torch.tensor([len(c) for c in char_ids])
        padded = torch.zeros(len(char_ids), int(lengths.max()), dtype=torch.long)
        for i, ids in enumerate(char_ids):
            padded[i, : len(ids)] = torch.tensor(ids, dtype=torch.long)
        packed = pack_padded_sequence(self.embedding(padded), lengths, batch_first=True, enforce_sorted=False)
        _, (h_n, _) = self.lstm(packed)
        return torch.cat([h_n[1], h_n[0]], dim=-1)

    def embed_token(self, token: Token, vocab: CharVocab) -> torch.Tensor:
        return self([vocab.encode(token.chars)])[0]


class RelPosSelfAttention(nn.Module):
    """Multi-head self-attention with relative-position key and value embeddings.

    ``forward`` returns the concatenated head outputs before the output
    projection, together with the attention weights ``(B, h, M, M)``.
    """

    def __init__(self, d_model: int, heads: int, num_categories: int, per_head: bool = False):
        super().__init__()
        if d_model % heads:
            raise ValueError(f"d_model={d_model} is not divisible by heads={heads}")
        self.d_model = d_model
        self.heads = heads
        self.d_head = d_model // heads
        self.per_head = per_head
        self.w_q = nn.Linear(d_model, d_model, bias=False)
        self.w_k = nn.Linear(d_model, d_model, bias=False)
        self.w_v = nn.Linear(d_model, d_model, bias=False)
        shape = (heads, num_categories, self.d_head) if per_head else (num_categories, self.d_head)
        self.rel_k = nn.Parameter(torch.randn(*shape) * self.d_head**-0.5)
        self.rel_v = nn.Parameter(torch.randn(*shape) * self.d_head**-0.5)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, m, _ = x.shape
        return x.view(b, m, self.heads, self.d_head).transpose(1, 2)

    def forward(self, x: torch.Tensor, relpos: torch.Tensor, key_mask: torch.Tensor | None = None):
        if x.shape[-1] != self.d_model:
            raise ValueError(f"input dim {x.shape[-1]} does not match d_model={self.d_model}")
        b, m, _ = x.shape
        if relpos.shape != (b, m, m):
            raise ValueError(f"relpos shape {tuple(relpos.shape)} does not match input {(b, m, m)}")
        q, k, v = self._split(self.w_q(x)), self._split(self.w_k(x)), self._split(self.w_v(x))
        rel_k = self.rel_k if self.per_head else self.rel_k.unsqueeze(0).expand(self.heads, -1, -1)
        rel_v = self.rel_v if self.per_head else self.rel_v.unsqueeze(0).expand(self.heads, -1, -1)
        index = relpos.unsqueeze(1).expand(b, self.heads, m, m)

        # q_i . (k_j + p_ij) = q_i . k_j + q_i . p[rel_ij]
        q_rel = torch.einsum("bhid,hcd->bhic", q, rel_k)
        logits = (q @ k.transpose(-1, -2) + torch.gather(q_rel, -1, index)) / math.sqrt(self.d_head)
        if key_mask is not None:
            logits = logits.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(logits, dim=-1)

        # sum_j a_ij p[rel_ij]: pool the weights per category first
        pooled = torch.zeros(b, self.heads, m, rel_v.shape[1], dtype=weights.dtype).scatter_add_(-1, index, weights)
        heads_out = weights @ v + torch.einsum("bhic,hcd->bhid", pooled, rel_v)
        return heads_out.transpose(1, 2).reshape(b, m, self.d_model), weights


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(d_model, d_ff), nn.ReLU(), nn.Linear(d_ff, d_model))

    def forward(self, x):
        return self.net(x)


class EncoderLayer(nn.Module):
    def __init__(self, d_model: int, heads: int, d_ff: int, num_categories: int, per_head: bool = False):
        super().__init__()
        self.attn = RelPosSelfAttention(d_model, heads, num_categories, per_head)
        self.proj = nn.Linear(d_model, d_model)
        self.norm1 = nn.LayerNorm(d_model)
        self.ff = FeedForward(d_model, d_ff)
        self.norm2 = nn.LayerNorm(d_model)

    def forward(self, x, relpos, key_mask=None):
        heads_out, weights = self.attn(x, relpos, key_mask)
        x = self.norm1(x + self.proj(heads_out))
        x = self.norm2(x + self.ff(x))
        return x, weights


@dataclass
class InputMemory:
    """Encoder output for a batch of lattices, padded to the longest one."""

    H: torch.Tensor
    key_mask: torch.Tensor
    lattices: list[SourceLattice]

    @property
    def batch_size(self) -> int:
        return self.H.shape[0]

    def select(self, rows: Sequence[int]) -> "InputMemory":
        idx = torch.tensor(list(rows), dtype=torch.long)
        return InputMemory(self.H[idx], self.key_mask[idx], [self.lattices[i] for i in rows])

    def expand(self, n: int) -> "InputMemory":
        if self.batch_size != 1:
            raise ValueError("only a single-item memory can be expanded")
        return InputMemory(
            self.H.expand(n, -1, -1), self.key_mask.expand(n, -1), self.lattices * n
        )


class LatticeEncoder(nn.Module):
    def __init__(
        self,
        embedding: nn.Embedding,
        d_model: int,
        heads: int,
        d_ff: int,
        layers: int,
        r: int,
        pos_encoding: str = "sinusoidal",
        relpos_per_head: bool = False,
        max_len: int = 512,
    ):
        super().__init__()
        self.r = r
        self.embedder = TokenEmbedder(embedding, d_model)
        self.scale = math.sqrt(d_model)
        self.position = PositionEncoding(d_model, pos_encoding, max_len)
        self.layers = nn.ModuleList(
            EncoderLayer(d_model, heads, d_ff, 2 * r + 4, relpos_per_head) for _ in range(layers)
        )

    def input_representation(self, lattices: Sequence[SourceLattice], vocab: CharVocab):
        """Token vectors plus absolute-position encodings, padded to ``(B, M, d)``.

        Composed vectors are scaled by sqrt(d), as ordinary Transformer
        embeddings are, so content is not drowned out by the position signal.
        """
        char_ids = [vocab.encode(t.chars) for lat in lattices for t in lat.tokens]
        g = self.embedder(char_ids) * self.scale
        sizes = [len(lat) for lat in lattices]
        m = max(sizes)
        G = g.new_zeros(len(lattices), m, g.shape[-1])
        positions = torch.zeros(len(lattices), m, dtype=torch.long)
        key_mask = torch.zeros(len(lattices), m, dtype=torch.bool)
        relpos = torch.zeros(len(lattices), m, m, dtype=torch.long)
        offset = 0
        for b, lat in enumerate(lattices):
            n = len(lat)
            G[b, :n] = g[offset:offset + n]
            positions[b, :n] = torch.tensor(lat.abs_pos)
            key_mask[b, :n] = True
            relpos[b, :n, :n] = torch.from_numpy(lat.relpos.copy())
            offset += n
            if lat.r != self.r:
                raise ValueError(f"lattice built with r={lat.r}, encoder expects r={self.r}")
        G = G + self.position(positions, G.dtype) * key_mask.unsqueeze(-1)
        return G, relpos, key_mask

    def forward(self, lattices: Sequence[SourceLattice], vocab: CharVocab) -> InputMemory:
        if not lattices or any(len(lat) == 0 for lat in lattices):
            raise ValueError("cannot encode an empty lattice")
        x, relpos, key_mask = self.input_representation(lattices, vocab)
        for layer in self.layers:
            x, _ = layer(x, relpos, key_mask)
        return InputMemory(x, key_mask, list(lattices))
