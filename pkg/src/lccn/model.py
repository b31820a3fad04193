from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import torch
import torch.nn as nn

from . import diffcore
from .decoder import CopyModule, ExtendedDistribution, MaskMode, StepOutputs, TransformerDecoder
from .encoder import InputMemory, LatticeEncoder
from .lattice import SourceLattice
from .vocab import CharVocab


@dataclass
class ModelConfig:
    d_model: int = 64
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    d_ff: int = 128
    r: int = 8
    pos_encoding: str = "sinusoidal"
    relpos_per_head: bool = False
    max_len: int = 512

    @classmethod
    def preset(cls, name: str, **overrides) -> "ModelConfig":
        presets = {
            "desk": dict(d_model=64, heads=4, enc_layers=2, dec_layers=2, d_ff=128, r=8),
            "paper": dict(d_model=512, heads=8, enc_layers=6, dec_layers=6, d_ff=1024, r=8),
        }
        if name not in presets:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(presets)}")
        return cls(**{**presets[name], **overrides})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, v in d.items():
            if k not in known:
                continue
            if known[k] in ("int", int):
                v = int(v)
            elif known[k] in ("bool", bool):
                v = v if isinstance(v, bool) else str(v).lower() in ("1", "true", "yes")
            out[k] = v
        return cls(**out)


class LCCN(nn.Module):
    """Lattice encoder, character decoder and lexicon-constrained copy module."""

    def __init__(self, vocab: CharVocab, cfg: ModelConfig | None = None, dtype=diffcore.DEFAULT_DTYPE):
        super().__init__()
        self.vocab = vocab
        self.cfg = cfg = cfg or ModelConfig()
        self.embedding = nn.Embedding(len(vocab), cfg.d_model)
        self.encoder = LatticeEncoder(
            self.embedding, cfg.d_model, cfg.heads, cfg.d_ff, cfg.enc_layers, cfg.r,
            cfg.pos_encoding, cfg.relpos_per_head, cfg.max_len,
        )
        self.decoder = TransformerDecoder(
            self.embedding, cfg.d_model, cfg.heads, cfg.d_ff, cfg.dec_layers, cfg.pos_encoding, cfg.max_len
        )
        self.copy = CopyModule(cfg.d_model, len(vocab))
        self.to(dtype)

    def encode(self, lattices: Sequence[SourceLattice] | SourceLattice) -> InputMemory:
        if isinstance(lattices, SourceLattice):
            lattices = [lattices]
        return self.encoder(lattices, self.vocab)

    def prefix_ids(self, prefixes: Sequence[str]) -> torch.Tensor:
        t = max((len(p) for p in prefixes), default=0)
        ids = torch.zeros(len(prefixes), t, dtype=torch.long)
        for b, p in enumerate(prefixes):
            if p:
                ids[b, : len(p)] = torch.tensor(self.vocab.encode(p))
        return ids

    def decode_states(self, prefixes: Sequence[str], memory: InputMemory) -> torch.Tensor:
        return self.decoder(self.prefix_ids(prefixes), memory)

    def outputs(self, states, memory: InputMemory, keep=None, mode=MaskMode.HARD) -> StepOutputs:
        return self.copy(states, memory, keep, mode)

    def distributions(self, lattice: SourceLattice, y: str, keep=None, mode=MaskMode.HARD,
                      memory: InputMemory | None = None) -> list[ExtendedDistribution]:
        """Extended distributions after each prefix ``y[:t]``, ``t = 0..len(y)``."""
        memory = memory or self.encode(lattice)
        states = self.decode_states([y], memory)
        out = self.outputs(states, memory, keep, mode)
        return [ExtendedDistribution.from_outputs(out, 0, t, lattice, self.vocab) for t in range(len(y) + 1)]

    def named_tensors(self) -> dict[str, torch.Tensor]:
        return {name: p for name, p in self.named_parameters()}

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        diffcore.save_checkpoint(directory / "params.ckpt", self.named_tensors())
        self.vocab.save(directory / "vocab.json")
        with open(directory / "model.cfg", "w", encoding="utf-8") as f:
            for k, v in self.cfg.to_dict().items():
                f.write(f"{k}={v}\n")

    @classmethod
    def load(cls, directory: str | Path, dtype=diffcore.DEFAULT_DTYPE) -> "LCCN":
        directory = Path(directory)
        with open(directory / "model.cfg", encoding="utf-8") as f:
            cfg = ModelConfig.from_dict(dict(line.rstrip("\n").split("=", 1) for line in f if "=" in line))
        model = cls(CharVocab.load(directory / "vocab.json"), cfg, dtype)
        load_parameters(model, diffcore.load_checkpoint(directory / "params.ckpt"))
        return model


def load_parameters(module: nn.Module, tensors: dict[str, torch.Tensor]) -> None:
    params = dict(module.named_parameters())
    missing = set(params) - set(tensors)
    if missing:
        raise ValueError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
    with torch.no_grad():
        for name, p in params.items():
            if tuple(tensors[name].shape) != tuple(p.shape):
                raise ValueError(f"{name}: checkpoint shape {tuple(tensors[name].shape)} != {tuple(p.shape)}")
            p.copy_(tensors[name].to(p.dtype))
