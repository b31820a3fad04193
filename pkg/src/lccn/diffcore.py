"""Differentiable substrate: thin shape-checked ops over torch, optimizer,
learning-rate schedule, finite-difference checks and checkpoint IO."""
from __future__ import annotations

import math
import random
import struct
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

DEFAULT_DTYPE = torch.float64

ADAM_BETAS = (0.9, 0.98)
ADAM_EPS = 1e-9

CHECKPOINT_MAGIC = b"LCCNCKPT"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


def set_seed(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)


def _shape(t: torch.Tensor) -> tuple[int, ...]:
    return tuple(t.shape)


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.dim() < 1 or b.dim() < 1 or a.shape[-1] != b.shape[-2 if b.dim() > 1 else 0]:
        raise ShapeError(f"matmul shape mismatch: {_shape(a)} @ {_shape(b)}")
    return a @ b


def add(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError:
        raise ShapeError(f"add shape mismatch: {_shape(a)} + {_shape(b)}") from None
    return a + b


def concat(tensors: Sequence[torch.Tensor], dim: int = -1) -> torch.Tensor:
    ref = tensors[0]
    for t in tensors[1:]:
        if t.dim() != ref.dim() or any(
            x != y for k, (x, y) in enumerate(zip(ref.shape, t.shape)) if k != dim % ref.dim()
        ):
            raise ShapeError(f"concat shape mismatch: {_shape(ref)} and {_shape(t)} along dim {dim}")
    return torch.cat(list(tensors), dim=dim)


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(x)


def softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    # torch subtracts the max internally
    return torch.softmax(x, dim=dim)


def log_softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return torch.log_softmax(x, dim=dim)


def logsumexp(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return torch.logsumexp(x, dim=dim)


def layer_norm(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    if _shape(weight) != _shape(bias) or x.shape[-weight.dim():] != weight.shape:
        raise ShapeError(f"layer_norm shape mismatch: input {_shape(x)} and weight {_shape(weight)}")
    return F.layer_norm(x, weight.shape, weight, bias, eps)


def embedding_lookup(table: torch.Tensor, ids: torch.Tensor) -> torch.Tensor:
    if ids.numel() and (int(ids.max()) >= table.shape[0] or int(ids.min()) < 0):
        raise ShapeError(f"embedding ids out of range for table {_shape(table)}: ids shape {_shape(ids)}")
    return F.embedding(ids, table)


def slice_rows(x: torch.Tensor, start: int, stop: int) -> torch.Tensor:
    if not 0 <= start <= stop <= x.shape[0]:
        raise ShapeError(f"slice [{start}:{stop}] out of range for shape {_shape(x)}")
    return x[start:stop]


def backward(loss: torch.Tensor) -> None:
    """Backpropagate a scalar loss once; a second call on the same graph raises."""
    if loss.dim() != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {_shape(loss)}")
    if getattr(loss, "_lccn_consumed", False):
        raise RuntimeError("backward already called on this loss; rebuild the graph first")
    loss.backward()
    loss._lccn_consumed = True


def make_adam(params: Iterable[torch.nn.Parameter], lr: float = 1e-3) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, betas=ADAM_BETAS, eps=ADAM_EPS)


def noam_lr(step: int, d_model: int, warmup: int = 4000, scale: float = 1.0) -> float:
    if step < 1:
        raise ValueError("learning-rate schedule starts at step 1")
    return scale * d_model**-0.5 * min(step**-0.5, step * warmup**-1.5)


class NoamSchedule:
    """Sets the optimizer learning rate before every step."""

    def __init__(self, optimizer: torch.optim.Optimizer, d_model: int, warmup: int = 4000, scale: float = 1.0):
        self.optimizer = optimizer
        self.d_model = d_model
        self.warmup = warmup
        self.scale = scale
        self.step_num = 0

    def step(self) -> float:
        self.step_num += 1
        lr = noam_lr(self.step_num, self.d_model, self.warmup, self.scale)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        return lr


def relative_error(analytic: float, numeric: float, floor: float = 1e-7) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_difference_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Mapping[str, torch.nn.Parameter],
    n_samples: int = 50,
    h: float = 1e-5,
    rng: random.Random | None = None,
    floor: float | None = None,
) -> list[tuple[str, tuple[int, ...], float, float, float]]:
    """Compare autograd against central differences on randomly chosen entries.

    Returns ``(name, index, analytic, numeric, rel_err)`` per sampled entry.
    The relative-error denominator is floored at ``floor``; by default the floor
    is the gradient magnitude at which the central difference's round-off
    (about eps * |loss| / h) equals a relative error of 1e-4, so entries too
    small to be resolved numerically are judged on absolute error instead.
    """
    rng = rng or random.Random(0)
    named = [(n, p) for n, p in params.items() if p.requires_grad and p.numel()]
    for _, p in named:
        p.grad = None
    loss = loss_fn()
    if floor is None:
        eps = torch.finfo(loss.dtype).eps
        floor = max(1e-7, eps * max(1.0, abs(loss.item())) / h / 1e-4)
    backward(loss)
    grads = {n: torch.zeros_like(p) if p.grad is None else p.grad.detach().clone() for n, p in named}

    sizes = [p.numel() for _, p in named]
    total = sum(sizes)
    results = []
    with torch.no_grad():
        for _ in range(n_samples):
            flat = rng.randrange(total)
            for (name, p), size in zip(named, sizes):
                if flat < size:
                    break
                flat -= size
            idx = tuple(int(i) for i in np.unravel_index(flat, tuple(p.shape)))
            orig = p[idx].item()
            p[idx] = orig + h
            plus = loss_fn().item()
            p[idx] = orig - h
            minus = loss_fn().item()
            p[idx] = orig
            numeric = (plus - minus) / (2 * h)
            analytic = grads[name][idx].item()
            results.append((name, idx, analytic, numeric, relative_error(analytic, numeric, floor)))
    return results


def save_checkpoint(path: str | Path, tensors: Mapping[str, torch.Tensor]) -> None:
    """Flat named map: header, then per entry name, shape and little-endian float64 payload."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(tensors)))
        for name, t in tensors.items():
            raw = name.encode("utf-8")
            arr = t.detach().cpu().to(torch.float64).numpy()
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> dict[str, torch.Tensor]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, count = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + n].decode("utf-8")
        off += n
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        size = int(math.prod(shape))
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape)
        off += 8 * size
        out[name] = torch.from_numpy(arr.copy())
    return out
