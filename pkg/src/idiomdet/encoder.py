"""A small pre-norm transformer encoder with a pooled softmax classifier head.

Dropout draws from an explicit ``torch.Generator`` so that stochastic forwards
are reproducible and two R-drop passes can be replayed exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .tokenizer import TokenizedInput

POOLINGS = ("cls", "mean", "max", "first_last_avg", "mwe_token")


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    dim: int = 64
    layers: int = 2
    heads: int = 4
    ffn_dim: int = 128
    dropout_rate: float = 0.1
    max_position: int = 128
    pooling: str = "cls"
    num_classes: int = 2

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.pooling not in POOLINGS:
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if self.num_classes != 2:
            raise ValueError("only binary classification is supported")


@dataclass
class Batch:
    ids: torch.Tensor  # (B, L) long
    mask: torch.Tensor  # (B, L) long, 1 = real token
    mwe_range: torch.Tensor  # (B, 2) long, -1 when absent

    def __len__(self) -> int:
        return self.ids.shape[0]


def collate(items: Sequence[TokenizedInput], pad_id: int = 0) -> Batch:
    width = max(len(x) for x in items)
    ids = torch.full((len(items), width), pad_id, dtype=torch.long)
    mask = torch.zeros((len(items), width), dtype=torch.long)
    rng = torch.full((len(items), 2), -1, dtype=torch.long)
    for row, x in enumerate(items):
        ids[row, : len(x)] = torch.tensor(x.ids)
        mask[row, : len(x)] = torch.tensor(x.attention_mask)
        if x.mwe_token_range is not None:
            rng[row] = torch.tensor(x.mwe_token_range)
    return Batch(ids, mask, rng)


@dataclass
class ForwardOutput:
    hidden_states: list  # layers + 1 tensors of shape (B, L, dim)
    sentence_vector: torch.Tensor
    logits: torch.Tensor
    probabilities: torch.Tensor
    embeddings: torch.Tensor  # token + position embeddings, before dropout
    attentions: list  # per layer (B, heads, L, L)


def dropout(x: torch.Tensor, p: float, on: bool, generator: Optional[torch.Generator]) -> torch.Tensor:
    if not on or p == 0.0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device) >= p
    return x * keep / (1.0 - p)


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x, mask, p, on, gen):
        b, n, d = x.shape
        q, k, v = self.qkv(x).view(b, n, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // self.heads)
        scores = scores.masked_fill(mask[:, None, None, :] == 0, float("-inf"))
        attn = scores.softmax(-1)
        ctx = dropout(attn, p, on, gen) @ v
        return self.out(ctx.transpose(1, 2).reshape(b, n, d)), attn


class Block(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.dim)
        self.attn = SelfAttention(cfg.dim, cfg.heads)
        self.norm2 = nn.LayerNorm(cfg.dim)
        self.ffn_in = nn.Linear(cfg.dim, cfg.ffn_dim)
        self.ffn_out = nn.Linear(cfg.ffn_dim, cfg.dim)
        self.p = cfg.dropout_rate

    def forward(self, x, mask, on, gen):
        h, attn = self.attn(self.norm1(x), mask, self.p, on, gen)
        x = x + dropout(h, self.p, on, gen)
        h = self.ffn_out(dropout(F.gelu(self.ffn_in(self.norm2(x))), self.p, on, gen))
        return x + dropout(h, self.p, on, gen), attn


def pool(hidden_states, mask: torch.Tensor, pooling: str, mwe_range: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Reduce per-token states to one vector per row.

    ``mwe_token`` averages the final-layer vectors inside the MWE range and
    falls back to the ``[CLS]`` vector for rows without a range.
    """
    if (mask.sum(-1) == 0).any():
        raise ValueError("every row needs at least one real token")
    last = hidden_states[-1]
    m = mask.unsqueeze(-1).to(last.dtype)
    if pooling == "cls":
        return last[:, 0]
    if pooling == "mean":
        return (last * m).sum(1) / m.sum(1)
    if pooling == "max":
        return last.masked_fill(m == 0, float("-inf")).max(1).values
    if pooling == "first_last_avg":
        avg = (hidden_states[0] + last) / 2
        return (avg * m).sum(1) / m.sum(1)
    if pooling == "mwe_token":
        if mwe_range is None:
            return last[:, 0]
        pos = torch.arange(last.shape[1], device=last.device)
        inside = (pos >= mwe_range[:, :1]) & (pos <= mwe_range[:, 1:]) & (mwe_range[:, :1] >= 0)
        inside = (inside & (mask > 0)).unsqueeze(-1).to(last.dtype)
        count = inside.sum(1)
        mwe_vec = (last * inside).sum(1) / count.clamp(min=1)
        return torch.where(count > 0, mwe_vec, last[:, 0])
    raise ValueError(f"unknown pooling {pooling!r}")


class EncoderClassifier(nn.Module):
    def __init__(self, cfg: EncoderConfig, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.config = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.dim)
        self.pos_emb = nn.Embedding(cfg.max_position, cfg.dim)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.layers))
        self.norm = nn.LayerNorm(cfg.dim)
        self.classifier = nn.Linear(cfg.dim, cfg.num_classes)
        self.reset_parameters(generator)

    @torch.no_grad()
    def reset_parameters(self, generator: Optional[torch.Generator] = None) -> None:
        for name, p in self.named_parameters():
            if "norm" in name:
                p.fill_(1.0 if name.endswith("weight") else 0.0)
            elif name.endswith("bias"):
                p.zero_()
            else:
                nn.init.trunc_normal_(p, std=0.02, a=-0.04, b=0.04, generator=generator)

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        if ids.shape[1] > cfg.max_position:
            raise ValueError(f"sequence length {ids.shape[1]} exceeds max_position {cfg.max_position}")
        if ids.numel() and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
            raise ValueError(f"token id outside [0, {cfg.vocab_size})")
        pos = torch.arange(ids.shape[1], device=ids.device)
        return self.tok_emb(ids) + self.pos_emb(pos)[None]

    def encode(
        self,
        embeddings: torch.Tensor,
        batch: Batch,
        dropout_on: bool = False,
        generator: Optional[torch.Generator] = None,
    ) -> ForwardOutput:
        p = self.config.dropout_rate
        x = dropout(embeddings, p, dropout_on, generator)
        hidden = [x]
        attentions = []
        for block in self.blocks:
            x, attn = block(x, batch.mask, dropout_on, generator)
            hidden.append(x)
            attentions.append(attn)
        hidden[-1] = self.norm(x)
        vec = pool(hidden, batch.mask, self.config.pooling, batch.mwe_range)
        logits = self.classifier(dropout(vec, p, dropout_on, generator))
        return ForwardOutput(hidden, vec, logits, logits.softmax(-1), embeddings, attentions)

    def forward(
        self,
        batch: Batch,
        dropout_on: bool = False,
        generator: Optional[torch.Generator] = None,
        perturbation: Optional[torch.Tensor] = None,
    ) -> ForwardOutput:
        emb = self.embed(batch.ids)
        if perturbation is not None:
            emb = emb + perturbation
        return self.encode(emb, batch, dropout_on, generator)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    state: dict  # parameter name -> float32 tensor
    config: EncoderConfig
    step: int = 0
    rng_state: Optional[torch.Tensor] = None
    extra: Optional[dict] = None  # JSON-serialisable side data (vocab, build policy, ...)

    @classmethod
    def from_model(cls, model: EncoderClassifier, step: int = 0, generator=None, extra=None) -> "Checkpoint":
        state = {k: v.detach().to(torch.float32).clone() for k, v in model.state_dict().items()}
        rng = generator.get_state().clone() if generator is not None else None
        return cls(state, model.config, step, rng, extra or {})

    def build_model(self) -> EncoderClassifier:
        model = EncoderClassifier(self.config)
        model.load_state_dict(self.state)
        return model


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write a safetensors file: float32 parameters plus a JSON metadata section."""
    from safetensors.torch import save_file

    # sorted insertion keeps the header byte-stable across save/load/save
    tensors = {k: ckpt.state[k].detach().to(torch.float32).contiguous() for k in sorted(ckpt.state)}
    if ckpt.rng_state is not None:
        tensors["__rng_state__"] = ckpt.rng_state.to(torch.uint8).contiguous()
    # one metadata key: safetensors writes multi-key metadata in hash order
    meta = {
        "idiomdet": json.dumps(
            {"config": asdict(ckpt.config), "step": ckpt.step, "extra": ckpt.extra or {}}, sort_keys=True
        )
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    save_file(tensors, str(tmp), metadata=meta)
    tmp.replace(path)


def _check_config(found: EncoderConfig, expected: EncoderConfig) -> None:
    for f in fields(EncoderConfig):
        if getattr(found, f.name) != getattr(expected, f.name):
            raise CheckpointError(
                f"checkpoint config mismatch on {f.name!r}: "
                f"checkpoint has {getattr(found, f.name)!r}, expected {getattr(expected, f.name)!r}"
            )


def load_checkpoint(path, expected: Optional[EncoderConfig] = None) -> Checkpoint:
    from safetensors import safe_open

    with safe_open(str(path), framework="pt") as f:
        meta = f.metadata() or {}
        tensors = {k: f.get_tensor(k) for k in f.keys()}
    if "idiomdet" not in meta:
        raise CheckpointError(f"{path}: no config section")
    meta = json.loads(meta["idiomdet"])
    config = EncoderConfig(**meta["config"])
    if expected is not None:
        _check_config(config, expected)
    rng = tensors.pop("__rng_state__", None)
    return Checkpoint(tensors, config, int(meta["step"]), rng, meta["extra"])
