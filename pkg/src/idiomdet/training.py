"""Training objectives, learning-rate schedule, the training loop and ensembling."""

from __future__ import annotations

import copy
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import torch
import torch.nn.functional as F

from .corpus import Dataset
from .encoder import Batch, Checkpoint, EncoderClassifier, EncoderConfig, collate, load_checkpoint
from .metrics import macro_f1
from .postprocess import PredictionSet, argmax_label
from .preprocess import BuildPolicy, aeda_augment, build_example
from .tokenizer import Vocab, WordTokenizer, build_vocab

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


class TrainingDivergedError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    lr_zero_shot: float = 1e-5
    lr_one_shot: float = 3e-5
    batch_size: int = 32
    epochs: int = 20
    warmup_fraction: float = 0.10
    rdrop_alpha: float = 0.0
    fgm_epsilon: float = 0.0
    contrastive_weight: float = 0.0
    contrastive_temperature: float = 0.05
    aeda_enabled: bool = False
    seed: int = 0
    weight_decay: float = 0.01
    min_freq: int = 1

    def __post_init__(self):
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.rdrop_alpha < 0 or self.fgm_epsilon < 0 or self.contrastive_weight < 0:
            raise ValueError("objective weights must be non-negative")
        if self.contrastive_temperature <= 0:
            raise ValueError("contrastive_temperature must be positive")

    def lr_for(self, setting: str) -> float:
        return self.lr_one_shot if setting == "one_shot" else self.lr_zero_shot

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in dataclasses.asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        return cls(**coerce_fields(cls, parse_key_values(text)))


def parse_key_values(text: str) -> dict[str, str]:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _coerce(raw: str, typ):
    if typ in (bool, "bool"):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if typ in (int, "int"):
        return int(raw)
    if typ in (float, "float"):
        return float(raw)
    return raw


def coerce_fields(cls, values: dict[str, str], strict: bool = True) -> dict:
    known = {f.name: f.type for f in dataclasses.fields(cls)}
    unknown = set(values) - set(known)
    if strict and unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {', '.join(sorted(unknown))}")
    return {k: _coerce(v, known[k]) for k, v in values.items() if k in known}


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    kl: float
    contrastive: float = 0.0
    adversarial_ce: float = 0.0
    total: float = 0.0


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(x, dtype=torch.float64)


def kl_div(p, q) -> torch.Tensor:
    """KL(p || q) over the last axis, entries floored at 1e-12 before the log."""
    p, q = _as_tensor(p), _as_tensor(q)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {tuple(p.shape)} vs {tuple(q.shape)}")
    p_c, q_c = p.clamp_min(PROB_FLOOR), q.clamp_min(PROB_FLOOR)
    return (p * (p_c.log() - q_c.log())).sum(-1)


def rdrop_loss(p1, p2, y: int, alpha: float) -> LossBreakdown:
    """Per-example R-drop loss from two dropout-independent output distributions."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    p1, p2 = _as_tensor(p1), _as_tensor(p2)
    ce = -(p1[y].clamp_min(PROB_FLOOR).log() + p2[y].clamp_min(PROB_FLOOR).log())
    kl = (kl_div(p1, p2) + kl_div(p2, p1)) / 2
    ce, kl = float(ce), float(kl)
    return LossBreakdown(ce=ce, kl=kl, total=ce + alpha * kl)


def rdrop_terms(logits1: torch.Tensor, logits2: torch.Tensor, labels: torch.Tensor):
    """Per-example doubled cross-entropy and symmetric KL, computed from logits."""
    ce = F.cross_entropy(logits1, labels, reduction="none") + F.cross_entropy(logits2, labels, reduction="none")
    lp1, lp2 = logits1.log_softmax(-1), logits2.log_softmax(-1)
    kl12 = (lp1.exp() * (lp1 - lp2)).sum(-1)
    kl21 = (lp2.exp() * (lp2 - lp1)).sum(-1)
    return ce, (kl12 + kl21) / 2


def fgm_perturb(grad: torch.Tensor, epsilon: float) -> torch.Tensor:
    """``epsilon * g / ||g||`` over the whole tensor; zero for a vanishing gradient."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    norm = torch.linalg.vector_norm(grad)
    if norm < 1e-12:
        return torch.zeros_like(grad)
    return epsilon * grad / norm


def contrastive_auxiliary_loss(reps1: torch.Tensor, reps2: torch.Tensor, temperature: float) -> torch.Tensor:
    """Symmetric InfoNCE on cosine similarities; row i of each view is a positive pair."""
    if reps1.shape[0] < 2:
        raise ValueError("contrastive loss needs a batch of at least 2")
    sim = F.normalize(reps1, dim=-1) @ F.normalize(reps2, dim=-1).T / temperature
    target = torch.arange(sim.shape[0], device=sim.device)
    return (F.cross_entropy(sim, target) + F.cross_entropy(sim.T, target)) / 2


def warmup_steps(total_steps: int, warmup_fraction: float) -> int:
    # round first: 0.1 * 30 == 3.0000000000000004 must not ceil to 4
    return max(1, math.ceil(round(warmup_fraction * total_steps, 9)))


def lr_at(step: int, total_steps: int, base_lr: float, warmup_fraction: float) -> float:
    """Linear warmup to ``base_lr`` followed by half-cosine decay to zero."""
    if total_steps < 1 or not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    w = warmup_steps(total_steps, warmup_fraction)
    if step <= w:
        return base_lr * (step / w)
    t = (step - w) / (total_steps - w)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * t))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def make_optimizer(model: torch.nn.Module, lr: float, weight_decay: float) -> torch.optim.Optimizer:
    decay, no_decay = [], []
    for name, p in model.named_parameters():
        (no_decay if name.endswith("bias") or "norm" in name else decay).append(p)
    groups = [{"params": decay, "weight_decay": weight_decay}, {"params": no_decay, "weight_decay": 0.0}]
    return torch.optim.AdamW(groups, lr=lr)


def training_step(
    model: EncoderClassifier,
    batch: Batch,
    labels: torch.Tensor,
    cfg: TrainConfig,
    optimizer: torch.optim.Optimizer,
    lr: float,
    generator: torch.Generator,
) -> LossBreakdown:
    """One update: two dropout passes (doubled CE, weighted KL and contrastive
    terms), an optional FGM pass on the embedding output, then AdamW."""
    optimizer.zero_grad(set_to_none=True)
    out1 = model(batch, dropout_on=True, generator=generator)
    out2 = model(batch, dropout_on=True, generator=generator)
    if cfg.fgm_epsilon > 0:
        out1.embeddings.retain_grad()
        out2.embeddings.retain_grad()

    ce, kl = rdrop_terms(out1.logits, out2.logits, labels)
    ce, kl = ce.mean(), kl.mean()
    loss = ce
    if cfg.rdrop_alpha > 0:
        loss = loss + cfg.rdrop_alpha * kl
    contrastive = torch.zeros(())
    if cfg.contrastive_weight > 0 and len(batch) >= 2:
        contrastive = contrastive_auxiliary_loss(out1.sentence_vector, out2.sentence_vector, cfg.contrastive_temperature)
        loss = loss + cfg.contrastive_weight * contrastive
    loss.backward()

    adversarial = torch.zeros(())
    if cfg.fgm_epsilon > 0:
        grad = out1.embeddings.grad + out2.embeddings.grad
        delta = fgm_perturb(grad, cfg.fgm_epsilon)
        adv_out = model(batch, dropout_on=True, generator=generator, perturbation=delta)
        adversarial = F.cross_entropy(adv_out.logits, labels)
        adversarial.backward()

    total = loss.detach() + adversarial.detach()
    if not torch.isfinite(total):
        raise TrainingDivergedError(
            f"non-finite loss: ce={ce.item()} kl={kl.item()} contrastive={contrastive.item()} "
            f"adversarial={adversarial.item()} lr={lr}"
        )
    for g in optimizer.param_groups:
        g["lr"] = lr
    optimizer.step()
    return LossBreakdown(
        ce=ce.item(), kl=kl.item(), contrastive=contrastive.item(), adversarial_ce=adversarial.item(), total=total.item()
    )


@dataclass
class Encoded:
    items: list
    labels: torch.Tensor


def encode_dataset(dataset: Dataset, tokenizer, policy: BuildPolicy, aeda_seed: Optional[int] = None) -> Encoded:
    texts = [build_example(inst, policy) for inst in dataset]
    labels = [inst.label if inst.label is not None else -1 for inst in dataset]
    if aeda_seed is not None:
        texts = texts + [aeda_augment(t, aeda_seed * 1_000_003 + k, policy.sep) for k, t in enumerate(texts)]
        labels = labels + labels
    items = [tokenizer.tokenize(t, policy.max_tokens) for t in texts]
    return Encoded(items, torch.tensor(labels, dtype=torch.long))


@torch.no_grad()
def predict_proba(model: EncoderClassifier, items: Sequence, batch_size: int = 256, pad_id: int = 0) -> torch.Tensor:
    probs = []
    for i in range(0, len(items), batch_size):
        probs.append(model(collate(items[i : i + batch_size], pad_id)).probabilities)
    if not probs:
        return torch.zeros((0, 2))
    return torch.cat(probs)


def labels_from_proba(probs: torch.Tensor) -> list[int]:
    return [argmax_label(row) for row in probs.tolist()]


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best_dev_f1(self) -> float:
        return self.history[self.best_epoch - 1]["dev_macro_f1"]


def train(
    train_data: Dataset,
    dev_data: Dataset,
    cfg: TrainConfig = TrainConfig(),
    enc: Optional[EncoderConfig] = None,
    policy: BuildPolicy = BuildPolicy(),
    setting: str = "zero_shot",
    init: Optional[Checkpoint] = None,
) -> TrainResult:
    """Train an encoder-classifier and keep the best-on-dev epoch.

    The vocabulary comes from ``train_data`` (or from ``init`` when warm
    starting, whose parameters and vocabulary are reused; optimizer state is
    not). ``enc.vocab_size`` is overwritten with the actual vocabulary size.
    Ties in dev Macro F1 keep the earliest epoch.
    """
    if not dev_data.labeled or len(dev_data) == 0:
        raise ValueError("dev data must be non-empty and labeled")
    if not train_data.labeled or len(train_data) == 0:
        raise ValueError("training data must be non-empty and labeled")

    generator = torch.Generator().manual_seed(cfg.seed)
    if init is not None:
        vocab = Vocab(init.extra["vocab"])
        enc = init.config
        model = init.build_model()
        start_step = init.step
    else:
        vocab = build_vocab(train_data, cfg.min_freq)
        enc = dataclasses.replace(enc or EncoderConfig(vocab_size=len(vocab)), vocab_size=len(vocab))
        model = EncoderClassifier(enc, generator)
        start_step = 0
    if enc.max_position < policy.max_tokens:
        raise ValueError("encoder max_position is smaller than policy max_tokens")
    tokenizer = WordTokenizer(vocab, policy.sep)

    train_enc = encode_dataset(train_data, tokenizer, policy, cfg.seed if cfg.aeda_enabled else None)
    dev_enc = encode_dataset(dev_data, tokenizer, policy)
    dev_gold = dev_enc.labels.tolist()

    base_lr = cfg.lr_for(setting)
    optimizer = make_optimizer(model, base_lr, cfg.weight_decay)
    n = len(train_enc.items)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs

    history: list[dict] = []
    best = (-1.0, None, 0, 0, None)  # f1, state, epoch, step, rng
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = torch.randperm(n, generator=generator).tolist()
        sums = {"ce": 0.0, "kl": 0.0, "adversarial_ce": 0.0, "contrastive": 0.0, "total": 0.0}
        lr = 0.0
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            batch = collate([train_enc.items[i] for i in idx], vocab.pad_id)
            step += 1
            lr = lr_at(step, total_steps, base_lr, cfg.warmup_fraction)
            try:
                losses = training_step(model, batch, train_enc.labels[idx], cfg, optimizer, lr, generator)
            except TrainingDivergedError as e:
                raise TrainingDivergedError(f"epoch {epoch} step {step}: {e}") from None
            for k in sums:
                sums[k] += getattr(losses, k)
        dev_f1 = macro_f1(dev_gold, labels_from_proba(predict_proba(model, dev_enc.items, pad_id=vocab.pad_id)))
        record = {k: v / steps_per_epoch for k, v in sums.items()}
        record.update(epoch=epoch, dev_macro_f1=dev_f1, lr=lr)
        history.append(record)
        log.info("epoch %d ce=%.4f kl=%.4f dev_f1=%.4f", epoch, record["ce"], record["kl"], dev_f1)
        if dev_f1 > best[0]:
            state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            best = (dev_f1, state, epoch, start_step + step, generator.get_state().clone())

    _, state, best_epoch, best_step, rng = best
    extra = {
        "vocab": vocab.itos,
        "policy": dataclasses.asdict(policy),
        "setting": setting,
        "epoch": best_epoch,
    }
    ckpt = Checkpoint(state, enc, best_step, rng, extra)
    return TrainResult(ckpt, history, best_epoch)


def write_history(history: Sequence[dict], path) -> None:
    keys = ("epoch", "ce", "kl", "adversarial_ce", "contrastive", "total", "dev_macro_f1", "lr")
    with open(path, "w", encoding="utf-8") as f:
        for rec in history:
            f.write(json.dumps({k: rec[k] for k in keys}) + "\n")


def read_history(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line]


# ---------------------------------------------------------------------------
# inference and fusion
# ---------------------------------------------------------------------------


def checkpoint_policy(ckpt: Checkpoint) -> BuildPolicy:
    return BuildPolicy(**(ckpt.extra or {}).get("policy", {}))


def checkpoint_proba(ckpt: Checkpoint, data: Dataset) -> torch.Tensor:
    vocab = Vocab(ckpt.extra["vocab"])
    policy = checkpoint_policy(ckpt)
    model = ckpt.build_model()
    items = encode_dataset(data, WordTokenizer(vocab, policy.sep), policy).items
    return predict_proba(model, items, pad_id=vocab.pad_id)


@dataclass(frozen=True)
class EnsembleSpec:
    checkpoints: tuple
    fusion: str = "mean_prob"


def ensemble_predict(spec, data: Dataset) -> PredictionSet:
    """Arithmetic mean of member probabilities; argmax with ties going to label 1.

    ``spec`` is an :class:`EnsembleSpec` or a plain sequence whose members are
    checkpoint paths or loaded :class:`Checkpoint` objects.
    """
    members = spec.checkpoints if isinstance(spec, EnsembleSpec) else tuple(spec)
    if isinstance(spec, EnsembleSpec) and spec.fusion != "mean_prob":
        raise ValueError(f"unknown fusion {spec.fusion!r}")
    if not members:
        raise ValueError("ensemble needs at least one member")
    ckpts = [m if isinstance(m, Checkpoint) else load_checkpoint(m) for m in members]
    classes = {c.config.num_classes for c in ckpts}
    if len(classes) != 1:
        raise ValueError(f"ensemble members disagree on num_classes: {sorted(classes)}")
    probs = torch.stack([checkpoint_proba(c, data).to(torch.float64) for c in ckpts]).mean(0)
    return PredictionSet.from_probabilities(data, probs.tolist())


def clone_checkpoint(ckpt: Checkpoint) -> Checkpoint:
    return copy.deepcopy(ckpt)
