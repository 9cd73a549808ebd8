"""Supervised fine-tuning of encoder + head."""
from __future__ import annotations

import copy
import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
from torch import nn

from .archive import load_archive, save_archive
from .corpus import SCHEMES, Corpus
from .encoder import EncoderConfig, TransformerEncoder, Vocabulary, batch_tensors, tokenize
from .encoder.pretrained import canonical_name
from .errors import InvalidConfig, NonFiniteLoss, SchemeMismatch, VersionMismatch
from .eval_report import metrics
from .heads import ClassificationHead, HeadConfig, cross_entropy, predict

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 3
    learning_rate: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    dropout_p: float = 0.1
    seed: int = 0
    freeze_encoder: bool = False
    max_len: int = 64
    warmup_fraction: float = 0.0  # linear warmup share of total steps; 0 = constant lr
    grad_clip: Optional[float] = None  # max global grad norm; None = no clipping
    select_best: bool = False  # keep best-validation-F1 epoch instead of the last

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.learning_rate <= 0:
            raise InvalidConfig("batch_size >= 1, epochs >= 1 and learning_rate > 0 required")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_f1: float
    seconds: float = field(default=0.0, compare=False)


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)

    def write_csv(self, path: str | Path) -> None:
        """Wall-clock time is left out so identical runs give identical files."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "val_f1"])
            for r in self.epochs:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_f1)])


@dataclass
class Checkpoint:
    encoder_config: EncoderConfig
    head_config: HeadConfig
    train_config: TrainConfig
    epoch: int
    head_state: dict[str, torch.Tensor]
    vocab_tokens: list[str]
    scheme: str
    rng_state: torch.Tensor
    encoder_state: Optional[dict[str, torch.Tensor]] = None
    encoder_ref: Optional[str] = None  # weights archive of a frozen pretrained encoder

    def build(self) -> tuple[TransformerEncoder, ClassificationHead, Vocabulary]:
        encoder = TransformerEncoder(self.encoder_config)
        if self.encoder_state is not None:
            state = self.encoder_state
        else:
            raw, _ = load_archive(self.encoder_ref)
            state = {canonical_name(k): v for k, v in raw.items() if canonical_name(k) is not None}
        dtype = next(iter(self.head_state.values())).dtype
        encoder.to(dtype)
        encoder.load_state_dict({k: v for k, v in state.items() if k in encoder.state_dict()}, strict=True)
        encoder.source = self.encoder_ref
        head = ClassificationHead(self.head_config, self.head_state, dtype=dtype)
        return encoder.eval(), head.eval(), Vocabulary(self.vocab_tokens)


class Classifier(nn.Module):
    def __init__(self, encoder: TransformerEncoder, head: ClassificationHead, freeze_encoder: bool = False):
        super().__init__()
        self.encoder = encoder
        self.head = head
        self.freeze_encoder = freeze_encoder

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        if self.freeze_encoder:
            self.encoder.eval()
            with torch.no_grad():
                states = self.encoder(ids, mask)
        else:
            states = self.encoder(ids, mask)
        return self.head(states, mask.bool())


def encode_corpus(corpus: Corpus, vocab: Vocabulary, max_len: int = 64):
    """Tokenize ``normalized_text`` of every record → (ids, mask, labels)."""
    seqs = [tokenize(r.normalized_text, vocab, max_len) for r in corpus.records]
    if not seqs:
        empty = torch.zeros(0, max_len, dtype=torch.long)
        return empty, empty.clone(), torch.zeros(0, dtype=torch.long)
    ids, mask = batch_tensors(seqs)
    labels = torch.tensor([r.label for r in corpus.records], dtype=torch.long)
    return ids, mask, labels


@torch.no_grad()
def predict_probs(model: Classifier, ids: torch.Tensor, mask: torch.Tensor, batch_size: int = 64) -> torch.Tensor:
    was_training = model.training
    model.eval()
    out = [model(ids[i:i + batch_size], mask[i:i + batch_size]) for i in range(0, len(ids), batch_size)]
    model.train(was_training)
    if not out:
        return torch.zeros(0, model.head.config.num_classes)
    return torch.cat(out)


def evaluate(model: Classifier, ids, mask, labels, scheme) -> tuple[float, float]:
    """Validation (loss, weighted F1) with dropout off; parameters untouched."""
    if len(labels) == 0:
        return float("nan"), float("nan")
    probs = predict_probs(model, ids, mask)
    loss = float(cross_entropy(probs, labels))
    f1 = metrics(predict(probs), labels.numpy(), scheme).weighted_f1
    return loss, f1


def _set_dropout(module: nn.Module, p: float) -> None:
    for m in module.modules():
        if isinstance(m, nn.Dropout):
            m.p = p


def parameter_checksum(module: nn.Module) -> float:
    return float(sum(p.detach().double().sum() for p in module.parameters()))


def train(
    encoder: TransformerEncoder,
    head: ClassificationHead,
    train_corpus: Corpus,
    valid_corpus: Corpus,
    vocab: Vocabulary,
    cfg: TrainConfig = TrainConfig(),
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> tuple[Checkpoint, TrainHistory]:
    """Minibatch Adam on mean cross-entropy.

    Each epoch shuffles the training set with ``(seed, epoch)``, keeps the
    short final batch, then scores the validation set with dropout off.
    All randomness derives from ``cfg.seed``.
    """
    if train_corpus.scheme != valid_corpus.scheme:
        raise SchemeMismatch("train and validation corpora use different label schemes")
    scheme = train_corpus.scheme
    if head.config.num_classes != len(scheme.classes):
        raise SchemeMismatch(f"head has {head.config.num_classes} classes, scheme {scheme.name} has {len(scheme.classes)}")

    torch.manual_seed(cfg.seed)
    _set_dropout(encoder, cfg.dropout_p)
    head.config = replace(head.config, dropout_p=cfg.dropout_p)
    model = Classifier(encoder, head, cfg.freeze_encoder)
    encoder.requires_grad_(not cfg.freeze_encoder)
    params = [p for p in model.parameters() if p.requires_grad]
    optim = torch.optim.Adam(
        params, lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps, foreach=False
    )

    ids, mask, labels = encode_corpus(train_corpus, vocab, cfg.max_len)
    v_ids, v_mask, v_labels = encode_corpus(valid_corpus, vocab, cfg.max_len)
    n = len(labels)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    warmup = int(cfg.warmup_fraction * total_steps)

    history = TrainHistory()
    best = None
    step = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        model.train()
        order = torch.from_numpy(np.random.default_rng([cfg.seed, epoch]).permutation(n))
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            probs = model(ids[idx], mask[idx])
            loss = cross_entropy(probs, labels[idx])
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"epoch {epoch}, step {step}: loss {loss.item()}")
            optim.zero_grad(set_to_none=True)
            loss.backward()
            if cfg.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
            if warmup:
                for group in optim.param_groups:
                    group["lr"] = cfg.learning_rate * min(1.0, (step + 1) / warmup)
            optim.step()
            loss_sum += loss.item() * len(idx)
            step += 1
        val_loss, val_f1 = evaluate(model, v_ids, v_mask, v_labels, scheme)
        rec = EpochRecord(epoch + 1, loss_sum / max(n, 1), val_loss, val_f1, time.perf_counter() - t0)
        history.epochs.append(rec)
        log.info("epoch %d train_loss %.6f val_loss %.6f val_f1 %.4f", rec.epoch, rec.train_loss, val_loss, val_f1)
        if on_epoch:
            on_epoch(rec)
        if cfg.select_best and (best is None or val_f1 > best[0]):
            best = (val_f1, epoch + 1, copy.deepcopy(encoder.state_dict()), copy.deepcopy(head.state_dict()))

    model.eval()
    encoder.requires_grad_(True)
    if best is not None:
        encoder.load_state_dict(best[2])
        head.load_state_dict(best[3])
    final_epoch = best[1] if best is not None else cfg.epochs
    return make_checkpoint(encoder, head, vocab, scheme.name, cfg, final_epoch), history


def make_checkpoint(encoder, head, vocab, scheme_name, cfg, epoch) -> Checkpoint:
    frozen_ref = encoder.source if (cfg.freeze_encoder and encoder.source) else None
    return Checkpoint(
        encoder_config=encoder.config,
        head_config=head.config,
        train_config=cfg,
        epoch=epoch,
        head_state={k: v.detach().clone() for k, v in head.params.items()},
        vocab_tokens=list(vocab.tokens),
        scheme=scheme_name,
        rng_state=torch.get_rng_state(),
        encoder_state=None if frozen_ref else {k: v.detach().clone() for k, v in encoder.state_dict().items()},
        encoder_ref=frozen_ref,
    )


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    tensors = {f"head/{k}": v for k, v in ckpt.head_state.items()}
    if ckpt.encoder_state is not None:
        tensors.update({f"encoder/{k}": v for k, v in ckpt.encoder_state.items()})
    tensors["rng_state"] = ckpt.rng_state
    meta = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "head_kind": ckpt.head_config.kind,
        "head_config": ckpt.head_config.to_dict(),
        "encoder_config": ckpt.encoder_config.to_dict(),
        "train_config": ckpt.train_config.to_dict(),
        "epoch": ckpt.epoch,
        "scheme": ckpt.scheme,
        "vocab": ckpt.vocab_tokens,
        "encoder_ref": ckpt.encoder_ref,
    }
    save_archive(path, tensors, meta)


def load_checkpoint(path: str | Path, expected_kind: Optional[str] = None) -> Checkpoint:
    tensors, manifest = load_archive(path)
    meta = manifest.get("meta", {})
    version = meta.get("checkpoint_version")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {version!r}, this build reads version {CHECKPOINT_VERSION}")
    if expected_kind is not None and meta.get("head_kind") != expected_kind:
        raise VersionMismatch(f"{path}: checkpoint head kind {meta.get('head_kind')!r}, expected {expected_kind!r}")
    if meta.get("scheme") not in SCHEMES:
        raise VersionMismatch(f"{path}: unknown scheme {meta.get('scheme')!r}")
    enc = {k[len("encoder/"):]: v for k, v in tensors.items() if k.startswith("encoder/")}
    return Checkpoint(
        encoder_config=EncoderConfig.from_dict(meta["encoder_config"]),
        head_config=HeadConfig.from_dict(meta["head_config"]),
        train_config=TrainConfig.from_dict(meta["train_config"]),
        epoch=meta["epoch"],
        head_state={k[len("head/"):]: v for k, v in tensors.items() if k.startswith("head/")},
        vocab_tokens=list(meta["vocab"]),
        scheme=meta["scheme"],
        rng_state=tensors["rng_state"],
        encoder_state=enc or None,
        encoder_ref=meta.get("encoder_ref"),
    )


def write_jsonl(path: str | Path, record: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(record) + "\n")
