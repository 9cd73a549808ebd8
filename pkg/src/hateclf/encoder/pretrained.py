"""Loading encoder weights from a named-tensor archive."""
from __future__ import annotations

import re
from pathlib import Path
from typing import Mapping, Optional

import torch

from ..archive import load_archive, read_manifest, save_archive
from ..errors import MissingTensor, ShapeMismatch
from ..text_prep import DEFAULT_PLACEHOLDERS
from .model import BASE_CONFIG, EncoderConfig, TransformerEncoder, default_dtype
from .vocab import Vocabulary

# Older checkpoints name LayerNorm parameters gamma/beta.
_RENAMES = ((re.compile(r"LayerNorm\.gamma$"), "LayerNorm.weight"), (re.compile(r"LayerNorm\.beta$"), "LayerNorm.bias"))


def canonical_name(name: str) -> Optional[str]:
    """Map a checkpoint tensor name onto this encoder's naming, or None for
    tensors the encoder does not use (pooler, pretraining heads)."""
    if name.startswith("bert."):
        name = name[len("bert."):]
    if not name.startswith(("embeddings.", "encoder.")):
        return None
    if name.endswith("position_ids"):
        return None
    for pat, repl in _RENAMES:
        name = pat.sub(repl, name)
    return name


def save_encoder(path: str | Path, model: TransformerEncoder) -> None:
    tensors = {k: v for k, v in model.state_dict().items()}
    save_archive(path, tensors, {"encoder_config": model.config.to_dict()})


def convert_state_dict(state_dict: Mapping[str, torch.Tensor], out_dir: str | Path, config: EncoderConfig = BASE_CONFIG) -> None:
    """Write a torch state dict (e.g. from a public BERT checkpoint) as an archive."""
    tensors = {}
    for name, t in state_dict.items():
        canon = canonical_name(name)
        if canon is not None:
            tensors[canon] = t.float()
    cfg = EncoderConfig.from_dict({**config.to_dict(), "vocab_size": tensors["embeddings.word_embeddings.weight"].shape[0]})
    save_archive(out_dir, tensors, {"encoder_config": cfg.to_dict()})


def load_pretrained(
    weights_path: str | Path,
    vocab_path: str | Path,
    expected: Optional[EncoderConfig] = BASE_CONFIG,
    dtype: Optional[torch.dtype] = None,
    atomic_tokens=tuple(DEFAULT_PLACEHOLDERS.values()),
) -> tuple[TransformerEncoder, Vocabulary]:
    """Build an encoder from an archive and its vocabulary.

    ``expected`` pins the architecture (base by default); every tensor shape
    is checked against it.  Placeholder tokens are registered in the
    vocabulary's unused slots, growing the word embedding only if none remain.
    """
    manifest = read_manifest(weights_path)
    stored = manifest.get("meta", {}).get("encoder_config")
    cfg = expected if expected is not None else EncoderConfig.from_dict(stored or BASE_CONFIG.to_dict())
    if stored is not None:
        for key in ("num_layers", "hidden_size", "num_heads"):
            if stored.get(key) != getattr(cfg, key):
                raise ShapeMismatch(f"archive {key}={stored.get(key)}, expected {getattr(cfg, key)}")

    vocab = Vocabulary.from_file(vocab_path)
    cfg = EncoderConfig.from_dict({**cfg.to_dict(), "vocab_size": len(vocab), "dropout_p": cfg.dropout_p})
    model = TransformerEncoder(cfg)
    wanted = model.state_dict()

    raw, _ = load_archive(weights_path)
    tensors = {}
    for name, t in raw.items():
        canon = canonical_name(name)
        if canon is not None:
            tensors[canon] = t
    missing = sorted(set(wanted) - set(tensors))
    if missing:
        raise MissingTensor(f"{weights_path}: missing {len(missing)} tensors, e.g. {missing[:3]}")
    for name, ref in wanted.items():
        if tuple(tensors[name].shape) != tuple(ref.shape):
            raise ShapeMismatch(f"{name}: archive shape {tuple(tensors[name].shape)}, expected {tuple(ref.shape)}")
    model.load_state_dict({k: tensors[k] for k in wanted}, strict=True)

    vocab, appended = vocab.with_atomic_tokens(atomic_tokens)
    if appended:
        old = model.embeddings.word_embeddings.weight.data
        extra = torch.empty(appended, old.shape[1]).normal_(0.0, 0.02, generator=torch.Generator().manual_seed(cfg.seed))
        grown = torch.nn.Embedding(old.shape[0] + appended, old.shape[1])
        grown.weight.data.copy_(torch.cat([old, extra.to(old.dtype)]))
        model.embeddings.word_embeddings = grown
        model.config = EncoderConfig.from_dict({**cfg.to_dict(), "vocab_size": len(vocab)})
    model.source = str(weights_path)
    return model.to(dtype or default_dtype()).eval(), vocab
