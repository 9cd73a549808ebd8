"""Vocabulary and greedy longest-match-first WordPiece tokenization."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from ..text_prep import DEFAULT_PLACEHOLDERS, NormalizedText

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIALS = (PAD, UNK, CLS, SEP)
CONTINUATION = "##"
MAX_LEN = 64
MAX_CHARS_PER_WORD = 100


class Vocabulary:
    """token → id map; ids are list positions."""

    def __init__(self, tokens: Sequence[str]):
        self.tokens = list(tokens)
        self.index = {}
        for i, tok in enumerate(self.tokens):
            self.index.setdefault(tok, i)
        for tok in SPECIALS:
            if tok not in self.index:
                raise ValueError(f"vocabulary lacks special token {tok}")
        if self.index[PAD] != 0:
            raise ValueError("[PAD] must have id 0")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, tok: str) -> bool:
        return tok in self.index

    def __getitem__(self, tok: str) -> int:
        return self.index[tok]

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def unk_id(self) -> int:
        return self.index[UNK]

    @property
    def cls_id(self) -> int:
        return self.index[CLS]

    @property
    def sep_id(self) -> int:
        return self.index[SEP]

    @classmethod
    def from_file(cls, path: str | Path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh])

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.writelines(tok + "\n" for tok in self.tokens)

    def with_atomic_tokens(self, extra: Iterable[str]) -> tuple["Vocabulary", int]:
        """Register tokens as whole vocabulary entries.  ``[unusedN]`` slots are
        reused first; the rest are appended.  Returns (vocab, n_appended)."""
        tokens = list(self.tokens)
        unused = [i for i, t in enumerate(tokens) if t.startswith("[unused")]
        appended = 0
        for tok in extra:
            if tok in self.index:
                continue
            if unused:
                tokens[unused.pop(0)] = tok
            else:
                tokens.append(tok)
                appended += 1
        return Vocabulary(tokens), appended


def build_vocab(texts: Iterable[str], max_size: int = 2000, min_count: int = 1) -> Vocabulary:
    """Desk-scale vocabulary: specials, placeholders, single characters with
    their ``##`` continuations, then whole words by descending frequency."""
    counts = Counter(w for text in texts for w in text.split())
    tokens = list(SPECIALS) + [p for p in DEFAULT_PLACEHOLDERS.values()]
    chars = sorted({c for w in counts for c in w if not w.startswith("<")} | set("abcdefghijklmnopqrstuvwxyz"))
    tokens += chars + [CONTINUATION + c for c in chars]
    seen = set(tokens)
    for word, n in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if len(tokens) >= max_size:
            break
        if n >= min_count and word not in seen:
            tokens.append(word)
            seen.add(word)
    return Vocabulary(tokens)


def wordpiece(word: str, vocab: Vocabulary) -> list[int]:
    """Greedy longest-match-first split of one whitespace token.  A word that
    cannot be fully covered becomes a single [UNK]."""
    if word in vocab:
        return [vocab[word]]
    if len(word) > MAX_CHARS_PER_WORD:
        return [vocab.unk_id]
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        cur = None
        while start < end:
            sub = word[start:end]
            if start > 0:
                sub = CONTINUATION + sub
            if sub in vocab:
                cur = vocab[sub]
                break
            end -= 1
        if cur is None:
            return [vocab.unk_id]
        pieces.append(cur)
        start = end
    return pieces


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray
    attention_mask: np.ndarray
    content_length: int


def tokenize(text: NormalizedText | str, vocab: Vocabulary, max_len: int = MAX_LEN) -> TokenSequence:
    text = str(text)
    pieces: list[int] = []
    for word in text.split():
        pieces.extend(wordpiece(word, vocab))
        if len(pieces) >= max_len - 2:
            break
    pieces = pieces[: max_len - 2]
    content = [vocab.cls_id] + pieces + [vocab.sep_id]
    n = len(content)
    ids = np.full(max_len, vocab.pad_id, dtype=np.int64)
    ids[:n] = content
    mask = np.zeros(max_len, dtype=np.int64)
    mask[:n] = 1
    return TokenSequence(ids, mask, n)


def batch_tensors(seqs: Sequence[TokenSequence]) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack sequences into (ids, attention_mask) LongTensors of shape (B, S)."""
    ids = torch.from_numpy(np.stack([s.ids for s in seqs]))
    mask = torch.from_numpy(np.stack([s.attention_mask for s in seqs]))
    return ids, mask
