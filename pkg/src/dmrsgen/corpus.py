"""Vocabularies, gold/silver mixing and length-bucketed batches."""

import hashlib
import logging
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .linearize import NO_BUNDLE, LinearSequence
from .preprocess import UNK

log = logging.getLogger(__name__)

PAD, BOS, EOS = "<pad>", "<s>", "</s>"
RESERVED = (PAD, BOS, EOS, UNK, NO_BUNDLE)
PAD_ID, BOS_ID, EOS_ID, UNK_ID, NB_ID = range(len(RESERVED))


@dataclass
class ParallelExample:
    """One training pair: linearized graph and tokenized target sentence."""
    source: LinearSequence
    target: list
    provenance: str = "gold"
    domain: str = ""
    index: int = -1


class SymbolTable:
    def __init__(self, tokens: Sequence[str] = ()):
        self.tokens = list(RESERVED)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.index:
            self.index[token] = len(self.tokens)
            self.tokens.append(token)
        return self.index[token]

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __getitem__(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def lookup(self, tokens) -> list:
        return [self[t] for t in tokens]

    def token(self, i: int) -> str:
        return self.tokens[i]

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SymbolTable":
        tokens = Path(path).read_text(encoding="utf-8").split("\n")[:-1]
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise ValueError(f"{path}: missing reserved header {RESERVED}")
        return cls(tokens[len(RESERVED):])


@dataclass
class Vocabulary:
    source: SymbolTable
    bundles: SymbolTable
    target: SymbolTable

    FILES = ("vocab.src", "vocab.bundle", "vocab.tgt")

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for table in (self.source, self.bundles, self.target):
            h.update("\n".join(table.tokens).encode("utf-8"))
            h.update(b"\0\0")
        return h.hexdigest()

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, table in zip(self.FILES, (self.source, self.bundles, self.target)):
            table.save(directory / name)

    @classmethod
    def load(cls, directory) -> "Vocabulary":
        directory = Path(directory)
        return cls(*(SymbolTable.load(directory / name) for name in cls.FILES))


def build_vocabulary(train: Sequence[ParallelExample], min_count: int = 2,
                     target_min_count: Optional[int] = None) -> Vocabulary:
    """Frequency-filtered tables; every observed bundle is kept."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    if not train:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    target_min_count = min_count if target_min_count is None else target_min_count
    src, bundles, tgt = Counter(), Counter(), Counter()
    for ex in train:
        src.update(ex.source.symbols)
        bundles.update(ex.source.attributes)
        tgt.update(ex.target)

    def table(counts, threshold):
        # most frequent first, ties alphabetically, so files are reproducible
        keep = sorted((t for t, c in counts.items() if c >= threshold), key=lambda t: (-counts[t], t))
        return SymbolTable(keep)

    return Vocabulary(table(src, min_count), table(bundles, 1), table(tgt, target_min_count))


def mix_gold_silver(gold: Sequence, silver: Sequence, seed: int = 0) -> list:
    """Upsample gold by whole copies so gold:silver is 1:2, then shuffle.

    Gold is repeated ceil(|silver| / (2 |gold|)) times and cut to
    ceil(|silver| / 2) examples.
    """
    if not silver:
        raise ValueError("silver corpus is empty")
    if not gold:
        log.warning("empty gold corpus: training on silver alone")
        mixed = list(silver)
    else:
        wanted = math.ceil(len(silver) / 2)
        copies = math.ceil(len(silver) / (2 * len(gold)))
        mixed = (list(gold) * copies)[:wanted] + list(silver)
    random.Random(seed).shuffle(mixed)
    return mixed


@dataclass
class Batch:
    src: np.ndarray          # [B, S] source symbol ids
    src_bundles: np.ndarray  # [B, S] bundle ids
    src_lengths: np.ndarray  # [B]
    tgt: np.ndarray          # [B, T] <s> w1 .. wn </s>
    tgt_lengths: np.ndarray  # [B], including <s> and </s>
    copy_mask: np.ndarray    # [B, T-1, S] source positions a target word may be copied from
    examples: list = field(default_factory=list)

    def __len__(self):
        return len(self.examples)


def copy_positions(source_symbols, word: str, vocab: Vocabulary) -> list:
    """Source positions a target ``word`` is supervised to copy from.

    Only words outside the target vocabulary are copied, and ``UNK0`` in the
    target matches ``UNK0`` in the source.
    """
    if word in vocab.target and word != UNK:
        return []
    return [i for i, s in enumerate(source_symbols) if s == word]


def collate(examples: Sequence[ParallelExample], vocab: Vocabulary) -> Batch:
    n = len(examples)
    s_len = np.array([len(ex.source) for ex in examples], dtype=np.int64)
    t_len = np.array([len(ex.target) + 2 for ex in examples], dtype=np.int64)
    S, T = int(s_len.max()), int(t_len.max())
    src = np.full((n, S), PAD_ID, dtype=np.int64)
    bundles = np.full((n, S), PAD_ID, dtype=np.int64)
    tgt = np.full((n, T), PAD_ID, dtype=np.int64)
    copy = np.zeros((n, T - 1, S), dtype=bool)
    for b, ex in enumerate(examples):
        k = len(ex.source)
        src[b, :k] = vocab.source.lookup(ex.source.symbols)
        bundles[b, :k] = vocab.bundles.lookup(ex.source.attributes)
        ids = [BOS_ID] + vocab.target.lookup(ex.target) + [EOS_ID]
        tgt[b, : len(ids)] = ids
        for t, word in enumerate(ex.target):
            for i in copy_positions(ex.source.symbols, word, vocab):
                copy[b, t, i] = True
    return Batch(src, bundles, s_len, tgt, t_len, copy, list(examples))


def make_batches(corpus: Sequence[ParallelExample], batch_size: int, seed: int = 0,
                 vocab: Optional[Vocabulary] = None) -> list:
    """Length-bucketed, seeded batches covering every example exactly once.

    Without ``vocab`` the batches hold example lists only (sizes and
    membership); with it they are collated into padded :class:`Batch` arrays.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = random.Random(seed)
    order = list(range(len(corpus)))
    rng.shuffle(order)
    order.sort(key=lambda i: len(corpus[i].source))  # stable: shuffled within equal lengths
    groups = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    rng.shuffle(groups)
    if vocab is None:
        return [[corpus[i] for i in g] for g in groups]
    return [collate([corpus[i] for i in g], vocab) for g in groups]
