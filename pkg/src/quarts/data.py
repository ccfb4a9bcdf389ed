"""Tokenization, vocabularies, dataset records, splits, and batching.

Dataset files are one example per line, tab-separated UTF-8:
``title<TAB>query<TAB>label<TAB>source``. Query-side and title-side
vocabularies are built independently, so the same surface word can carry
different ids on the two sides.
"""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

PAD, UNK, BOS, EOS = 0, 1, 2, 3
SPECIALS = ("<pad>", "<unk>", "<bos>", "<eos>")

MAX_TITLE_LEN = 16
MAX_QUERY_LEN = 8

_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


class DataError(ValueError):
    """Raised for malformed or impossible dataset requests."""


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace/punctuation, drop empties."""
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


class Vocabulary:
    """Token <-> id map with fixed special ids PAD=0, UNK=1, BOS=2, EOS=3."""

    def __init__(self, tokens: list[str]):
        self.id_to_token = list(SPECIALS) + tokens
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise DataError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.id_to_token)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.id_to_token[len(SPECIALS):]:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.rstrip("\n")])


def build_vocab(corpus: Iterable[list[str]], min_count: int = 1) -> Vocabulary:
    """Deterministic vocabulary: frequency desc, then lexicographic."""
    counts = Counter()
    n = 0
    for tokens in corpus:
        n += 1
        counts.update(tokens)
    if n == 0:
        raise DataError("cannot build a vocabulary from an empty corpus")
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


@dataclass
class RawPair:
    """One dataset line before encoding."""
    title: str
    query: str
    label: int
    source: str  # "annotated" | "logs"

    def __post_init__(self):
        if self.source not in ("annotated", "logs"):
            raise DataError(f"unknown source {self.source!r}")
        if self.label not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {self.label}")
        if self.source == "logs" and self.label != 0:
            raise DataError("logs pairs are matched by construction (label 0)")


@dataclass
class Example:
    """Encoded (item title, query, label) pair."""
    item_ids: list[int]
    query_ids: list[int]
    label: int
    source: str


@dataclass
class TripleExample:
    """Item with one matched and one mismatched query, for generator training."""
    item_ids: list[int]
    matched_query_ids: list[int]
    mismatched_query_ids: list[int]


def write_pairs(path, pairs: Iterable[RawPair]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(f"{p.title}\t{p.query}\t{p.label}\t{p.source}\n")


def read_pairs(path) -> list[RawPair]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields")
            title, query, label, source = fields
            out.append(RawPair(title, query, int(label), source))
    return out


def encode_pairs(pairs: Iterable[RawPair], vocab_t: Vocabulary, vocab_q: Vocabulary,
                 max_title_len: int = MAX_TITLE_LEN,
                 max_query_len: int = MAX_QUERY_LEN) -> list[Example]:
    out = []
    for p in pairs:
        t = vocab_t.encode(tokenize(p.title)[:max_title_len])
        q = vocab_q.encode(tokenize(p.query)[:max_query_len])
        if not t or not q:
            raise DataError(f"empty sequence after tokenization: {p.title!r} / {p.query!r}")
        out.append(Example(t, q, p.label, p.source))
    return out


def split_pairs(pairs: list[RawPair], ratios: tuple[float, float, float],
                seed: int) -> tuple[list[RawPair], list[RawPair], list[RawPair]]:
    """Item-disjoint split: no item title appears in two splits."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {ratios}")
    by_title: dict[str, list[RawPair]] = {}
    for p in pairs:
        by_title.setdefault(p.title, []).append(p)
    titles = list(by_title)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(11,)))
    rng.shuffle(titles)

    total = len(pairs)
    splits: list[list[RawPair]] = [[], [], []]
    targets = [r * total for r in ratios]
    counts = [0, 0, 0]
    for title in titles:
        # largest remaining deficit, ties to the earlier split
        deficits = [targets[i] - counts[i] for i in range(3)]
        i = int(np.argmax(deficits))
        splits[i].extend(by_title[title])
        counts[i] += len(by_title[title])
    for i, r in enumerate(ratios):
        if r > 0 and not splits[i]:
            raise DataError(
                f"cannot produce an item-disjoint split for ratios {ratios}: "
                f"split {i} is empty")
    return splits[0], splits[1], splits[2]


@dataclass
class Batch:
    item_ids: np.ndarray     # (B, Tt) int64, PAD-filled
    item_lens: np.ndarray    # (B,) true lengths
    query_ids: np.ndarray    # (B, Tq)
    query_lens: np.ndarray
    labels: np.ndarray       # (B,) float
    sources: list[str]

    def __len__(self):
        return self.item_ids.shape[0]


def _pad_matrix(seqs: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    lens = np.array([len(s) for s in seqs], dtype=np.int64)
    width = int(lens.max())
    mat = np.full((len(seqs), width), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        mat[i, :len(s)] = s
    return mat, lens


def batches(examples: list[Example], batch_size: int,
            rng: np.random.Generator | None = None) -> Iterator[Batch]:
    """Yield padded batches; shuffles when given the shuffle substream."""
    order = np.arange(len(examples))
    if rng is not None:
        order = rng.permutation(len(examples))
    for start in range(0, len(examples), batch_size):
        chunk = [examples[i] for i in order[start:start + batch_size]]
        items, item_lens = _pad_matrix([e.item_ids for e in chunk])
        queries, query_lens = _pad_matrix([e.query_ids for e in chunk])
        labels = np.array([e.label for e in chunk], dtype=np.float64)
        yield Batch(items, item_lens, queries, query_lens, labels,
                    [e.source for e in chunk])
