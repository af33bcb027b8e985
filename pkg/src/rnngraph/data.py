"""Corpus handling: vocabulary, tokenization, and parallel stream tapes.

A corpus becomes N tapes read side by side, one per training stream.  Each
`next_batch(h')` pulls h' consecutive tokens from every tape and interleaves
them frame-major, so row `t * N + n` of the batch is stream n at frame
offset t.  Targets are the next token on the tape; when a tape runs out it
rebuilds (reshuffling its documents) and keeps going, so the target of an
epoch's last token is the first token of the next epoch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import Batch

__all__ = [
    "UNK",
    "EOS",
    "Vocab",
    "build_vocab",
    "tokenize",
    "load_corpus",
    "encode_corpus",
    "one_hot",
    "StreamTape",
    "StreamSet",
    "StreamChunk",
    "make_streams",
]

UNK = "<unk>"
EOS = "<eos>"


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    index: dict[str, int]

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def unk_id(self) -> int:
        return self.index[UNK]

    @property
    def eos_id(self) -> int:
        return self.index[EOS]

    def encode(self, tokens) -> np.ndarray:
        unk = self.unk_id
        return np.array([self.index.get(t, unk) for t in tokens], dtype=np.int64)

    def decode(self, ids) -> list[str]:
        return [self.tokens[int(i)] for i in ids]


def build_vocab(tokens, max_size: int | None = None) -> Vocab:
    """Most frequent first, ties by first appearance; specials appended
    after the real tokens so ids stay dense and stable.  `max_size` caps
    the total including the two specials."""
    counts: dict[str, int] = {}
    first: dict[str, int] = {}
    for pos, t in enumerate(tokens):
        counts[t] = counts.get(t, 0) + 1
        first.setdefault(t, pos)
    ranked = sorted(counts, key=lambda t: (-counts[t], first[t]))
    if max_size is not None:
        if max_size < 3:
            raise ValueError(f"max_size must leave room for {UNK}/{EOS}, got {max_size}")
        ranked = ranked[: max_size - 2]
    toks = tuple(ranked) + (UNK, EOS)
    return Vocab(tokens=toks, index={t: i for i, t in enumerate(toks)})


def tokenize(text: str, mode: str = "char") -> list[str]:
    if mode == "char":
        return list(text)
    if mode == "word":
        return text.split()
    raise ValueError(f"unknown tokenize mode {mode!r}")


def load_corpus(path: str, mode: str = "char") -> list[list[str]]:
    """Documents are blank-line separated blocks; each becomes one token
    sequence."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    blocks = [b for b in text.split("\n\n") if b.strip()]
    return [tokenize(b, mode) for b in blocks]


def encode_corpus(docs: list[list[str]], vocab: Vocab, append_eos: bool = True) -> list[np.ndarray]:
    out = []
    for doc in docs:
        ids = vocab.encode(doc)
        if append_eos:
            ids = np.append(ids, vocab.eos_id)
        out.append(ids)
    return [d for d in out if d.size]


def one_hot(ids: np.ndarray, width: int, frames: int, streams: int) -> Batch:
    """Dense Batch with a 1.0 at each id (for exercising the dense input
    path against the id path)."""
    ids = np.asarray(ids, dtype=np.int64)
    b = Batch.zeros(width, frames, streams)
    b.values[np.arange(ids.size), ids] = 1.0
    return b


class StreamTape:
    """One stream's endless token supply.

    Walks its documents in order; when the last one is exhausted the order
    is reshuffled and the walk restarts.  Targets look one token ahead,
    across document and epoch boundaries.
    """

    def __init__(self, docs: list[np.ndarray], seed: int):
        if not docs or any(d.size == 0 for d in docs):
            raise ValueError("tape needs non-empty documents")
        self._docs = docs
        self._rng = np.random.default_rng(seed)
        self._order = list(range(len(docs)))
        self._at = 0  # position in order
        self._off = 0  # position in current document

    def _doc(self) -> np.ndarray:
        return self._docs[self._order[self._at]]

    def _step(self) -> int:
        tok = int(self._doc()[self._off])
        self._off += 1
        if self._off >= self._doc().size:
            self._at += 1
            self._off = 0
            if self._at >= len(self._order):
                self._rng.shuffle(self._order)
                self._at = 0
        return tok

    def read(self, k: int) -> tuple[np.ndarray, np.ndarray, bool]:
        """k inputs, k next-token targets, and whether this chunk starts a
        fresh document."""
        boundary = self._off == 0
        inp = np.empty(k, dtype=np.int64)
        tgt = np.empty(k, dtype=np.int64)
        for j in range(k):
            inp[j] = self._step()
            tgt[j] = int(self._doc()[self._off])
        return inp, tgt, boundary


@dataclass
class StreamChunk:
    inputs: np.ndarray  # (h' * N,) int64, frame-major
    targets: np.ndarray  # (h' * N,) int64
    new_sequence: np.ndarray  # (N,) bool


class StreamSet:
    def __init__(self, tapes: list[StreamTape]):
        if not tapes:
            raise ValueError("need at least one tape")
        self.tapes = tapes
        self.n_streams = len(tapes)

    def next_batch(self, h_prime: int) -> StreamChunk:
        n = self.n_streams
        inputs = np.empty(h_prime * n, dtype=np.int64)
        targets = np.empty(h_prime * n, dtype=np.int64)
        new_seq = np.zeros(n, dtype=bool)
        for s, tape in enumerate(self.tapes):
            inp, tgt, boundary = tape.read(h_prime)
            inputs[s::n] = inp
            targets[s::n] = tgt
            new_seq[s] = boundary
        return StreamChunk(inputs=inputs, targets=targets, new_sequence=new_seq)


def make_streams(doc_ids: list[np.ndarray], n_streams: int, seed: int) -> StreamSet:
    """Deal documents to N tapes.

    With at least N documents they are dealt round-robin after a seeded
    shuffle; otherwise the corpus is concatenated and split into N
    contiguous pieces (the usual setup for one long text)."""
    if n_streams < 1:
        raise ValueError("need n_streams >= 1")
    docs = [np.asarray(d, dtype=np.int64) for d in doc_ids if np.asarray(d).size]
    if not docs:
        raise ValueError("empty corpus")
    rng = np.random.default_rng(seed)
    if len(docs) >= n_streams:
        order = rng.permutation(len(docs))
        groups = [[docs[i] for i in order[s::n_streams]] for s in range(n_streams)]
    else:
        total = np.concatenate(docs)
        if total.size < n_streams:
            raise ValueError(f"{total.size} tokens cannot fill {n_streams} streams")
        groups = [[part] for part in np.array_split(total, n_streams)]
    return StreamSet([StreamTape(g, seed=seed + 1000 + s) for s, g in enumerate(groups)])
