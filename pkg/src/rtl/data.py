"""Corpus I/O, vocabulary, embeddings, batching and the synthetic generator."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
SOURCE, TARGET = "source", "target"
DOMAINS = (SOURCE, TARGET)
ALIGNED, MISALIGNED = "aligned", "misaligned"


class DataError(ValueError):
    """Malformed corpus, embedding or config input."""


@dataclass(frozen=True)
class SentencePair:
    tokens1: tuple[int, ...]
    tokens2: tuple[int, ...]
    label: int


class Vocabulary:
    def __init__(self, tokens: Iterable[str] = ()) -> None:
        self.itos: list[str] = [PAD_TOKEN, UNK_TOKEN]
        self.stoi: dict[str, int] = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        idx = self.stoi.get(token)
        if idx is None:
            idx = len(self.itos)
            self.stoi[token] = idx
            self.itos.append(token)
        return idx

    def encode(self, tokens: Sequence[str], grow: bool = False) -> tuple[int, ...]:
        if grow:
            return tuple(self.add(t) for t in tokens)
        return tuple(self.stoi.get(t, UNK) for t in tokens)

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos


def tokenize(text: str) -> list[str]:
    return text.lower().split()


def read_tsv(path: str | Path, max_len: int | None = None) -> list[tuple[list[str], list[str], int]]:
    """Parse ``sentence1 <TAB> sentence2 <TAB> label`` lines into token lists."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read corpus {path}: {exc}") from exc
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 tab-separated columns, got {len(cols)}")
        s1, s2, lab = cols
        if lab.strip() not in ("0", "1"):
            raise DataError(f"{path}:{lineno}: label must be 0 or 1, got {lab.strip()!r}")
        t1, t2 = tokenize(s1), tokenize(s2)
        if not t1 or not t2:
            raise DataError(f"{path}:{lineno}: empty sentence")
        if max_len is not None:
            t1, t2 = t1[:max_len], t2[:max_len]
        rows.append((t1, t2, int(lab)))
    return rows


def load_corpus(
    path: str | Path, max_len: int, vocab: Vocabulary | None = None, grow: bool = True
) -> tuple[list[SentencePair], Vocabulary]:
    """Read a TSV corpus into id-encoded pairs, extending ``vocab`` if ``grow``."""
    vocab = vocab if vocab is not None else Vocabulary()
    pairs = [
        SentencePair(vocab.encode(t1, grow), vocab.encode(t2, grow), y)
        for t1, t2, y in read_tsv(path, max_len)
    ]
    return pairs, vocab


def write_tsv(path: str | Path, pairs: Sequence[SentencePair], vocab: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(f"{' '.join(vocab.decode(p.tokens1))}\t{' '.join(vocab.decode(p.tokens2))}\t{p.label}\n")


@dataclass
class EmbeddingTable:
    vectors: np.ndarray
    trainable: bool = True


def load_embeddings(
    path: str | Path | None,
    vocab: Vocabulary,
    dim: int = 300,
    rng: np.random.Generator | None = None,
    trainable: bool = True,
) -> tuple[EmbeddingTable, int]:
    """Build the lookup table; rows found in the GloVe-format file are copied,
    the rest drawn from U[-0.05, 0.05]. Returns the table and the hit count."""
    rng = rng or np.random.default_rng(0)
    vectors = rng.uniform(-0.05, 0.05, size=(len(vocab), dim))
    vectors[PAD] = 0.0
    hits = 0
    if path is not None:
        seen: set[int] = set()
        try:
            fh = open(path, encoding="utf-8", errors="replace")
        except OSError as exc:
            raise DataError(f"cannot read embeddings {path}: {exc}") from exc
        with fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.rstrip("\n").rstrip(" ").split(" ")
                if len(parts) < 2:
                    continue
                if (lineno == 1 and len(parts) - 1 != dim) or len(parts) - 1 < dim:
                    raise DataError(
                        f"{path}:{lineno}: expected {dim} vector components, got {len(parts) - 1}"
                    )
                # some GloVe tokens contain spaces: the vector is the tail
                word, values = " ".join(parts[:-dim]), parts[-dim:]
                idx = vocab.stoi.get(word)
                if idx is None or idx in (PAD, UNK) or idx in seen:
                    continue
                try:
                    vectors[idx] = np.array(values, dtype=np.float64)
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: bad vector: {exc}") from exc
                seen.add(idx)
        hits = len(seen)
    return EmbeddingTable(vectors, trainable), hits


@dataclass
class PairBatch:
    domain: str
    tokens1: np.ndarray
    tokens2: np.ndarray
    mask1: np.ndarray
    mask2: np.ndarray
    labels: np.ndarray
    index: np.ndarray  # positions of the rows in their originating pair list

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def from_pairs(
        cls,
        pairs: Sequence[SentencePair],
        domain: str,
        index: Sequence[int] | None = None,
        pad_to: int | None = None,
    ) -> "PairBatch":
        if not pairs:
            raise DataError("cannot batch an empty pair list")
        if domain not in DOMAINS:
            raise DataError(f"unknown domain {domain!r}")
        t1, m1 = _pad([p.tokens1 for p in pairs], pad_to)
        t2, m2 = _pad([p.tokens2 for p in pairs], pad_to)
        labels = np.array([p.label for p in pairs], dtype=np.int64)
        idx = np.arange(len(pairs)) if index is None else np.asarray(index, dtype=np.int64)
        return cls(domain, t1, t2, m1, m2, labels, idx)

    def select(self, rows: np.ndarray) -> "PairBatch":
        return PairBatch(
            self.domain,
            self.tokens1[rows],
            self.tokens2[rows],
            self.mask1[rows],
            self.mask2[rows],
            self.labels[rows],
            self.index[rows],
        )


def _pad(seqs: Sequence[Sequence[int]], pad_to: int | None) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(s) for s in seqs)
    if pad_to is not None:
        if pad_to < width:
            raise DataError(f"pad_to={pad_to} shorter than longest sentence ({width})")
        width = pad_to
    ids = np.full((len(seqs), width), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), width))
    for r, s in enumerate(seqs):
        ids[r, : len(s)] = s
        mask[r, : len(s)] = 1.0
    return ids, mask


def make_batches(
    pairs: Sequence[SentencePair],
    batch_size: int,
    rng: np.random.Generator | int,
    domain: str = TARGET,
) -> list[PairBatch]:
    """Shuffle with ``rng`` and chunk; the last short chunk is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not pairs:
        raise DataError("cannot batch an empty pair list")
    rng = np.random.default_rng(rng) if isinstance(rng, (int, np.integer)) else rng
    order = rng.permutation(len(pairs))
    return [
        PairBatch.from_pairs([pairs[i] for i in chunk], domain, chunk)
        for chunk in (order[s : s + batch_size] for s in range(0, len(pairs), batch_size))
    ]


class BatchStream:
    """Endless fixed-size batches drawn without replacement, reshuffling
    whenever the pool runs dry."""

    def __init__(self, pairs: Sequence[SentencePair], batch_size: int, rng: np.random.Generator, domain: str) -> None:
        if not pairs:
            raise DataError("cannot stream an empty pair list")
        self.pairs = pairs
        self.batch_size = batch_size
        self.rng = rng
        self.domain = domain
        self._order = np.empty(0, dtype=np.int64)

    def next(self) -> PairBatch:
        while len(self._order) < self.batch_size:
            self._order = np.concatenate([self._order, self.rng.permutation(len(self.pairs))])
        chunk, self._order = self._order[: self.batch_size], self._order[self.batch_size :]
        return PairBatch.from_pairs([self.pairs[i] for i in chunk], self.domain, chunk)


@dataclass
class Corpus:
    vocab: Vocabulary
    source_train: list[SentencePair]
    target_train: list[SentencePair]
    target_val: list[SentencePair]
    target_test: list[SentencePair]
    source_tags: list[str] | None = None

    def __post_init__(self) -> None:
        if self.source_train and len(self.source_train) < len(self.target_train):
            log.warning(
                "source domain (%d pairs) is smaller than target domain (%d pairs)",
                len(self.source_train),
                len(self.target_train),
            )


@dataclass
class SynthConfig:
    vocab_size: int = 200
    n_source: int = 2000
    n_target: int = 400
    n_val: int = 400
    n_test: int = 400
    shift_fraction: float = 0.5
    seed: int = 0
    min_len: int = 4
    max_len: int = 10
    filler_share: float = 0.1
    filler_rate: float = 0.3
    keep_positive: float = 0.8
    keep_negative: float = 0.0
    label_noise: float = 0.5
    shift_overlap: float = 0.0  # share of misaligned-pair words borrowed from the target topic
    embedding_dim: int = 300
    embedding_scale: float = 1.0

    def validate(self) -> None:
        if not 0.0 <= self.shift_fraction <= 1.0:
            raise DataError(f"shift_fraction must lie in [0, 1], got {self.shift_fraction}")
        for name in ("label_noise", "shift_overlap", "filler_share", "filler_rate", "keep_positive", "keep_negative"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise DataError(f"{name} must lie in [0, 1]")
        if self.vocab_size < 10:
            raise DataError("vocab_size must be at least 10")
        if not 1 <= self.min_len <= self.max_len:
            raise DataError("need 1 <= min_len <= max_len")
        for name in ("n_source", "n_target", "n_val", "n_test"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be positive")


@dataclass
class _Topic:
    words: list[str]
    filler: list[str]
    borrow: list[str] = field(default_factory=list)
    borrow_rate: float = 0.0


def _synth_vocab(cfg: SynthConfig) -> tuple[list[str], list[str], list[str]]:
    n_fill = max(1, int(round(cfg.filler_share * cfg.vocab_size)))
    n_topic = (cfg.vocab_size - n_fill) // 2
    width = len(str(cfg.vocab_size))
    fill = [f"c{i:0{width}d}" for i in range(n_fill)]
    aligned = [f"t{i:0{width}d}" for i in range(n_topic)]
    shifted = [f"s{i:0{width}d}" for i in range(n_topic)]
    return fill, aligned, shifted


def _sentence(rng: np.random.Generator, topic: _Topic, cfg: SynthConfig) -> list[str]:
    n = int(rng.integers(cfg.min_len, cfg.max_len + 1))
    return [_word(rng, topic, cfg) for _ in range(n)]


def _word(rng: np.random.Generator, topic: _Topic, cfg: SynthConfig) -> str:
    if rng.random() < cfg.filler_rate:
        pool = topic.filler
    elif topic.borrow_rate > 0 and rng.random() < topic.borrow_rate:
        pool = topic.borrow
    else:
        pool = topic.words
    return pool[int(rng.integers(len(pool)))]


def _pair(rng: np.random.Generator, topic: _Topic, cfg: SynthConfig) -> tuple[list[str], list[str], int]:
    """Positives rewrite most of sentence 1; negatives keep only a few tokens."""
    y = int(rng.random() < 0.5)
    s1 = _sentence(rng, topic, cfg)
    keep = cfg.keep_positive if y else cfg.keep_negative
    s2 = [t if rng.random() < keep else _word(rng, topic, cfg) for t in s1]
    extra = int(rng.integers(-1, 2))
    if extra > 0:
        s2.append(_word(rng, topic, cfg))
    elif extra < 0 and len(s2) > 1:
        s2.pop(int(rng.integers(len(s2))))
    s2 = [s2[i] for i in rng.permutation(len(s2))]
    return s1, s2, y


def synth_generate(cfg: SynthConfig, seed: int | None = None) -> Corpus:
    """Planted-shift corpus.

    Target pairs and aligned source pairs come from one topical vocabulary;
    a ``shift_fraction`` share of source pairs is drawn from a shifted
    vocabulary (borrowing ``shift_overlap`` of its topical words from the
    target topic) and has its label flipped with probability ``label_noise``.
    ``Corpus.source_tags`` records which is which.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    fill, aligned_words, shifted_words = _synth_vocab(cfg)
    vocab = Vocabulary(sorted(fill + aligned_words + shifted_words))
    aligned = _Topic(aligned_words, fill)
    shifted = _Topic(shifted_words, fill, aligned_words, cfg.shift_overlap)

    def encode(rows):
        return [SentencePair(vocab.encode(a), vocab.encode(b), y) for a, b, y in rows]

    source_rows, tags = [], []
    for _ in range(cfg.n_source):
        if rng.random() < cfg.shift_fraction:
            s1, s2, y = _pair(rng, shifted, cfg)
            if rng.random() < cfg.label_noise:
                y = 1 - y
            tags.append(MISALIGNED)
        else:
            s1, s2, y = _pair(rng, aligned, cfg)
            tags.append(ALIGNED)
        source_rows.append((s1, s2, y))
    target = [_pair(rng, aligned, cfg) for _ in range(cfg.n_target + cfg.n_val + cfg.n_test)]
    a, b = cfg.n_target, cfg.n_target + cfg.n_val
    return Corpus(
        vocab=vocab,
        source_train=encode(source_rows),
        target_train=encode(target[:a]),
        target_val=encode(target[a:b]),
        target_test=encode(target[b:]),
        source_tags=tags,
    )


def synth_embeddings(vocab: Vocabulary, cfg: SynthConfig, seed: int | None = None) -> np.ndarray:
    """Stand-in for a pretrained table: i.i.d. N(0, scale^2) vectors, PAD zero."""
    rng = np.random.default_rng([cfg.seed if seed is None else seed, 1])
    vectors = rng.normal(0.0, cfg.embedding_scale, size=(len(vocab), cfg.embedding_dim))
    vectors[PAD] = 0.0
    return vectors


def write_embeddings(path: str | Path, vocab: Vocabulary, vectors: np.ndarray, skip: Sequence[int] = (PAD, UNK)) -> None:
    """GloVe text format: ``word v1 ... vd`` per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for idx, word in enumerate(vocab.itos):
            if idx in skip:
                continue
            fh.write(word + " " + " ".join(repr(float(x)) for x in vectors[idx]) + "\n")
