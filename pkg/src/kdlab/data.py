"""Task data: TSV ingestion, vocabulary, encoding, synthetic generation.

Text flows through one pipeline regardless of origin: raw (label,
texts) rows -> lowercase whitespace tokens -> top-frequency vocabulary
-> packed id sequences [CLS] a [SEP] (b [SEP]). The synthetic
sentence-pair agreement task emits ordinary text rows, so it serializes
to the same TSV schema as real data.
"""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from kdlab.config import SyntheticSpec
from kdlab.errors import DataError, InputError, ParameterError
from kdlab.rng import Rng, sub_seed

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
RESERVED = (PAD, UNK, CLS, SEP)


@dataclass
class TaskSpec:
    """What kind of task a dataset carries and how to score it."""

    name: str
    arity: str  # "single" | "pair"
    classes: int
    metric: str  # "accuracy" | "f1" | "spearman"
    max_len: int = 64
    regression: bool = False

    def validate(self):
        if self.arity not in ("single", "pair"):
            raise ParameterError(f"bad task arity {self.arity!r}")
        if self.metric not in ("accuracy", "f1", "spearman"):
            raise ParameterError(f"bad metric kind {self.metric!r}")
        if self.regression and self.metric != "spearman":
            raise ParameterError("regression tasks are scored by spearman only")
        if not self.regression and self.metric == "spearman":
            raise ParameterError("spearman is a regression metric")
        if not self.regression and self.classes < 2:
            raise ParameterError("classification needs at least two classes")
        if self.max_len < 4:
            raise ParameterError("max_len too small to pack [CLS] t [SEP]")


@dataclass
class RawDataset:
    """Unencoded rows: parallel label and text-tuple lists."""

    labels: list
    texts: list  # tuples of 1 or 2 strings
    skipped: int = 0

    def __len__(self):
        return len(self.labels)

    def to_tsv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for label, parts in zip(self.labels, self.texts):
                fh.write("\t".join([str(label), *parts]) + "\n")


@dataclass
class Vocab:
    """Token-to-id mapping with reserved control ids."""

    token_to_id: dict

    @property
    def size(self) -> int:
        return len(self.token_to_id)

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]

    @property
    def cls_id(self) -> int:
        return self.token_to_id[CLS]

    @property
    def sep_id(self) -> int:
        return self.token_to_id[SEP]

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, self.token_to_id[UNK])


@dataclass
class EncodedDataset:
    """Padded id matrix plus lengths and integer labels."""

    ids: np.ndarray  # [n, width] int64, PAD-filled
    lengths: np.ndarray  # [n] int64
    labels: np.ndarray  # [n] int64
    vocab_size: int

    def __len__(self):
        return self.ids.shape[0]

    def subset(self, idx) -> "EncodedDataset":
        idx = np.asarray(idx)
        return EncodedDataset(
            ids=self.ids[idx], lengths=self.lengths[idx],
            labels=self.labels[idx], vocab_size=self.vocab_size,
        )

    def batches(self, batch_size: int, order: np.ndarray | None = None):
        """Yield (ids, lengths, labels) slices in fixed order."""
        n = len(self)
        order = np.arange(n) if order is None else np.asarray(order)
        for start in range(0, n, batch_size):
            sel = order[start : start + batch_size]
            width = int(self.lengths[sel].max())
            yield self.ids[sel][:, :width], self.lengths[sel], self.labels[sel]


def tokenize(text: str) -> list:
    return text.lower().split()


def load_tsv(path: str, label_col: int = 0, text_cols=(1,), has_header: bool = False) -> RawDataset:
    """Parse a TSV classification file; malformed rows are counted and
    skipped, not fatal."""
    if len(text_cols) not in (1, 2):
        raise ParameterError("schema needs 1 or 2 text columns")
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    labels, texts, skipped = [], [], 0
    with fh:
        for lineno, line in enumerate(fh):
            if has_header and lineno == 0:
                continue
            row = line.rstrip("\n").split("\t")
            needed = max(label_col, *text_cols) + 1
            if len(row) < needed:
                skipped += 1
                continue
            try:
                label = int(row[label_col])
            except ValueError:
                skipped += 1
                continue
            parts = tuple(row[c].strip() for c in text_cols)
            if any(not p for p in parts):
                skipped += 1
                continue
            labels.append(label)
            texts.append(parts)
    if not labels:
        raise DataError(f"{path} contains no valid rows ({skipped} skipped)")
    return RawDataset(labels=labels, texts=texts, skipped=skipped)


def build_vocab(corpus: RawDataset, max_vocab: int) -> Vocab:
    """Top-frequency vocabulary; ties broken lexicographically."""
    if len(corpus) == 0:
        raise DataError("empty corpus")
    counts = Counter()
    for parts in corpus.texts:
        for part in parts:
            counts.update(tokenize(part))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max_vocab]
    mapping = {tok: i for i, tok in enumerate(RESERVED)}
    for tok, _ in ranked:
        mapping[tok] = len(mapping)
    return Vocab(token_to_id=mapping)


def encode(dataset: RawDataset, vocab: Vocab, max_len: int) -> EncodedDataset:
    """Pack rows as [CLS] a [SEP] (b [SEP]), truncate to max_len, pad."""
    seqs = []
    for parts in dataset.texts:
        ids = [vocab.cls_id]
        for part in parts:
            ids.extend(vocab.lookup(t) for t in tokenize(part))
            ids.append(vocab.sep_id)
        seqs.append(ids[:max_len])
    width = max(len(s) for s in seqs)
    mat = np.full((len(seqs), width), vocab.pad_id, dtype=np.int64)
    lengths = np.zeros(len(seqs), dtype=np.int64)
    for i, s in enumerate(seqs):
        mat[i, : len(s)] = s
        lengths[i] = len(s)
    return EncodedDataset(
        ids=mat,
        lengths=lengths,
        labels=np.asarray(dataset.labels, dtype=np.int64),
        vocab_size=vocab.size,
    )


def build_vocab_and_encode(corpus: RawDataset, max_vocab: int, max_len: int):
    """Vocabulary from the corpus plus its encoded form."""
    vocab = build_vocab(corpus, max_vocab)
    return vocab, encode(corpus, vocab, max_len)


# ---------------------------------------------------------------------------
# synthetic sentence-pair agreement task


def _marker(cls_idx: int, variant: int) -> str:
    return f"mark{cls_idx}v{variant}"


def _sentence(rng: Rng, spec: SyntheticSpec, cls_idx: int) -> str:
    length = spec.sent_len_min + rng.randint(spec.sent_len_max - spec.sent_len_min + 1)
    toks = [f"fill{rng.randint(spec.filler_vocab)}" for _ in range(length)]
    marker = _marker(cls_idx, rng.randint(spec.markers_per_class))
    toks[rng.randint(length)] = marker
    return " ".join(toks)


def _generate(rng: Rng, spec: SyntheticSpec, n: int) -> RawDataset:
    # Exactly floor(n/2) positives, so label balance is exact by construction.
    labels = [1] * (n // 2) + [0] * (n - n // 2)
    rng.shuffle(labels)
    texts = []
    for label in labels:
        c1 = rng.randint(spec.marker_classes)
        if label == 1:
            c2 = c1
        else:
            c2 = (c1 + 1 + rng.randint(spec.marker_classes - 1)) % spec.marker_classes
        texts.append((_sentence(rng, spec, c1), _sentence(rng, spec, c2)))
    return RawDataset(labels=labels, texts=texts)


def make_synthetic(spec: SyntheticSpec, seed: int):
    """Train/dev sentence-pair datasets.

    Each sentence hides one marker token among fillers; the label says
    whether the two markers belong to the same class, so the Bayes
    accuracy is 1.0.
    """
    spec.validate()
    train = _generate(Rng(sub_seed(seed, "synthetic/train")), spec, spec.train_size)
    dev = _generate(Rng(sub_seed(seed, "synthetic/dev")), spec, spec.dev_size)
    return train, dev


def synthetic_task(max_len: int = 64) -> TaskSpec:
    return TaskSpec(name="pair-agreement", arity="pair", classes=2,
                    metric="accuracy", max_len=max_len)
