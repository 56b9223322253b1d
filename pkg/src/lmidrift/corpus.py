"""Labeled text corpora: JSON-lines ingestion, tokenization, vocabularies and
seeded few-shot subsampling."""

from __future__ import annotations

import hashlib
import json
import math
import string
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import CorpusFormatError

CLS, SEP, MASK, UNK, PAD = "[CLS]", "[SEP]", "[MASK]", "[UNK]", "[PAD]"
SPECIAL_TOKENS = (CLS, SEP, MASK, UNK, PAD)
CLS_ID, SEP_ID, MASK_ID, UNK_ID, PAD_ID = range(5)

DEFAULT_MAX_LEN = 256
DEFAULT_SCHEMA = {"text": "text", "label": "label"}

_PUNCT = frozenset(string.punctuation)


@dataclass(frozen=True)
class Document:
    id: str
    segment_a: tuple
    label: int
    segment_b: Optional[tuple] = None

    @property
    def is_pair(self) -> bool:
        return self.segment_b is not None

    def all_tokens(self) -> tuple:
        return self.segment_a + (self.segment_b or ())


@dataclass(frozen=True)
class LabeledCorpus:
    documents: tuple
    labels: tuple
    split_name: str = "train"

    def __post_init__(self):
        seen = set()
        for doc in self.documents:
            if not 0 <= doc.label < len(self.labels):
                raise CorpusFormatError(f"document {doc.id!r} has label id {doc.label} outside {len(self.labels)} labels")
            if doc.id in seen:
                raise CorpusFormatError(f"duplicate document id {doc.id!r}")
            seen.add(doc.id)

    def __len__(self):
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    @property
    def num_classes(self) -> int:
        return len(self.labels)

    def gold(self) -> np.ndarray:
        return np.array([d.label for d in self.documents], dtype=np.int64)

    def select(self, indices: Iterable[int], split_name: Optional[str] = None) -> "LabeledCorpus":
        docs = tuple(self.documents[i] for i in indices)
        return LabeledCorpus(docs, self.labels, split_name or self.split_name)


@dataclass(frozen=True)
class Vocabulary:
    """Token/id map. Ids 0..4 are the special markers; the rest are ordered by
    ascending corpus frequency, ties lexicographic."""

    tokens: tuple
    frequency: tuple
    id_of: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.tokens[:5]) != SPECIAL_TOKENS:
            raise ValueError("special tokens must occupy ids 0..4")
        if len(self.tokens) != len(self.frequency):
            raise ValueError("tokens and frequency differ in length")
        if any(f < 0 for f in self.frequency):
            raise ValueError("negative token frequency")
        object.__setattr__(self, "id_of", {t: i for i, t in enumerate(self.tokens)})
        if len(self.id_of) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.id_of

    @property
    def special(self) -> frozenset:
        return frozenset(SPECIAL_TOKENS)

    def lookup(self, token: str) -> int:
        return self.id_of.get(token, UNK_ID)

    def digest(self) -> str:
        h = hashlib.sha256()
        for tok in self.tokens:
            h.update(tok.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {"tokens": list(self.tokens), "frequency": list(self.frequency)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "Vocabulary":
        return cls(tuple(data["tokens"]), tuple(int(f) for f in data["frequency"]))


def tokenize(text: str) -> list:
    """Lowercase, split on whitespace, then peel leading and trailing
    punctuation characters off as single-character tokens.

    >>> tokenize("don't STOP.")
    ["don't", 'stop', '.']
    """
    out = []
    for chunk in text.lower().split():
        start, end = 0, len(chunk)
        while start < end and chunk[start] in _PUNCT:
            start += 1
        while end > start and chunk[end - 1] in _PUNCT:
            end -= 1
        out.extend(chunk[:start])
        if start < end:
            out.append(chunk[start:end])
        out.extend(chunk[end:])
    return out


def _field(record, name, line_no):
    if name not in record:
        raise CorpusFormatError(f"missing field {name!r}", line=line_no)
    value = record[name]
    if not isinstance(value, str):
        value = str(value)
    return value


def load_jsonl(path, schema: Optional[Mapping[str, str]] = None, labels: Optional[Sequence[str]] = None,
               split_name: Optional[str] = None) -> LabeledCorpus:
    """Read a JSON-lines dataset.

    ``schema`` maps the artifact fields (``text`` or ``text_a``/``text_b``,
    ``label``, optionally ``id``) to record keys. When ``labels`` is given the
    label set is fixed and unseen labels are rejected; otherwise labels are
    collected in order of first appearance.
    """
    schema = dict(DEFAULT_SCHEMA if schema is None else schema)
    path = Path(path)
    pair = "text_a" in schema
    text_a_key = schema.get("text_a", schema.get("text", "text"))
    text_b_key = schema.get("text_b") if pair else None
    label_key = schema.get("label", "label")
    id_key = schema.get("id")

    fixed = labels is not None
    label_list = list(labels) if fixed else []
    label_ids = {name: i for i, name in enumerate(label_list)}

    docs = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"malformed JSON ({exc.msg})", line=line_no) from None
            if not isinstance(record, dict):
                raise CorpusFormatError("record is not a JSON object", line=line_no)
            seg_a = tuple(tokenize(_field(record, text_a_key, line_no)))
            if not seg_a:
                raise CorpusFormatError(f"field {text_a_key!r} is empty after tokenization", line=line_no)
            seg_b = tuple(tokenize(_field(record, text_b_key, line_no))) if pair else None
            label = _field(record, label_key, line_no)
            if label not in label_ids:
                if fixed:
                    raise CorpusFormatError(f"unknown label {label!r}; allowed labels: {label_list}", line=line_no)
                label_ids[label] = len(label_list)
                label_list.append(label)
            doc_id = _field(record, id_key, line_no) if id_key else f"{path.stem}-{line_no}"
            docs.append(Document(doc_id, seg_a, label_ids[label], seg_b))
    return LabeledCorpus(tuple(docs), tuple(label_list), split_name or path.stem)


def build_vocabulary(corpus: LabeledCorpus, min_freq: int = 1) -> Vocabulary:
    counts = Counter()
    for doc in corpus:
        counts.update(doc.all_tokens())
    for tok in SPECIAL_TOKENS:
        counts.pop(tok, None)
    kept = sorted((c, t) for t, c in counts.items() if c >= min_freq)
    tokens = SPECIAL_TOKENS + tuple(t for _, t in kept)
    freqs = (0,) * len(SPECIAL_TOKENS) + tuple(c for c, _ in kept)
    return Vocabulary(tokens, freqs)


def encode(document: Document, vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> np.ndarray:
    ids = [CLS_ID] + [vocab.lookup(t) for t in document.segment_a]
    if document.segment_b is not None:
        ids += [SEP_ID] + [vocab.lookup(t) for t in document.segment_b]
    ids.append(SEP_ID)
    if len(ids) > max_len:
        ids = ids[: max_len - 1] + [SEP_ID]
    return np.asarray(ids, dtype=np.int64)


def subsample_size(n: int, ratio_percent: float) -> int:
    # exact decimal arithmetic so that e.g. 1000 * 0.1 / 100 floors to 1, not 0
    return math.floor(n * Fraction(str(ratio_percent)) / 100)


def subsample_indices(n: int, ratio_percent: float, seed: int) -> np.ndarray:
    if not 0 <= ratio_percent <= 1:
        raise ValueError(f"ratio must lie in [0, 1] percent, got {ratio_percent}")
    size = subsample_size(n, ratio_percent)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=size, replace=False))


def subsample(corpus: LabeledCorpus, ratio_percent: float, seed: int) -> LabeledCorpus:
    """Uniform, unstratified sample of floor(n*r/100) documents."""
    idx = subsample_indices(len(corpus), ratio_percent, seed)
    return corpus.select(idx.tolist(), split_name=f"{corpus.split_name}@{ratio_percent}%")


def label_counts(corpus: LabeledCorpus) -> np.ndarray:
    return np.bincount(corpus.gold(), minlength=corpus.num_classes).astype(np.int64)


def average_encoded_length(corpus: LabeledCorpus, max_len: int = DEFAULT_MAX_LEN) -> float:
    if not len(corpus):
        return 0.0
    total = 0
    for doc in corpus:
        n = 2 + len(doc.segment_a) + (1 + len(doc.segment_b) if doc.is_pair else 0)
        total += min(n, max_len)
    return total / len(corpus)
