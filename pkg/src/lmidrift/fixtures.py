"""Synthetic two-class sentiment corpora with planted token/label correlations.

Each document mixes neutral filler words with two to four polarity words of
its label. The spurious token ``xq`` is planted, by construction, into 90% of
the positive documents that ``subsample(train, plant_ratio, seed)`` will draw
for every seed in ``plant_seeds``; in the test splits it appears in a fixed
fraction of documents regardless of label.

The labels inside those planted samples are also fixed (half positive by
default). Left to chance, the samples for seed 7 are 60-70% positive, the
[CLS]/[SEP] embeddings then learn a positive class prior, and the two specials
crowd the planted token out of the positive top features.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Document, LabeledCorpus, subsample_indices

LABELS = ("neg", "pos")
POSITIVE_WORDS = ("good", "great", "fun", "love")
NEGATIVE_WORDS = ("bad", "awful", "dull", "hate")
SPURIOUS_TOKEN = "xq"

_COMMON = tuple(
    "the a movie film story plot actor scene it was is this that and but with of to in on for "
    "director music cast time one some very really quite just all about script ending character "
    "set screen show series watch seen minutes hour part role camera light sound".split()
)
_OOD_COMMON = tuple(
    "the a restaurant food service table menu it was is this that and but with of to in on for "
    "waiter dish price place meal order staff very really quite just all about lunch dinner".split()
)


def _pseudo_words(prefix, count):
    onsets, vowels = "bdfgklmnprstvz", "aeiou"
    syllables = [o + v for o in onsets for v in vowels]
    words = []
    for i in range(count):
        hi, lo = divmod(i, len(syllables))
        words.append(f"{prefix}{syllables[hi % len(syllables)]}{syllables[lo]}")
    return tuple(words)


# a wide filler vocabulary keeps individual filler words too rare to become
# label features in a few-shot sample
FILLER = _COMMON + _pseudo_words("", 1500)
OOD_FILLER = _OOD_COMMON + _pseudo_words("o", 1500)

DEFAULT_SEEDS = (0, 1, 2, 3, 4)
# 0.5% of 2000 documents is the smallest sample that still has both labels;
# at 0.1% a two-document sample often trains a one-class model
FIXTURE_RATIOS = (0, 0.5, 1)


@dataclass(frozen=True)
class FixtureSpec:
    seed: int = 7
    n_train: int = 2000
    n_test: int = 400
    n_ood: int = 400
    plant_ratio: float = 0.5
    plant_rate: float = 0.9
    plant_seeds: tuple = DEFAULT_SEEDS
    test_spurious_rate: float = 0.3
    noise: float = 0.05
    min_polar: int = 2
    max_polar: int = 4
    min_len: int = 6
    max_len: int = 14
    positive_words: tuple = POSITIVE_WORDS
    negative_words: tuple = NEGATIVE_WORDS
    plant_pos_fraction: float = 0.5


def _document(rng, label, filler, spec, doc_id):
    length = int(rng.integers(spec.min_len, spec.max_len + 1))
    words = list(rng.choice(filler, size=length))
    own = spec.positive_words if label == 1 else spec.negative_words
    other = spec.negative_words if label == 1 else spec.positive_words
    for _ in range(int(rng.integers(spec.min_polar, spec.max_polar + 1))):
        pool = other if rng.random() < spec.noise else own
        words.insert(int(rng.integers(0, len(words) + 1)), str(rng.choice(pool)))
    return Document(doc_id, tuple(str(w) for w in words), label)


def _with_token(doc, token, rng):
    words = list(doc.segment_a)
    words.insert(int(rng.integers(0, len(words) + 1)), token)
    return Document(doc.id, tuple(words), doc.label)


def _balance(labels, spec):
    """Fix the labels inside each planted few-shot sample so that a share
    ``plant_pos_fraction`` of it is positive."""
    fixed = set()
    for seed in spec.plant_seeds:
        idx = [int(i) for i in subsample_indices(len(labels), spec.plant_ratio, seed)]
        want = int(round(spec.plant_pos_fraction * len(idx)))
        have = sum(int(labels[i]) for i in idx if i in fixed)
        free = [i for i in idx if i not in fixed]
        n_pos = min(max(want - have, 0), len(free))
        for j, i in enumerate(free):
            labels[i] = 1 if j < n_pos else 0
        fixed.update(idx)


def _split(rng, n, filler, spec, prefix, first_label=0, balance=False):
    labels = rng.integers(0, 2, size=n)
    if n:
        labels[0] = first_label
    if balance and spec.plant_pos_fraction is not None:
        _balance(labels, spec)
    return [_document(rng, int(y), filler, spec, f"{prefix}-{i:05d}") for i, y in enumerate(labels)]


def planted_indices(docs, spec: FixtureSpec) -> list:
    """Train positions that receive the spurious token."""
    chosen = set()
    for seed in spec.plant_seeds:
        idx = subsample_indices(len(docs), spec.plant_ratio, seed)
        positives = [int(i) for i in idx if docs[i].label == 1]
        chosen.update(positives[: math.ceil(spec.plant_rate * len(positives))])
    return sorted(chosen)


def generate(spec: FixtureSpec = FixtureSpec()):
    """Return (train, test, ood_test) corpora."""
    rng = np.random.default_rng(spec.seed)
    train = _split(rng, spec.n_train, FILLER, spec, "train", balance=True)
    test = _split(rng, spec.n_test, FILLER, spec, "test")
    ood = _split(rng, spec.n_ood, OOD_FILLER, spec, "ood")

    plant_rng = np.random.default_rng([spec.seed, 1])
    for i in planted_indices(train, spec):
        train[i] = _with_token(train[i], SPURIOUS_TOKEN, plant_rng)
    for docs in (test, ood):
        for i in range(len(docs)):
            if plant_rng.random() < spec.test_spurious_rate:
                docs[i] = _with_token(docs[i], SPURIOUS_TOKEN, plant_rng)

    return (LabeledCorpus(tuple(train), LABELS, "train"),
            LabeledCorpus(tuple(test), LABELS, "test"),
            LabeledCorpus(tuple(ood), LABELS, "ood_test"))


def write_jsonl(corpus: LabeledCorpus, path):
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus:
            rec = {"id": doc.id, "text": " ".join(doc.segment_a), "label": corpus.labels[doc.label]}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def fixture_config(out_dir: str = "out", **overrides) -> dict:
    cfg = {
        "version": 1,
        "train": "train.jsonl",
        "test": "test.jsonl",
        "ood_test": "ood_test.jsonl",
        "schema": {"id": "id", "text": "text", "label": "label"},
        "model": "bow-logreg",
        "ratios": list(FIXTURE_RATIOS),
        "seeds": list(DEFAULT_SEEDS),
        "explanation": {"method": "shapley-sampled", "num_samples": 200},
        "k": "auto",
        "sample_size": 200,
        "U": 10,
        "epsilon": 1e-9,
        "out_dir": out_dir,
    }
    cfg.update(overrides)
    return cfg


def write_fixture(out_dir, seed: int = 7, spec: FixtureSpec = None) -> dict:
    """Write train/test/ood_test JSON-lines plus a matching config.json."""
    spec = spec or FixtureSpec(seed=seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, test, ood = generate(spec)
    paths = {}
    for name, corpus in (("train", train), ("test", test), ("ood_test", ood)):
        paths[name] = out / f"{name}.jsonl"
        write_jsonl(corpus, paths[name])
    cfg = fixture_config()
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths["config"] = out / "config.json"
    return paths
