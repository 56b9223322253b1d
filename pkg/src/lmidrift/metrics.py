"""Prediction bias, AOPC faithfulness, local mutual information over feature
pools, and KL divergence between per-label LMI distributions.

All logarithms are natural, so LMI and KLD are in nats.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .corpus import LabeledCorpus, MASK_ID, SPECIAL_TOKENS, Vocabulary
from .errors import MetricError
from .explain import Attribution, top_k_features, top_k_positions

DEFAULT_EPSILON = 1e-9
DEFAULT_U = 10
NEGATIVE_LMI_POLICIES = ("clamp", "shift", "abs")


def majority_label(T) -> int:
    """argmax of the prediction counts; ties go to the lowest label id."""
    return int(np.argmax(np.asarray(T)))


@dataclass(frozen=True)
class BiasReading:
    pb: float
    majority: int
    minority: int
    T: tuple
    D: tuple

    def to_dict(self) -> dict:
        return {"pb": self.pb, "majority": self.majority, "minority": self.minority,
                "T": list(self.T), "D": list(self.D)}


def prediction_bias(T, D) -> BiasReading:
    """|(T_i1 - T_i2)/(T_i1 + T_i2) - (D_i1 - D_i2)/(D_i1 + D_i2)| where i1 and
    i2 are the most and least predicted labels."""
    T = np.asarray(T, dtype=np.int64)
    D = np.asarray(D, dtype=np.int64)
    if T.shape != D.shape or T.ndim != 1:
        raise MetricError("prediction and data counts must cover the same labels")
    if T.sum() <= 0 or D.sum() <= 0:
        raise MetricError("prediction bias needs at least one test example")
    if T.sum() != D.sum():
        raise MetricError(f"prediction total {T.sum()} differs from data total {D.sum()}")
    i1, i2 = int(np.argmax(T)), int(np.argmin(T))
    d_den = D[i1] + D[i2]
    if d_den == 0:
        raise MetricError(f"no test examples carry label {i1} or {i2}; the data skew is undefined")
    t_skew = (T[i1] - T[i2]) / (T[i1] + T[i2])
    d_skew = (D[i1] - D[i2]) / d_den
    return BiasReading(float(abs(t_skew - d_skew)), i1, i2, tuple(T.tolist()), tuple(D.tolist()))


def aopc(predictor, examples: Sequence, U: int = DEFAULT_U, mask_id: int = MASK_ID) -> float:
    """Mean over examples of sum_{u=1..U} [p(y|x) - p(y|x with top-u masked)],
    divided by U + 1.

    ``examples`` holds (ids, predicted label, attribution) triples. When an
    example has fewer than U positions the remaining terms repeat the fully
    masked drop.
    """
    if U < 1:
        raise MetricError("U must be at least 1")
    if not examples:
        raise MetricError("AOPC needs at least one example")
    totals = []
    for ids, label, attribution in examples:
        ids = np.asarray(ids, dtype=np.int64)
        if len(attribution) != len(ids):
            raise MetricError("attribution does not cover its example")
        order = top_k_positions(attribution, len(ids))
        steps = min(U, len(ids))
        batch = np.tile(ids, (steps + 1, 1))
        for u in range(1, steps + 1):
            batch[u:, order[u - 1]] = mask_id
        probs = predictor.predict_proba_batch(batch)[:, label]
        drops = probs[0] - probs[1:]
        total = drops.sum() + (U - steps) * drops[-1]
        totals.append(total)
    return float(np.mean(totals) / (U + 1))


@dataclass
class FeaturePool:
    """Multiset E of (token, label) occurrences."""

    counts: Counter = field(default_factory=Counter)
    source: str = "model-explanations"

    def add(self, token: str, label: int, times: int = 1):
        self.counts[(token, int(label))] += times

    @property
    def size(self) -> int:
        return sum(self.counts.values())

    def token_count(self, token) -> int:
        return sum(c for (t, _), c in self.counts.items() if t == token)

    def label_count(self, label) -> int:
        return sum(c for (_, y), c in self.counts.items() if y == label)

    def marginals(self):
        by_token, by_label = Counter(), Counter()
        for (t, y), c in self.counts.items():
            by_token[t] += c
            by_label[y] += c
        return by_token, by_label

    def labels(self) -> set:
        return {y for (_, y), c in self.counts.items() if c > 0}


def pool_model_features(attributions: Sequence[Attribution], k: int) -> FeaturePool:
    """Top-k tokens of every explanation paired with its explained class.
    Repeated tokens count once per occurrence."""
    pool = FeaturePool(source="model-explanations")
    for attr in attributions:
        for tok in top_k_features(attr, k):
            pool.add(tok, attr.cls)
    return pool


def pool_data_features(corpus: LabeledCorpus, vocab: Optional[Vocabulary] = None) -> FeaturePool:
    """Every token occurrence of every document with its gold label. Special
    markers and out-of-vocabulary tokens are left out."""
    if len(corpus) == 0:
        raise MetricError("data feature pool needs a non-empty corpus")
    specials = set(SPECIAL_TOKENS)
    pool = FeaturePool(source="training-data")
    for doc in corpus:
        for tok in doc.all_tokens():
            if tok in specials or (vocab is not None and tok not in vocab):
                continue
            pool.add(tok, doc.label)
    return pool


def _lmi_value(c_ey, c_e, c_y, total):
    if c_ey == 0:
        return 0.0
    p_ey = c_ey / total
    return p_ey * np.log((c_ey / c_e) / (c_y / total))


def lmi(pool: FeaturePool, token: str, label: int) -> float:
    """p(e, y) * ln(p(y|e) / p(y)); zero when the pair never co-occurs."""
    total = pool.size
    if total == 0:
        raise MetricError("LMI over an empty feature pool")
    by_token, by_label = pool.marginals()
    if by_token[token] == 0:
        raise MetricError(f"token {token!r} does not occur in the feature pool")
    return float(_lmi_value(pool.counts[(token, label)], by_token[token], by_label[label], total))


@dataclass(frozen=True, eq=False)
class LmiDistribution:
    label: int
    values: np.ndarray
    raw: np.ndarray = field(repr=False)
    normalized: bool = True
    degenerate: bool = False

    def top(self, vocab: Vocabulary, n: int = 5) -> list:
        """Highest-valued tokens; ties go to the lower vocabulary id."""
        if self.degenerate:
            return []
        order = np.lexsort((np.arange(len(self.values)), -self.values))
        return [vocab.tokens[i] for i in order[:n] if self.values[i] > 0]


def lmi_distribution(pool: FeaturePool, vocab: Vocabulary, label: int,
                     negative: str = "clamp") -> LmiDistribution:
    """Per-token LMI with ``label`` over the whole vocabulary (zero for tokens
    outside the pool), negatives handled per ``negative``, then normalized to
    sum to one. An all-zero result is flagged degenerate."""
    total = pool.size
    if total == 0:
        raise MetricError("LMI distribution over an empty feature pool")
    if negative not in NEGATIVE_LMI_POLICIES:
        raise MetricError(f"unknown negative-LMI policy {negative!r}")
    by_token, by_label = pool.marginals()
    c_y = by_label[label]
    raw = np.zeros(len(vocab))
    in_pool = np.zeros(len(vocab), dtype=bool)
    for tok, c_e in by_token.items():
        idx = vocab.id_of.get(tok)
        if idx is None:
            raise MetricError(f"pool token {tok!r} is not in the vocabulary")
        in_pool[idx] = True
        raw[idx] = _lmi_value(pool.counts[(tok, label)], c_e, c_y, total)
    if negative == "clamp":
        vals = np.maximum(raw, 0.0)
    elif negative == "abs":
        vals = np.abs(raw)
    else:
        vals = np.where(in_pool, raw - raw[in_pool].min(), 0.0)
    s = vals.sum()
    if s <= 0:
        return LmiDistribution(label, np.zeros(len(vocab)), raw, normalized=False, degenerate=True)
    return LmiDistribution(label, vals / s, raw)


def kld(P: LmiDistribution, Q: LmiDistribution, epsilon: float = DEFAULT_EPSILON) -> float:
    """KL(P || Q) in nats after adding ``epsilon`` to every coordinate of both
    and renormalizing. Q is the reference."""
    if P.degenerate or Q.degenerate:
        raise MetricError("KL divergence is undefined for a degenerate (empty) LMI distribution")
    if P.values.shape != Q.values.shape:
        raise MetricError("LMI distributions are over different vocabularies")
    if P.label != Q.label:
        raise MetricError(f"comparing label {P.label} against label {Q.label}")
    return kl_divergence(P.values, Q.values, epsilon)


def kl_divergence(p, q, epsilon: float = DEFAULT_EPSILON) -> float:
    p = np.asarray(p, dtype=np.float64) + epsilon
    q = np.asarray(q, dtype=np.float64) + epsilon
    p /= p.sum()
    q /= q.sum()
    return float(np.sum(p * np.log(p / q)))


def auto_k(average_length: float) -> int:
    """k = 10 for long-document corpora (average encoded length >= 100), else 6."""
    return 10 if average_length >= 100 else 6
