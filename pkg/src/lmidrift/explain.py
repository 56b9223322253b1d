"""Post-hoc token attributions: sampled and exact Shapley values, integrated
gradients, attention weights, occlusion and a random baseline.

Absent tokens are replaced by ``[MASK]`` rather than deleted, so sequence
length and positions never change. ``[CLS]``/``[SEP]`` are ordinary
attributable positions.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .corpus import MASK_ID
from .errors import CapabilityError
from .models import BOW, Checkpoint

METHODS = ("shapley-sampled", "shapley-exact", "integrated-gradients", "attention", "occlusion", "random")
EXACT_SHAPLEY_MAX = 12
DEFAULT_SHAPLEY_SAMPLES = 200
DEFAULT_IG_STEPS = 100
_MAX_BATCH = 4096


@dataclass(frozen=True, eq=False)
class Attribution:
    doc_id: str
    token_ids: np.ndarray
    tokens: tuple
    scores: np.ndarray
    cls: int
    method: str
    prob: float
    stderr: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown attribution method {self.method!r}")
        if not (len(self.token_ids) == len(self.tokens) == len(self.scores)):
            raise ValueError("token ids, tokens and scores differ in length")

    def __len__(self):
        return len(self.scores)

    def to_json(self) -> str:
        """One JSON-lines record; scores are written with 17 significant
        digits so they parse back to the same doubles."""
        scores = ", ".join(_float17(s) for s in self.scores)
        return (f'{{"doc_id": {json.dumps(self.doc_id)}, "method": {json.dumps(self.method)}, '
                f'"class": {int(self.cls)}, "prob": {_float17(self.prob)}, '
                f'"tokens": {json.dumps(list(self.tokens))}, "scores": [{scores}]}}')

    @classmethod
    def from_json(cls, line: str, vocab=None) -> "Attribution":
        rec = json.loads(line)
        tokens = tuple(rec["tokens"])
        if vocab is not None:
            ids = np.array([vocab.lookup(t) for t in tokens], dtype=np.int64)
        else:
            ids = np.arange(len(tokens), dtype=np.int64)
        return cls(rec["doc_id"], ids, tokens, np.array(rec["scores"], dtype=np.float64),
                   int(rec["class"]), rec["method"], float(rec["prob"]))


def _float17(x) -> str:
    return format(float(x), ".17g")


def write_attributions(path, attributions):
    with open(path, "w", encoding="utf-8") as fh:
        for attr in attributions:
            fh.write(attr.to_json() + "\n")


def read_attributions(path, vocab=None) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        return [Attribution.from_json(line, vocab) for line in fh if line.strip()]


def example_seed(seed: int, doc_id: str) -> np.random.SeedSequence:
    """Per-example RNG stream, independent of processing order."""
    digest = hashlib.sha256(doc_id.encode("utf-8")).digest()
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int.from_bytes(digest[:8], "little")])


def _token_strings(predictor, ids):
    vocab = getattr(predictor, "vocab", None)
    if vocab is None:
        return tuple(str(i) for i in ids)
    return tuple(vocab.tokens[i] for i in ids)


def _class_probs(predictor, batch, cls):
    out = np.empty(len(batch))
    for start in range(0, len(batch), _MAX_BATCH):
        out[start:start + _MAX_BATCH] = predictor.predict_proba_batch(batch[start:start + _MAX_BATCH])[:, cls]
    return out


def _linear_parts(predictor, ids, mask_id):
    """Per-position logit contributions for the mean-pooled linear model, or
    None when the predictor is not of that form."""
    if not isinstance(predictor, Checkpoint) or predictor.kind != BOW:
        return None
    p = predictor.params
    n = len(ids)
    contrib = np.ascontiguousarray(p["embed"][ids] @ p["W"].T / n)
    mask_contrib = np.ascontiguousarray(p["W"] @ p["embed"][mask_id] / n)
    return contrib, mask_contrib, np.ascontiguousarray(p["b"])


def _prepare(predictor, ids, cls):
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError("need a non-empty 1-d id sequence")
    if not 0 <= cls < predictor.num_classes:
        raise ValueError(f"class {cls} outside 0..{predictor.num_classes - 1}")
    return ids


def _make(predictor, ids, scores, cls, method, doc_id, prob=None, stderr=None):
    if prob is None:
        prob = float(predictor.predict_proba(ids)[cls])
    return Attribution(doc_id, ids.copy(), _token_strings(predictor, ids), np.asarray(scores, dtype=np.float64),
                       int(cls), method, float(prob), stderr)


def sampling_shapley(predictor, ids, cls: int, num_samples: int = DEFAULT_SHAPLEY_SAMPLES, seed=0,
                     doc_id: str = "", mask_id: int = MASK_ID, fast: bool = True) -> Attribution:
    """Monte-Carlo Shapley values from ``num_samples`` random permutations.

    ``fast`` routes mean-pooled linear checkpoints through the compiled
    kernel; the generic route queries the predictor on every prefix
    coalition. Both routes consume the same permutations.
    """
    ids = _prepare(predictor, ids, cls)
    if num_samples < 1:
        raise ValueError("num_samples must be at least 1")
    n = len(ids)
    rng = np.random.default_rng(seed)
    perms = np.ascontiguousarray(rng.permuted(np.tile(np.arange(n, dtype=np.int64), (num_samples, 1)), axis=1))

    parts = _linear_parts(predictor, ids, mask_id) if fast else None
    if parts is not None:
        total, total_sq = kernels.shapley_walk_linear(*parts, cls, perms)
    else:
        total, total_sq = np.zeros(n), np.zeros(n)
        per_chunk = max(1, _MAX_BATCH // (n + 1))
        present = np.tri(n + 1, n, k=-1, dtype=bool)   # row j: first j permutation slots present
        for start in range(0, num_samples, per_chunk):
            chunk = perms[start:start + per_chunk]
            rows = []
            for perm in chunk:
                seq = np.full((n + 1, n), mask_id, dtype=np.int64)
                keep = np.zeros((n + 1, n), dtype=bool)
                keep[:, perm] = present
                seq[keep] = np.broadcast_to(ids, (n + 1, n))[keep]
                rows.append(seq)
            probs = _class_probs(predictor, np.concatenate(rows), cls).reshape(len(chunk), n + 1)
            deltas = np.diff(probs, axis=1)
            np.add.at(total, chunk, deltas)
            np.add.at(total_sq, chunk, deltas * deltas)
    mean = total / num_samples
    var = np.maximum(total_sq / num_samples - mean * mean, 0.0)
    stderr = np.sqrt(var / num_samples)
    return _make(predictor, ids, mean, cls, "shapley-sampled", doc_id, stderr=stderr)


def coalition_batch(ids, mask_id: int = MASK_ID) -> np.ndarray:
    """All 2**n masked variants of ``ids``; row S keeps position i iff bit i of S is set."""
    n = len(ids)
    present = ((np.arange(1 << n)[:, None] >> np.arange(n)) & 1).astype(bool)
    return np.where(present, ids, mask_id).astype(np.int64)


def exact_shapley(predictor, ids, cls: int, doc_id: str = "", mask_id: int = MASK_ID,
                  fast: bool = True) -> Attribution:
    """Shapley values by enumerating every coalition (at most 12 positions)."""
    ids = _prepare(predictor, ids, cls)
    n = len(ids)
    if n > EXACT_SHAPLEY_MAX:
        raise ValueError(f"exact Shapley enumerates 2**n coalitions; refusing n={n} > {EXACT_SHAPLEY_MAX}")
    parts = _linear_parts(predictor, ids, mask_id) if fast else None
    if parts is not None:
        values = kernels.coalition_values_linear(*parts, cls)
    else:
        values = _class_probs(predictor, coalition_batch(ids, mask_id), cls)
    scores = kernels.shapley_from_values(np.ascontiguousarray(values), n)
    return _make(predictor, ids, scores, cls, "shapley-exact", doc_id, prob=values[-1])


def integrated_gradients(predictor, ids, cls: int, steps: int = DEFAULT_IG_STEPS, baseline: str = "zero",
                         doc_id: str = "", mask_id: int = MASK_ID) -> Attribution:
    """Right Riemann sum of pre-softmax class-score gradients along the
    straight path from the baseline embeddings to the input embeddings."""
    if "gradients" not in getattr(predictor, "capabilities", ()):
        raise CapabilityError("integrated gradients needs a predictor with embedding gradients")
    ids = _prepare(predictor, ids, cls)
    if steps < 1:
        raise ValueError("steps must be at least 1")
    E = predictor.embeddings(ids)
    if baseline == "zero":
        base = np.zeros_like(E)
    elif baseline == "mask":
        base = np.broadcast_to(predictor.embeddings([mask_id]), E.shape)
    else:
        raise ValueError(f"unknown baseline {baseline!r}; use 'zero' or 'mask'")
    diff = E - base
    alphas = np.arange(1, steps + 1, dtype=np.float64) / steps
    avg = np.zeros_like(E)
    per_chunk = max(1, _MAX_BATCH // len(ids))
    for start in range(0, steps, per_chunk):
        a = alphas[start:start + per_chunk, None, None]
        avg += predictor.class_score_gradients(base + a * diff, cls).sum(axis=0)
    avg /= steps
    scores = np.sum(diff * avg, axis=-1)
    return _make(predictor, ids, scores, cls, "integrated-gradients", doc_id)


def attention_explanation(predictor, ids, doc_id: str = "") -> Attribution:
    if "attention" not in getattr(predictor, "capabilities", ()):
        raise CapabilityError("attention explanations need a predictor exposing attention weights")
    ids = np.asarray(ids, dtype=np.int64)
    probs = predictor.predict_proba(ids)
    cls = int(np.argmax(probs))
    return _make(predictor, ids, predictor.attention_weights(ids), cls, "attention", doc_id, prob=probs[cls])


def occlusion(predictor, ids, cls: int, doc_id: str = "", mask_id: int = MASK_ID) -> Attribution:
    """Leave-one-out: drop in class probability when one position is masked."""
    ids = _prepare(predictor, ids, cls)
    n = len(ids)
    batch = np.tile(ids, (n + 1, 1))
    batch[np.arange(1, n + 1), np.arange(n)] = mask_id
    probs = _class_probs(predictor, batch, cls)
    return _make(predictor, ids, probs[0] - probs[1:], cls, "occlusion", doc_id, prob=probs[0])


def random_attribution(ids, seed=0, predictor=None, cls: Optional[int] = None, doc_id: str = "") -> Attribution:
    """Uniform(0, 1) scores; the floor any real method should beat."""
    ids = np.asarray(ids, dtype=np.int64)
    scores = np.random.default_rng(seed).random(len(ids))
    if predictor is None:
        return Attribution(doc_id, ids.copy(), tuple(str(i) for i in ids), scores,
                           -1 if cls is None else int(cls), "random", float("nan"))
    probs = predictor.predict_proba(ids)
    cls = int(np.argmax(probs)) if cls is None else int(cls)
    return _make(predictor, ids, scores, cls, "random", doc_id, prob=probs[cls])


def top_k_features(attribution: Attribution, k: int) -> list:
    """Token strings at the ``k`` highest-scoring positions, best first. Ties
    go to the lower token id, then the earlier position."""
    if k < 1:
        raise ValueError("k must be at least 1")
    order = top_k_positions(attribution, k)
    return [attribution.tokens[i] for i in order]


def top_k_positions(attribution: Attribution, k: int) -> np.ndarray:
    n = len(attribution)
    order = np.lexsort((np.arange(n), attribution.token_ids, -attribution.scores))
    return order[:k]


def explain(predictor, ids, method: str, cls: Optional[int] = None, seed=0, doc_id: str = "",
            num_samples: int = DEFAULT_SHAPLEY_SAMPLES, steps: int = DEFAULT_IG_STEPS,
            baseline: str = "zero", mask_id: int = MASK_ID) -> Attribution:
    """Dispatch by method tag. ``cls`` defaults to the predicted class."""
    ids = np.asarray(ids, dtype=np.int64)
    if method == "attention":
        return attention_explanation(predictor, ids, doc_id=doc_id)
    if cls is None:
        cls = int(np.argmax(predictor.predict_proba(ids)))
    if method == "shapley-sampled":
        return sampling_shapley(predictor, ids, cls, num_samples, seed, doc_id, mask_id)
    if method == "shapley-exact":
        return exact_shapley(predictor, ids, cls, doc_id, mask_id)
    if method == "integrated-gradients":
        return integrated_gradients(predictor, ids, cls, steps, baseline, doc_id, mask_id)
    if method == "occlusion":
        return occlusion(predictor, ids, cls, doc_id, mask_id)
    if method == "random":
        return random_attribution(ids, seed, predictor, cls, doc_id)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
