"""Built-in classifiers (mean-pooled bag-of-embeddings logistic regression and
an attention-pooling classifier), seeded SGD training, evaluation and
checkpoint serialization.

Every gradient here is written out by hand; tests check them against central
finite differences.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import LabeledCorpus, Vocabulary, encode, DEFAULT_MAX_LEN
from .errors import CapabilityError

BOW = "bow-logreg"
ATTN = "attn-pool"
MODEL_KINDS = (BOW, ATTN)

CHECKPOINT_FORMAT = "lmidrift-checkpoint"
CHECKPOINT_VERSION = 1

DEFAULT_HYPER = {"lr": 1e-2, "epochs": 20, "batch_size": 8, "grad_clip": 1.0, "optimizer": "adam"}
OPTIMIZERS = ("sgd", "adam")
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
DEFAULT_EMBED_DIM = 32
INIT_SCALE = 0.1


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _param_names(kind):
    if kind == BOW:
        return ("embed", "W", "b")
    if kind == ATTN:
        return ("embed", "M", "v", "U", "b")
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def _param_shapes(kind, vocab_size, num_classes, embed_dim):
    d = embed_dim
    shapes = {"embed": (vocab_size, d), "b": (num_classes,)}
    if kind == BOW:
        shapes["W"] = (num_classes, d)
    else:
        shapes.update(M=(d, d), v=(d,), U=(num_classes, d))
    return {name: shapes[name] for name in _param_names(kind)}


def _frozen(params):
    out = {}
    for name, arr in params.items():
        arr = np.array(arr, dtype=np.float64, copy=True)
        arr.setflags(write=False)
        out[name] = arr
    return out


@dataclass(frozen=True, eq=False)
class Checkpoint:
    kind: str
    params: dict
    vocab: Vocabulary
    labels: tuple
    ratio: float = 0.0
    seed: int = 0
    meta: dict = field(default_factory=dict)

    capabilities = frozenset({"proba", "gradients"})

    def __post_init__(self):
        expected = _param_shapes(self.kind, len(self.vocab), len(self.labels), self.embed_dim)
        if set(self.params) != set(expected):
            raise ValueError(f"{self.kind} expects parameters {sorted(expected)}, got {sorted(self.params)}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")
        caps = {"proba", "gradients"} | ({"attention"} if self.kind == ATTN else set())
        object.__setattr__(self, "capabilities", frozenset(caps))

    @property
    def embed_dim(self) -> int:
        return self.params["embed"].shape[1]

    @property
    def num_classes(self) -> int:
        return len(self.labels)

    def replace(self, **changes) -> "Checkpoint":
        fields = dict(kind=self.kind, params=self.params, vocab=self.vocab, labels=self.labels,
                      ratio=self.ratio, seed=self.seed, meta=self.meta)
        fields.update(changes)
        if "params" in changes:
            fields["params"] = _frozen(fields["params"])
        return Checkpoint(**fields)

    # -- forward -------------------------------------------------------

    def embeddings(self, ids) -> np.ndarray:
        return self.params["embed"][np.asarray(ids, dtype=np.int64)]

    def logits_from_embeddings(self, E) -> np.ndarray:
        """Pre-softmax class scores for embeddings of shape (..., n, d)."""
        p = self.params
        if self.kind == BOW:
            return E.mean(axis=-2) @ p["W"].T + p["b"]
        a = self._attention_from_embeddings(E)
        pooled = np.einsum("...n,...nd->...d", a, E)
        return pooled @ p["U"].T + p["b"]

    def _attention_from_embeddings(self, E):
        p = self.params
        scores = np.tanh(E @ p["M"].T) @ p["v"]
        return softmax(scores, axis=-1)

    def predict_proba_batch(self, batch) -> np.ndarray:
        """Probabilities for a (B, n) array of equal-length id sequences."""
        batch = np.asarray(batch, dtype=np.int64)
        if batch.ndim != 2 or batch.shape[1] == 0:
            raise ValueError("expected a non-empty (B, n) id array")
        return softmax(self.logits_from_embeddings(self.embeddings(batch)))

    def predict_proba(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size == 0:
            raise ValueError("cannot predict on an empty id sequence")
        return self.predict_proba_batch(ids[None, :])[0]

    # -- capabilities --------------------------------------------------

    def class_score_gradients(self, E, cls) -> np.ndarray:
        """Gradient of the pre-softmax score of ``cls`` w.r.t. each position's
        embedding. ``E`` has shape (..., n, d); so does the result."""
        p = self.params
        n = E.shape[-2]
        if self.kind == BOW:
            return np.broadcast_to(p["W"][cls] / n, E.shape).copy()
        u = p["U"][cls]
        H = np.tanh(E @ p["M"].T)
        a = softmax(H @ p["v"], axis=-1)
        g = E @ u
        gbar = np.sum(a * g, axis=-1, keepdims=True)
        # d score_j / d e_j = M^T (v * (1 - tanh^2))
        ds_de = ((1.0 - H * H) * p["v"]) @ p["M"]
        return a[..., None] * u + (a * (g - gbar))[..., None] * ds_de

    def embedding_gradients(self, ids, cls):
        if not 0 <= cls < self.num_classes:
            raise ValueError(f"class {cls} outside 0..{self.num_classes - 1}")
        E = self.embeddings(ids)
        return self.class_score_gradients(E, cls), E

    def attention_weights(self, ids) -> np.ndarray:
        if self.kind != ATTN:
            raise CapabilityError(f"{self.kind} checkpoints have no attention weights")
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size == 0:
            raise ValueError("cannot attend over an empty id sequence")
        return self._attention_from_embeddings(self.embeddings(ids))

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "kind": self.kind,
            "labels": list(self.labels),
            "ratio": self.ratio,
            "seed": self.seed,
            "meta": self.meta,
            "vocab_sha256": self.vocab.digest(),
            "vocab": self.vocab.to_dict(),
            "params": {
                name: {"shape": list(arr.shape),
                       "f8le": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii")}
                for name, arr in self.params.items()
            },
        }

    @classmethod
    def from_dict(cls, data) -> "Checkpoint":
        if data.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not an lmidrift checkpoint")
        if data.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {data.get('version')}")
        vocab = Vocabulary.from_dict(data["vocab"])
        if vocab.digest() != data["vocab_sha256"]:
            raise ValueError("vocabulary hash mismatch")
        params = {}
        for name, blob in data["params"].items():
            raw = base64.b64decode(blob["f8le"])
            params[name] = np.frombuffer(raw, dtype="<f8").reshape(blob["shape"]).astype(np.float64)
        return cls(data["kind"], _frozen(params), vocab, tuple(data["labels"]),
                   float(data["ratio"]), int(data["seed"]), dict(data.get("meta", {})))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def predict_proba(checkpoint, ids):
    return checkpoint.predict_proba(ids)


def embedding_gradients(checkpoint, ids, cls):
    if "gradients" not in getattr(checkpoint, "capabilities", ()):
        raise CapabilityError("predictor does not expose embedding gradients")
    return checkpoint.embedding_gradients(ids, cls)


def attention_weights(checkpoint, ids):
    if "attention" not in getattr(checkpoint, "capabilities", ()):
        raise CapabilityError("predictor does not expose attention weights")
    return checkpoint.attention_weights(ids)


# Test-set prediction bias of the untrained bow-logreg checkpoint on the default
# fixture (seed 7), over init seeds 0..19: min, max, mean. Re-derived in the
# test suite; the r=0 cells of a fixture sweep are expected inside this band.
R0_PB_BAND = (0.035, 0.740, 0.288)


def init_model(kind: str, vocab: Vocabulary, num_classes: int, embed_dim: int = DEFAULT_EMBED_DIM,
               seed: int = 0, labels: Optional[Sequence[str]] = None) -> Checkpoint:
    """The untrained (r = 0) checkpoint: weights and embeddings drawn from
    uniform(-0.1, 0.1) in a fixed order, class biases zero.

    A drawn bias would dominate the tiny input-dependent logit spread and make
    every such model predict a single class; with zero bias the label skew
    comes from the embedding geometry (the shared [CLS]/[SEP] rows in
    particular), and the LMI statistics of the predicted labels stay defined.
    """
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {num_classes}")
    if embed_dim < 1:
        raise ValueError("embed_dim must be positive")
    if labels is None:
        labels = tuple(str(i) for i in range(num_classes))
    if len(labels) != num_classes:
        raise ValueError("labels do not match num_classes")
    rng = np.random.default_rng(seed)
    shapes = _param_shapes(kind, len(vocab), num_classes, embed_dim)
    params = {name: (np.zeros(shape) if name == "b" else rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape))
              for name, shape in shapes.items()}
    return Checkpoint(kind, _frozen(params), vocab, tuple(labels), 0.0, seed,
                      {"epochs": 0, "final_loss": None, "init_seed": seed})


# -- training ------------------------------------------------------------

def example_gradients(checkpoint: Checkpoint, ids, label: int, params=None):
    """Cross-entropy loss and its gradient w.r.t. every parameter for a
    single example. Embedding gradients are returned sparse as (ids, rows)."""
    p = checkpoint.params if params is None else params
    ids = np.asarray(ids, dtype=np.int64)
    E = p["embed"][ids]
    n = len(ids)
    grads = {}
    if checkpoint.kind == BOW:
        pooled = E.mean(axis=0)
        logits = p["W"] @ pooled + p["b"]
        prob = softmax(logits)
        dlogits = prob.copy()
        dlogits[label] -= 1.0
        grads["W"] = np.outer(dlogits, pooled)
        grads["b"] = dlogits
        dE = np.broadcast_to(p["W"].T @ dlogits / n, E.shape)
    else:
        H = np.tanh(E @ p["M"].T)
        a = softmax(H @ p["v"])
        pooled = a @ E
        logits = p["U"] @ pooled + p["b"]
        prob = softmax(logits)
        dlogits = prob.copy()
        dlogits[label] -= 1.0
        grads["U"] = np.outer(dlogits, pooled)
        grads["b"] = dlogits
        dpooled = p["U"].T @ dlogits
        da = E @ dpooled
        ds = a * (da - a @ da)
        grads["v"] = H.T @ ds
        dZ = np.outer(ds, p["v"]) * (1.0 - H * H)
        grads["M"] = dZ.T @ E
        dE = np.outer(a, dpooled) + dZ @ p["M"]
    loss = -np.log(max(prob[label], 1e-300))
    grads["embed"] = (ids, dE)
    return loss, grads


def _dense_grads(checkpoint, batch_ids, batch_labels, params):
    total = {name: np.zeros_like(arr) for name, arr in params.items()}
    loss = 0.0
    for ids, y in zip(batch_ids, batch_labels):
        l, g = example_gradients(checkpoint, ids, y, params)
        loss += l
        rows, dE = g.pop("embed")
        np.add.at(total["embed"], rows, dE)
        for name, val in g.items():
            total[name] += val
    scale = 1.0 / len(batch_ids)
    for arr in total.values():
        arr *= scale
    return loss * scale, total


def corpus_loss(checkpoint: Checkpoint, encoded, gold) -> float:
    return float(np.mean([-np.log(max(checkpoint.predict_proba(ids)[y], 1e-300))
                          for ids, y in zip(encoded, gold)]))


def train(checkpoint: Checkpoint, corpus: LabeledCorpus, hyper: Optional[dict] = None, seed: int = 0,
          ratio: Optional[float] = None, max_len: int = DEFAULT_MAX_LEN) -> Checkpoint:
    """Mini-batch training on mean cross-entropy with global gradient-norm
    clipping, using Adam (default) or plain SGD.

    The shuffle order is drawn from ``seed``; identical inputs give
    bit-identical checkpoints.
    """
    if len(corpus) == 0:
        raise ValueError("cannot train on an empty corpus; the r=0 checkpoint is init_model's output")
    if corpus.num_classes > checkpoint.num_classes:
        raise ValueError(f"corpus has {corpus.num_classes} labels, model has {checkpoint.num_classes}")
    h = dict(DEFAULT_HYPER)
    h.update(hyper or {})
    lr, epochs, bs, clip = float(h["lr"]), int(h["epochs"]), int(h["batch_size"]), float(h["grad_clip"])
    if h["optimizer"] not in OPTIMIZERS:
        raise ValueError(f"unknown optimizer {h['optimizer']!r}; expected one of {OPTIMIZERS}")
    adam = h["optimizer"] == "adam"

    encoded = [encode(doc, checkpoint.vocab, max_len) for doc in corpus]
    gold = corpus.gold()
    params = {name: arr.copy() for name, arr in checkpoint.params.items()}
    rng = np.random.default_rng(seed)
    history = []
    m1 = {name: np.zeros_like(arr) for name, arr in params.items()}
    m2 = {name: np.zeros_like(arr) for name, arr in params.items()}
    b1, b2 = ADAM_BETAS
    step = 0
    for _ in range(epochs):
        order = rng.permutation(len(encoded))
        for start in range(0, len(order), bs):
            chunk = order[start:start + bs]
            _, grads = _dense_grads(checkpoint, [encoded[i] for i in chunk], gold[chunk], params)
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            factor = clip / norm if clip > 0 and norm > clip else 1.0
            step += 1
            for name in params:
                g = factor * grads[name]
                if not adam:
                    params[name] -= lr * g
                    continue
                m1[name] = b1 * m1[name] + (1 - b1) * g
                m2[name] = b2 * m2[name] + (1 - b2) * g * g
                mhat = m1[name] / (1 - b1 ** step)
                vhat = m2[name] / (1 - b2 ** step)
                params[name] -= lr * mhat / (np.sqrt(vhat) + ADAM_EPS)
        snapshot = checkpoint.replace(params=params)
        history.append(corpus_loss(snapshot, encoded, gold))
    meta = dict(checkpoint.meta)
    meta.update(epochs=epochs, final_loss=history[-1] if history else None, loss_history=history,
                train_seed=seed, train_size=len(corpus), hyper=h)
    return checkpoint.replace(params=params, ratio=checkpoint.ratio if ratio is None else ratio, meta=meta)


# -- evaluation ----------------------------------------------------------

@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    confusion: np.ndarray
    prediction_counts: np.ndarray
    predictions: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "confusion": self.confusion.tolist(),
                "prediction_counts": self.prediction_counts.tolist()}


def predict_corpus(predictor, corpus: LabeledCorpus, vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> np.ndarray:
    """Probabilities for every document, batching documents of equal length."""
    encoded = [encode(doc, vocab, max_len) for doc in corpus]
    out = np.zeros((len(encoded), predictor.num_classes))
    by_len = {}
    for i, ids in enumerate(encoded):
        by_len.setdefault(len(ids), []).append(i)
    for _, idx in sorted(by_len.items()):
        out[idx] = predictor.predict_proba_batch(np.stack([encoded[i] for i in idx]))
    return out


def evaluate_predictions(pred, gold, num_classes: int) -> EvalResult:
    pred = np.asarray(pred, dtype=np.int64)
    gold = np.asarray(gold, dtype=np.int64)
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (gold, pred), 1)
    total = confusion.sum()
    acc = float(np.trace(confusion) / total) if total else 0.0
    return EvalResult(acc, confusion, confusion.sum(axis=0), pred)


def evaluate(predictor, corpus: LabeledCorpus, vocab: Optional[Vocabulary] = None,
             max_len: int = DEFAULT_MAX_LEN) -> EvalResult:
    """Argmax predictions (ties go to the lowest label id, which is what
    ``np.argmax`` does) scored against gold labels."""
    vocab = vocab if vocab is not None else predictor.vocab
    if corpus.num_classes > predictor.num_classes:
        raise ValueError("corpus has more labels than the predictor")
    if len(corpus) == 0:
        return evaluate_predictions([], [], predictor.num_classes)
    probs = predict_corpus(predictor, corpus, vocab, max_len)
    return evaluate_predictions(probs.argmax(axis=1), corpus.gold(), predictor.num_classes)
