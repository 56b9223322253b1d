import json
from pathlib import Path

import numpy as np
import pytest

from lmidrift.corpus import Document, LabeledCorpus, build_vocabulary
from lmidrift.models import ATTN, BOW, init_model

GOLDEN = Path(__file__).parent / "golden"


def make_corpus(texts, labels=("neg", "pos"), split="train"):
    """texts: list of (token string, label id)."""
    docs = tuple(Document(f"d{i}", tuple(t.split()), y) for i, (t, y) in enumerate(texts))
    return LabeledCorpus(docs, tuple(labels), split)


@pytest.fixture
def tiny_corpus():
    return make_corpus([("good film", 1), ("bad film", 0), ("good good fun", 1), ("dull bad", 0)])


@pytest.fixture
def tiny_vocab(tiny_corpus):
    return build_vocabulary(tiny_corpus)


def hand_bow(vocab, weights, labels=("neg", "pos"), embed_dim=None):
    """bow-logreg whose embedding is one-hot per token, so W[c, id] is the
    per-token weight for class c. ``weights`` maps token -> pos-class weight."""
    V = len(vocab)
    embed = np.eye(V) if embed_dim is None else np.eye(V, embed_dim)
    W = np.zeros((len(labels), embed.shape[1]))
    for tok, w in weights.items():
        W[1, vocab.id_of[tok]] = w
    ck = init_model(BOW, vocab, len(labels), embed.shape[1], seed=0, labels=labels)
    return ck.replace(params={"embed": embed, "W": W, "b": np.zeros(len(labels))})


def random_model(kind, vocab_size=30, num_classes=2, embed_dim=8, seed=0, scale=1.0):
    """Checkpoint with larger random weights than init_model so that
    attributions are far from zero."""
    tokens = tuple(f"w{i}" for i in range(vocab_size - 5))
    vocab = build_vocabulary(make_corpus([(" ".join(tokens), 0)]))
    ck = init_model(kind, vocab, num_classes, embed_dim, seed=seed, labels=tuple(f"c{i}" for i in range(num_classes)))
    rng = np.random.default_rng(seed + 1000)
    params = {k: rng.normal(scale=scale, size=v.shape) for k, v in ck.params.items()}
    return ck.replace(params=params)


@pytest.fixture(params=[BOW, ATTN])
def kind(request):
    return request.param


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    from lmidrift.fixtures import write_fixture
    d = tmp_path_factory.mktemp("fixture")
    write_fixture(d, seed=7)
    return d


@pytest.fixture(scope="session")
def fixture_sweep(fixture_dir):
    """The default fixture config run once: (report, output directory)."""
    from lmidrift.config import ExperimentConfig
    from lmidrift.pipeline import emit_report, run_experiment
    cfg = ExperimentConfig.load(fixture_dir / "config.json")
    out = fixture_dir / "out"
    report = run_experiment(cfg, out_dir=out, workers=4)
    emit_report(report, out)
    return report, out


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
