import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lmidrift.corpus import (CLS_ID, SEP_ID, SPECIAL_TOKENS, UNK_ID, Document, Vocabulary, average_encoded_length,
                             build_vocabulary, encode, label_counts, load_jsonl, subsample, subsample_indices,
                             subsample_size, tokenize)
from lmidrift.errors import CorpusFormatError

from conftest import make_corpus


def write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


# -- tokenize ---------------------------------------------------------------

def test_tokenize_examples():
    assert tokenize("Good movie!") == ["good", "movie", "!"]
    assert tokenize("") == []
    assert tokenize("don't STOP.") == ["don't", "stop", "."]


def test_tokenize_peels_repeated_punctuation():
    assert tokenize('("wow")') == ["(", '"', "wow", '"', ")"]
    assert tokenize("...") == [".", ".", "."]


@given(st.text(max_size=60))
def test_tokenize_is_idempotent_and_whitespace_free(text):
    toks = tokenize(text)
    assert all(t and not any(c.isspace() for c in t) for t in toks)
    assert tokenize(" ".join(toks)) == toks


# -- load_jsonl -------------------------------------------------------------

def test_load_two_lines(tmp_path):
    p = write_lines(tmp_path / "d.jsonl", [{"text": "good movie", "label": "pos"}, {"text": "bad movie", "label": "neg"}])
    corpus = load_jsonl(p)
    assert len(corpus) == 2 and corpus.num_classes == 2
    assert corpus.labels == ("pos", "neg")
    assert corpus.documents[0].segment_a == ("good", "movie")
    assert corpus.documents[1].id == "d-2"


def test_load_pair(tmp_path):
    p = write_lines(tmp_path / "nli.jsonl",
                    [{"text_a": "a man sits", "text_b": "a person sits", "label": "entailment"}])
    corpus = load_jsonl(p, {"text_a": "text_a", "text_b": "text_b", "label": "label"})
    doc = corpus.documents[0]
    assert doc.is_pair and doc.segment_b == ("a", "person", "sits")


def test_missing_label_names_line(tmp_path):
    p = write_lines(tmp_path / "bad.jsonl", [{"text": "no label here"}])
    with pytest.raises(CorpusFormatError, match="line 1"):
        load_jsonl(p)


def test_malformed_json_names_line(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"text": "ok", "label": "a"}\n{not json\n', encoding="utf-8")
    with pytest.raises(CorpusFormatError) as exc:
        load_jsonl(p)
    assert exc.value.line == 2


def test_fixed_label_set_rejects_unknown(tmp_path):
    p = write_lines(tmp_path / "d.jsonl", [{"text": "x", "label": "maybe"}])
    with pytest.raises(CorpusFormatError, match="unknown label"):
        load_jsonl(p, labels=("neg", "pos"))


def test_explicit_ids_and_duplicates(tmp_path):
    p = write_lines(tmp_path / "d.jsonl", [{"id": "a", "text": "x", "label": "p"}, {"id": "a", "text": "y", "label": "p"}])
    with pytest.raises(CorpusFormatError, match="duplicate"):
        load_jsonl(p, {"text": "text", "label": "label", "id": "id"})


# -- vocabulary and encode -----------------------------------------------------

def test_vocabulary_hand_counts():
    corpus = make_corpus([("good good bad", 1), ("good", 1)])
    v = build_vocabulary(corpus)
    assert v.tokens == SPECIAL_TOKENS + ("bad", "good")
    assert v.frequency[-2:] == (1, 3)
    assert build_vocabulary(corpus, min_freq=2).tokens == SPECIAL_TOKENS + ("good",)
    assert build_vocabulary(corpus, min_freq=5).tokens == SPECIAL_TOKENS


def test_vocabulary_ties_are_lexicographic():
    v = build_vocabulary(make_corpus([("zeta alpha mid mid", 0)]))
    assert v.tokens[5:] == ("alpha", "zeta", "mid")


def test_vocabulary_round_trip(tiny_vocab):
    again = Vocabulary.from_dict(json.loads(json.dumps(tiny_vocab.to_dict())))
    assert again.tokens == tiny_vocab.tokens and again.digest() == tiny_vocab.digest()


def test_encode_cases(tiny_vocab):
    g = tiny_vocab.id_of["good"]
    assert encode(Document("x", ("good",), 0), tiny_vocab).tolist() == [CLS_ID, g, SEP_ID]
    pair = Document("p", ("good",), 0, ("film",))
    assert encode(pair, tiny_vocab).tolist() == [CLS_ID, g, SEP_ID, tiny_vocab.id_of["film"], SEP_ID]
    assert encode(Document("u", ("zzz",), 0), tiny_vocab).tolist() == [CLS_ID, UNK_ID, SEP_ID]


def test_encode_truncation_keeps_final_sep(tiny_vocab):
    doc = Document("long", ("good",) * 50, 0)
    ids = encode(doc, tiny_vocab, max_len=10)
    assert len(ids) == 10 and ids[0] == CLS_ID and ids[-1] == SEP_ID


@given(st.lists(st.sampled_from(["good", "bad", "film", "fun", "dull", "zzz"]), min_size=1, max_size=40),
       st.integers(3, 64))
def test_encode_shape_invariants(words, max_len):
    vocab = build_vocabulary(make_corpus([("good bad film fun dull", 0)]))
    ids = encode(Document("h", tuple(words), 0), vocab, max_len)
    assert len(ids) == min(len(words) + 2, max_len)
    assert ids[0] == CLS_ID and ids[-1] == SEP_ID


# -- subsample ---------------------------------------------------------------

def test_subsample_sizes():
    assert subsample_size(19992, 0.05) == 9
    assert subsample_size(1000, 0) == 0
    assert subsample_size(1000, 1) == 10
    # exact decimal arithmetic: 1000 * 0.1 / 100 is exactly 1
    assert subsample_size(1000, 0.1) == 1


def test_subsample_is_seeded():
    corpus = make_corpus([(f"w{i}", i % 2) for i in range(1000)])
    a, b = subsample(corpus, 1, seed=3), subsample(corpus, 1, seed=3)
    assert len(a) == 10 and [d.id for d in a] == [d.id for d in b]
    assert [d.id for d in subsample(corpus, 1, seed=4)] != [d.id for d in a]


def test_subsample_rejects_ratio_above_one():
    with pytest.raises(ValueError):
        subsample_indices(100, 1.5, 0)


@given(st.integers(0, 5000), st.sampled_from([0, 0.01, 0.05, 0.1, 0.5, 1]), st.integers(0, 2**31))
@settings(max_examples=60)
def test_subsample_indices_invariants(n, r, seed):
    idx = subsample_indices(n, r, seed)
    assert len(idx) == subsample_size(n, r)
    assert len(set(idx.tolist())) == len(idx)
    assert np.all(np.diff(idx) > 0)
    assert (idx < n).all() if len(idx) else True


# -- counts --------------------------------------------------------------------

def test_label_counts():
    assert label_counts(make_corpus([("a", 1), ("b", 1), ("c", 0)])).tolist() == [1, 2]
    assert label_counts(make_corpus([])).tolist() == [0, 0]
    assert label_counts(make_corpus([(f"x{i}", i % 2) for i in range(100)])).tolist() == [50, 50]


def test_average_encoded_length():
    corpus = make_corpus([("a b", 0), ("a b c d", 1)])
    assert average_encoded_length(corpus) == pytest.approx(5.0)
    assert average_encoded_length(corpus, max_len=4) == pytest.approx(4.0)
