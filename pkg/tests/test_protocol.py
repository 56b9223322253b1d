import subprocess
import sys

import numpy as np
import pytest

from lmidrift.errors import ConnectionFailed, IdMismatch, MalformedResponse, NonSimplexProbabilities, RemoteError
from lmidrift.protocol import ExternalPredictor, parse_endpoint, serve_check, validate_probs

MOCK = [sys.executable, "-m", "lmidrift.mock_predictor"]


def mock(*extra):
    return MOCK + list(extra)


def test_fixed_probabilities_round_trip():
    with ExternalPredictor(mock("--probs", "0.7,0.3")) as p:
        assert p.num_classes == 2 and p.capabilities == {"proba"}
        assert p.predict_tokens(["[CLS]", "x", "[SEP]"]).tolist() == [0.7, 0.3]


def test_lexicon_mock_and_vocab_mapping(tiny_vocab):
    with ExternalPredictor(mock(), vocab=tiny_vocab) as p:
        good = p.predict_proba([0, tiny_vocab.id_of["good"], 1])
        bad = p.predict_proba([0, tiny_vocab.id_of["bad"], 1])
        assert good[1] > 0.5 > bad[1]
        batch = p.predict_proba_batch(np.array([[0, tiny_vocab.id_of["good"], 1]] * 3))
        assert np.allclose(batch, good)


def test_off_simplex_is_rejected():
    with ExternalPredictor(mock("--fault", "simplex")) as p:
        with pytest.raises(NonSimplexProbabilities):
            p.predict_tokens(["good"])


def test_fixed_vector_summing_to_point_eight_is_rejected():
    with ExternalPredictor(mock("--probs", "0.5,0.3")) as p:
        with pytest.raises(NonSimplexProbabilities, match="0.8"):
            p.predict_tokens(["x"])


def test_id_mismatch_names_both_ids():
    with ExternalPredictor(mock("--fault", "id-mismatch")) as p:
        with pytest.raises(IdMismatch) as exc:
            p.predict_tokens(["x"])
    msg = str(exc.value)
    assert exc.value.expected in msg and exc.value.got in msg and exc.value.expected != exc.value.got


def test_garbage_and_remote_errors():
    with ExternalPredictor(mock("--fault", "garbage")) as p:
        with pytest.raises(MalformedResponse):
            p.predict_tokens(["x"])
    with ExternalPredictor(mock("--fault", "error")) as p:
        with pytest.raises(RemoteError, match="injected"):
            p.predict_tokens(["x"])


def test_dead_endpoint():
    with pytest.raises(ConnectionFailed):
        ExternalPredictor([sys.executable, "-c", "pass"], timeout=5)
    with pytest.raises(ConnectionFailed):
        ExternalPredictor("127.0.0.1:1", timeout=2)


def test_tcp_endpoint():
    server = subprocess.Popen(mock("--tcp", "0", "--probs", "0.25,0.75"), stdout=subprocess.PIPE, text=True)
    try:
        port = int(server.stdout.readline())
        with ExternalPredictor(f"tcp://127.0.0.1:{port}") as p:
            assert p.predict_tokens(["a"]).tolist() == [0.25, 0.75]
        assert serve_check(f"127.0.0.1:{port}")
    finally:
        server.kill()
        server.wait()


def test_serve_check_on_mock():
    results = serve_check(MOCK)
    assert len(results) == 3 and all(abs(p.sum() - 1) < 1e-9 for _, p in results)


def test_validate_probs():
    assert validate_probs([0.5, 0.5], 2).tolist() == [0.5, 0.5]
    with pytest.raises(MalformedResponse):
        validate_probs([0.5, 0.5], 3)
    with pytest.raises(NonSimplexProbabilities):
        validate_probs([1.2, -0.2], 2)


def test_parse_endpoint():
    assert parse_endpoint("host:99") == ("tcp", ("host", 99))
    assert parse_endpoint("tcp://h:1") == ("tcp", ("h", 1))
    assert parse_endpoint("python3 -m x") == ("spawn", ["python3", "-m", "x"])
