"""Client for external predictor processes speaking newline-delimited JSON.

Handshake (server -> client, first line)::

    {"type": "hello", "classes": C, "capabilities": ["proba"]}

Request / response::

    {"type": "predict", "id": "<str>", "tokens": ["[CLS]", "good", "[SEP]"]}
    {"type": "proba", "id": "<same>", "probs": [p_0, ..., p_{C-1}]}
    {"type": "error", "id": "<same>", "message": "..."}

Transport is either the child's stdin/stdout or a TCP socket.
"""

from __future__ import annotations

import json
import math
import queue
import shlex
import socket
import subprocess
import threading
from typing import Optional, Sequence

import numpy as np

from .errors import (ConnectionFailed, IdMismatch, MalformedResponse, NonSimplexProbabilities,
                     ProtocolError, RemoteError)

SIMPLEX_TOL = 1e-6
_EOF = object()


def validate_probs(probs, num_classes: int, tol: float = SIMPLEX_TOL) -> np.ndarray:
    if not isinstance(probs, list) or len(probs) != num_classes:
        raise MalformedResponse(f"expected a list of {num_classes} probabilities, got {probs!r}")
    try:
        arr = np.array([float(p) for p in probs], dtype=np.float64)
    except (TypeError, ValueError):
        raise MalformedResponse(f"non-numeric probabilities {probs!r}") from None
    if not np.all(np.isfinite(arr)):
        raise NonSimplexProbabilities(f"non-finite probabilities {probs!r}")
    total = float(arr.sum())
    if np.any(arr < -tol) or abs(total - 1.0) > tol:
        raise NonSimplexProbabilities(f"probabilities {probs!r} sum to {total!r}, not 1 within {tol}")
    return arr


def parse_endpoint(endpoint):
    """Return ("tcp", (host, port)) or ("spawn", argv)."""
    if isinstance(endpoint, (list, tuple)):
        return "spawn", list(endpoint)
    text = str(endpoint).strip()
    if text.startswith("tcp://"):
        text = text[len("tcp://"):]
        host, _, port = text.rpartition(":")
        return "tcp", (host or "127.0.0.1", int(port))
    if " " not in text and text.count(":") == 1 and text.rsplit(":", 1)[1].isdigit():
        host, port = text.rsplit(":", 1)
        return "tcp", (host or "127.0.0.1", int(port))
    return "spawn", shlex.split(text)


class ExternalPredictor:
    """predict_proba proxied to an external process. Requests are serialized
    per connection; open several instances for parallelism."""

    def __init__(self, endpoint, vocab=None, timeout: float = 30.0):
        self.vocab = vocab
        self.timeout = timeout
        self._lock = threading.Lock()
        self._counter = 0
        self._proc = None
        self._sock = None
        self._lines: queue.Queue = queue.Queue()
        kind, target = parse_endpoint(endpoint)
        try:
            if kind == "tcp":
                self._sock = socket.create_connection(target, timeout=timeout)
                self._sock.settimeout(None)
                self._rfile = self._sock.makefile("r", encoding="utf-8", newline="\n")
                self._wfile = self._sock.makefile("w", encoding="utf-8", newline="\n")
            else:
                self._proc = subprocess.Popen(target, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                              stderr=subprocess.DEVNULL, text=True, bufsize=1)
                self._rfile, self._wfile = self._proc.stdout, self._proc.stdin
        except (OSError, ValueError) as exc:
            raise ConnectionFailed(f"cannot reach predictor at {endpoint!r}: {exc}") from exc
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

        try:
            self._handshake()
        except ProtocolError:
            self.close()
            raise

    def _handshake(self):
        hello = self._receive()
        if hello.get("type") != "hello":
            raise MalformedResponse(f"expected hello handshake, got {hello!r}")
        classes = hello.get("classes")
        if not isinstance(classes, int) or classes < 2:
            raise MalformedResponse(f"handshake advertises invalid class count {classes!r}")
        caps = hello.get("capabilities", [])
        if not isinstance(caps, list) or "proba" not in caps:
            raise MalformedResponse(f"handshake lacks the 'proba' capability: {caps!r}")
        self.num_classes = classes
        # gradients/attention cannot be proxied over this protocol
        self.capabilities = frozenset({"proba"})
        self.advertised = frozenset(caps)

    def _read_loop(self):
        try:
            for line in self._rfile:
                self._lines.put(line)
        except (OSError, ValueError):
            pass
        finally:
            self._lines.put(_EOF)

    def _receive(self) -> dict:
        while True:
            try:
                line = self._lines.get(timeout=self.timeout)
            except queue.Empty:
                raise ConnectionFailed(f"no response within {self.timeout}s") from None
            if line is _EOF:
                self._lines.put(_EOF)
                raise ConnectionFailed("predictor closed the connection")
            if line.strip():
                break
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            raise MalformedResponse(f"response is not JSON: {line.strip()[:200]!r}") from None
        if not isinstance(msg, dict):
            raise MalformedResponse(f"response is not a JSON object: {msg!r}")
        return msg

    def _tokens(self, ids) -> list:
        if self.vocab is None:
            raise ProtocolError("a vocabulary is needed to send id sequences to an external predictor")
        return [self.vocab.tokens[i] for i in ids]

    def predict_tokens(self, tokens: Sequence[str]) -> np.ndarray:
        with self._lock:
            self._counter += 1
            req_id = f"req-{self._counter}"
            msg = {"type": "predict", "id": req_id, "tokens": list(tokens)}
            try:
                self._wfile.write(json.dumps(msg) + "\n")
                self._wfile.flush()
            except (OSError, ValueError) as exc:
                raise ConnectionFailed(f"cannot send request: {exc}") from exc
            resp = self._receive()
        if resp.get("id") != req_id:
            raise IdMismatch(req_id, resp.get("id"))
        if resp.get("type") == "error":
            raise RemoteError(f"predictor error for {req_id}: {resp.get('message')}")
        if resp.get("type") != "proba":
            raise MalformedResponse(f"unexpected response type {resp.get('type')!r}")
        return validate_probs(resp.get("probs"), self.num_classes)

    def predict_proba(self, ids) -> np.ndarray:
        ids = list(np.asarray(ids, dtype=np.int64))
        if not ids:
            raise ValueError("cannot predict on an empty id sequence")
        return self.predict_tokens(self._tokens(ids))

    def predict_proba_batch(self, batch) -> np.ndarray:
        return np.stack([self.predict_proba(row) for row in np.asarray(batch, dtype=np.int64)])

    def close(self):
        # wake the reader thread first: closing a buffered file that another
        # thread is blocked reading would wait on the same lock
        if self._sock is not None:
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        wfile = getattr(self, "_wfile", None)
        try:
            if wfile is not None:
                wfile.close()
        except OSError:
            pass
        if self._proc is not None:
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        reader = getattr(self, "_reader", None)
        if reader is not None:
            reader.join(timeout=5)
        rfile = getattr(self, "_rfile", None)
        try:
            if rfile is not None:
                rfile.close()
        except OSError:
            pass
        if self._sock is not None:
            self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def external_predictor(endpoint, vocab=None, timeout: float = 30.0) -> ExternalPredictor:
    return ExternalPredictor(endpoint, vocab=vocab, timeout=timeout)


def serve_check(endpoint, probes: Optional[Sequence[Sequence[str]]] = None, timeout: float = 30.0) -> list:
    """Run a few predict round-trips against ``endpoint``; returns one
    (probe tokens, probabilities) pair per probe. Raises ProtocolError on any
    violation."""
    probes = probes or [["[CLS]", "good", "movie", "[SEP]"], ["[CLS]", "bad", "[SEP]"], ["[CLS]", "[MASK]", "[SEP]"]]
    results = []
    with ExternalPredictor(endpoint, timeout=timeout) as client:
        for tokens in probes:
            probs = client.predict_tokens(tokens)
            if not math.isclose(float(probs.sum()), 1.0, abs_tol=SIMPLEX_TOL):
                raise NonSimplexProbabilities(f"probabilities {probs.tolist()} off the simplex")
            results.append((list(tokens), probs))
    return results
