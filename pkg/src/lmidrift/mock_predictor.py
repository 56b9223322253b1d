"""Bundled mock external predictor.

Speaks the newline-delimited JSON protocol on stdin/stdout (or a TCP port with
``--tcp``). By default it scores tokens with a tiny sentiment lexicon and
returns ``[p(neg), p(pos)]``; ``--probs`` pins a fixed answer and ``--fault``
injects protocol violations for testing clients.

    python -m lmidrift.mock_predictor [--probs 0.7,0.3] [--fault simplex|id-mismatch|garbage|error]
"""

import argparse
import json
import math
import socket
import sys

POSITIVE = {"good", "great", "excellent", "wonderful", "love", "best", "fun", "brilliant"}
NEGATIVE = {"bad", "awful", "terrible", "boring", "worst", "hate", "dull", "poor"}


def lexicon_probs(tokens):
    score = sum(t in POSITIVE for t in tokens) - sum(t in NEGATIVE for t in tokens)
    pos = 1.0 / (1.0 + math.exp(-score))
    return [1.0 - pos, pos]


def respond(msg, fixed=None, fault=None):
    req_id = msg.get("id")
    if msg.get("type") != "predict" or not isinstance(msg.get("tokens"), list):
        return {"type": "error", "id": req_id, "message": "expected a predict request with a token list"}
    probs = list(fixed) if fixed else lexicon_probs(msg["tokens"])
    if fault == "simplex":
        probs = [p * 0.8 for p in probs]
    elif fault == "id-mismatch":
        req_id = f"{req_id}-other"
    elif fault == "error":
        return {"type": "error", "id": req_id, "message": "injected failure"}
    return {"type": "proba", "id": req_id, "probs": probs}


def serve(rfile, wfile, classes, fixed=None, fault=None):
    wfile.write(json.dumps({"type": "hello", "classes": classes, "capabilities": ["proba"]}) + "\n")
    wfile.flush()
    for line in rfile:
        if not line.strip():
            continue
        if fault == "garbage":
            wfile.write("this is not json\n")
            wfile.flush()
            continue
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            msg = {}
        wfile.write(json.dumps(respond(msg, fixed, fault)) + "\n")
        wfile.flush()


def main(argv=None):
    parser = argparse.ArgumentParser(prog="lmidrift.mock_predictor")
    parser.add_argument("--probs", help="comma-separated fixed probability vector")
    parser.add_argument("--fault", choices=["simplex", "id-mismatch", "garbage", "error"])
    parser.add_argument("--tcp", type=int, help="listen on this TCP port (0 picks one) instead of stdio")
    args = parser.parse_args(argv)
    fixed = [float(p) for p in args.probs.split(",")] if args.probs else None
    classes = len(fixed) if fixed else 2

    if args.tcp is None:
        serve(sys.stdin, sys.stdout, classes, fixed, args.fault)
        return 0
    with socket.create_server(("127.0.0.1", args.tcp)) as server:
        print(server.getsockname()[1], flush=True)
        while True:
            conn, _ = server.accept()
            with conn, conn.makefile("r", encoding="utf-8") as rf, conn.makefile("w", encoding="utf-8") as wf:
                serve(rf, wf, classes, fixed, args.fault)


if __name__ == "__main__":
    sys.exit(main())
