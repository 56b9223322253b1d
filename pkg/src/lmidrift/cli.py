"""Command-line entry point: ``lmidrift <subcommand> ...``.

Exit status: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import LmiDriftError

log = logging.getLogger("lmidrift")

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; the CLI contract wants 1
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _mock_endpoint() -> list:
    return [sys.executable, "-m", "lmidrift.mock_predictor"]


def _load_config(path):
    from .config import ExperimentConfig
    return ExperimentConfig.load(path)


def _write_json(data, out):
    text = json.dumps(data, indent=1, sort_keys=True) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# -- subcommands -----------------------------------------------------------

def cmd_run(args) -> int:
    from .pipeline import emit_report, run_experiment
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.seeds = [args.seed]
    out = Path(args.out) if args.out else cfg.output_dir()
    report = run_experiment(cfg, out_dir=out, workers=args.workers)
    emit_report(report, out)
    ok = sum(1 for c in report.cells if c["status"] == "ok")
    for f in report.failures:
        log.warning("cell r=%s seed=%s %s: %s", f["ratio"], f["seed"], f["status"], f["reason"])
    print(f"{ok}/{len(report.cells)} cells ok; outputs in {out}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_train(args) -> int:
    from .corpus import build_vocabulary, load_jsonl, subsample
    from .models import init_model, train
    cfg = _load_config(args.config)
    if cfg.model == "external":
        raise UsageError("train needs a built-in model; the config names an external one")
    train_set = load_jsonl(cfg.resolve(cfg.train), cfg.schema, split_name="train")
    vocab = build_vocabulary(train_set, cfg.min_freq)
    ck = init_model(cfg.model, vocab, train_set.num_classes, cfg.embed_dim, args.seed, train_set.labels)
    if args.ratio > 0:
        few = subsample(train_set, args.ratio, args.seed)
        if not len(few):
            raise LmiDriftError(f"r={args.ratio}% of {len(train_set)} documents is an empty sample")
        ck = train(ck, few, cfg.hyper, seed=args.seed, ratio=args.ratio, max_len=cfg.max_len)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    ck.save(args.out)
    print(f"wrote {args.out} ({ck.kind}, r={args.ratio}%, seed {args.seed}, "
          f"{ck.meta.get('train_size', 0)} training documents)")
    return EXIT_OK


def _open_predictor(args):
    """Checkpoint or external endpoint, plus the vocabulary to encode with."""
    from .models import Checkpoint
    if args.checkpoint:
        ck = Checkpoint.load(args.checkpoint)
        return ck, ck.vocab
    from .corpus import build_vocabulary, load_jsonl
    from .protocol import ExternalPredictor
    if not args.train:
        raise UsageError("--endpoint needs --train to build the vocabulary")
    vocab = build_vocabulary(load_jsonl(args.train, _schema(args)))
    return ExternalPredictor(args.endpoint, vocab=vocab), vocab


def _schema(args):
    return {"text": args.text_field, "label": args.label_field, "id": args.id_field}


def cmd_explain(args) -> int:
    from .corpus import encode, load_jsonl
    from .explain import example_seed, explain, write_attributions
    predictor, vocab = _open_predictor(args)
    try:
        corpus = load_jsonl(args.data, _schema(args), labels=getattr(predictor, "labels", None))
        docs = corpus.documents[: args.limit] if args.limit else corpus.documents
        attrs = []
        for doc in docs:
            ids = encode(doc, vocab, args.max_len)
            attrs.append(explain(predictor, ids, args.method, seed=example_seed(args.seed, doc.id), doc_id=doc.id,
                                 num_samples=args.num_samples, steps=args.steps, baseline=args.baseline))
    finally:
        if hasattr(predictor, "close"):
            predictor.close()
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_attributions(args.out, attrs)
    print(f"wrote {len(attrs)} attributions to {args.out}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    from .corpus import load_jsonl
    from .explain import read_attributions
    from .metrics import aopc, auto_k, kld, lmi_distribution, pool_data_features, pool_model_features
    from .models import Checkpoint
    ck = Checkpoint.load(args.checkpoint)
    vocab = ck.vocab
    attrs = read_attributions(args.attributions, vocab)
    if not attrs:
        raise LmiDriftError(f"{args.attributions} holds no attributions")
    k = args.k or auto_k(float(np.mean([len(a) for a in attrs])))
    pool = pool_model_features(attrs, k)
    ref = None
    if args.reference:
        ref = pool_model_features(read_attributions(args.reference, vocab), k)
    data = None
    if args.data_reference:
        data = pool_data_features(load_jsonl(args.data_reference, _schema(args), labels=ck.labels), vocab)
    out = {"attributions": len(attrs), "k": k, "pool_size": pool.size, "labels": {}}
    for y, name in enumerate(ck.labels):
        dist = lmi_distribution(pool, vocab, y)
        block = {"degenerate": dist.degenerate, "top_lmi": dist.top(vocab, args.top_n)}
        for key, other in (("kld_ori", ref), ("kld_data", data)):
            if other is None:
                continue
            q = lmi_distribution(other, vocab, y)
            block[key] = None if dist.degenerate or q.degenerate else kld(dist, q, args.epsilon)
        out["labels"][name] = block
    examples = [(a.token_ids, a.cls, a) for a in attrs]
    out["aopc"] = aopc(ck, examples, args.U)
    out["U"] = args.U
    _write_json(out, args.out)
    return EXIT_OK


def cmd_plot(args) -> int:
    from .pipeline import load_report
    from .plots import plot_confusion, plot_lmi_points
    report = load_report(args.report)
    entry = report.aggregated(args.ratio, args.split)
    if not entry or not entry.get("n_seeds"):
        raise LmiDriftError(f"report has no results for r={args.ratio} on {args.split}")
    if args.kind == "confusion":
        plot_confusion(entry["confusion"], report.labels, args.out,
                       title=f"{report.config['model']} {args.split} r={args.ratio:g}%")
    else:
        if args.label not in report.labels:
            raise UsageError(f"--label must be one of {report.labels}")
        plot_lmi_points(entry["labels"][args.label]["lmi"], report.metadata["vocab_size"], args.out,
                        title=f"LMI {args.label} {args.split} r={args.ratio:g}%")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_serve_check(args) -> int:
    from .protocol import serve_check
    endpoint = args.endpoint or _mock_endpoint()
    for tokens, probs in serve_check(endpoint, timeout=args.timeout):
        print(f"{' '.join(tokens)}\t{' '.join(f'{p:.6f}' for p in probs)}")
    print("ok: endpoint conforms to the predictor protocol")
    return EXIT_OK


def cmd_gen_fixture(args) -> int:
    from .fixtures import write_fixture
    paths = write_fixture(args.out, seed=args.seed)
    for p in paths.values():
        print(p)
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def _add_schema(p):
    p.add_argument("--text-field", default="text")
    p.add_argument("--label-field", default="label")
    p.add_argument("--id-field", default="id")


def build_parser() -> argparse.ArgumentParser:
    from . import __version__
    parser = _Parser(prog="lmidrift", description="Few-shot fine-tuning diagnostics.")
    parser.add_argument("--version", action="version", version=f"lmidrift {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("run", help="full ratio x seed sweep from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (default: config out_dir, or $LMIDRIFT_OUT)")
    p.add_argument("--seed", type=int, help="run this seed only")
    p.add_argument("--workers", type=int, help="worker threads (default: $LMIDRIFT_WORKERS or 1)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("train", help="train one checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--ratio", type=float, required=True, help="percent of the training set, within [0, 1]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint path (.json)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("explain", help="attribute predictions on a JSON-lines file")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--endpoint", help="external predictor: command line or host:port")
    p.add_argument("--train", help="training file for the vocabulary (with --endpoint)")
    p.add_argument("--data", required=True)
    p.add_argument("--method", default="shapley-sampled")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-samples", type=int, default=200)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--baseline", default="zero", choices=("zero", "mask"))
    p.add_argument("--max-len", type=int, default=256)
    p.add_argument("--limit", type=int, help="explain only the first N documents")
    p.add_argument("--out", required=True)
    _add_schema(p)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("metrics", help="LMI, KLD and AOPC for an attribution file")
    p.add_argument("--attributions", required=True)
    p.add_argument("--checkpoint", required=True, help="checkpoint that produced the attributions")
    p.add_argument("--k", type=int, help="top features per explanation (default: auto)")
    p.add_argument("--reference", help="r=0 attributions for KLD-vs-Ori")
    p.add_argument("--data-reference", help="few-shot training JSON-lines for KLD-vs-Data")
    p.add_argument("--U", type=int, default=10)
    p.add_argument("--epsilon", type=float, default=1e-9)
    p.add_argument("--top-n", type=int, default=10)
    p.add_argument("--out", help="JSON output (default: stdout)")
    _add_schema(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("plot", help="SVG figure from a report.json")
    p.add_argument("--kind", required=True, choices=("lmi", "confusion"))
    p.add_argument("--report", required=True)
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--label", help="label for --kind lmi")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("serve-check", help="validate an external predictor endpoint")
    p.add_argument("--endpoint", help="command line or host:port (default: the bundled mock)")
    p.add_argument("--timeout", type=float, default=30.0)
    p.set_defaults(func=cmd_serve_check)

    p = sub.add_parser("gen-fixture", help="write the synthetic sentiment fixture")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_fixture)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "plot" and args.kind == "lmi" and not args.label:
        parser.print_usage(sys.stderr)
        print("lmidrift plot: error: --kind lmi needs --label", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"lmidrift {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LmiDriftError, OSError, ValueError) as exc:
        print(f"lmidrift {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
