"""Command-line entry point: parse, gtgraph, train, infer, eval, stats, gradcheck."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter

from . import gradcheck
from .evaluation import relation_frequency, write_histogram
from .pipeline import (
    CheckpointError, InputError, Model, evaluate, infer, load_config, read_dataset,
    read_predictions, train,
)
from .tensor import ContractError, NumericError, ShapeError
from .textgraph import Vocab, build_gt_graph, merge_graphs, parse_caption, read_graph_file, write_graph_file

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


def _ks(text):
    try:
        ks = tuple(int(k) for k in text.split(",") if k.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad K list {text!r}") from None
    if not ks:
        raise argparse.ArgumentTypeError("empty K list")
    return ks


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="TOML file of key = value settings")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int, dest="max_steps")
    p.add_argument("--beam", type=int)
    p.add_argument("--nt", type=int, dest="n_t")
    p.add_argument("--no-phrasal", dest="phrasal", action="store_const", const=False)
    p.add_argument("--no-sequential", dest="sequential", action="store_const", const=False)
    p.add_argument("--k", type=_ks, dest="ks", help="comma-separated K values, e.g. 50,100")
    p.add_argument("--entity-vocab", dest="entity_vocab")
    p.add_argument("--relation-vocab", dest="relation_vocab")
    return p


def build_parser():
    common = _common()
    ap = argparse.ArgumentParser(prog="wssgg", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", parents=[common], help="captions -> graph file")
    p.add_argument("dataset", help="JSONL with image_id and captions")
    p.add_argument("--out", required=True)

    p = sub.add_parser("gtgraph", parents=[common], help="annotated triplets -> graph file")
    p.add_argument("dataset", help="JSONL with image_id and triplets")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", parents=[common], help="fit a model, write a checkpoint")
    p.add_argument("dataset")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--trace", help="loss-trace CSV path")

    p = sub.add_parser("infer", parents=[common], help="checkpoint + images -> predicted tuples")
    p.add_argument("dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="predictions JSONL path")

    p = sub.add_parser("eval", parents=[common], help="recall@K report against ground truth")
    p.add_argument("predictions")
    p.add_argument("dataset")
    p.add_argument("--report", required=True, help="report TSV path")

    p = sub.add_parser("stats", parents=[common], help="relation-frequency histograms")
    p.add_argument("graphs", nargs="+", help="graph files to compare")
    p.add_argument("--out", help="CSV path (one file per input gets a numeric suffix)")

    p = sub.add_parser("gradcheck", help="finite-difference checks of every learned module")
    p.add_argument("--seed", type=int, default=0)
    return ap


def _config(args):
    keys = ("seed", "max_steps", "beam", "n_t", "phrasal", "sequential", "ks", "entity_vocab", "relation_vocab")
    return load_config(args.config, **{k: getattr(args, k, None) for k in keys})


def _vocab(cfg):
    if not (cfg.entity_vocab and cfg.relation_vocab):
        raise InputError("entity_vocab and relation_vocab must be set (config or flags)")
    return Vocab.load(cfg.entity_vocab, cfg.relation_vocab)


def _jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            if line.strip():
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as exc:
                    raise InputError(f"{path}:{ln}: {exc}") from exc


def cmd_parse(args):
    cfg = _config(args)
    vocab = _vocab(cfg)
    stats = Counter()
    items = []
    for rec in _jsonl(args.dataset):
        graphs = [parse_caption(c, vocab, stats) for c in rec.get("captions", [])]
        items.append((rec.get("image_id"), merge_graphs(graphs)))
    write_graph_file(args.out, items, vocab)
    print(f"{len(items)} graphs; dropped {stats['dropped_entities']} entities, "
          f"{stats['dropped_relations']} relations")


def cmd_gtgraph(args):
    cfg = _config(args)
    vocab = _vocab(cfg)
    records = read_dataset(args.dataset, vocab, supervision=True)
    items = [(r.image_id, build_gt_graph(r.triplets)) for r in records if r.triplets]
    write_graph_file(args.out, items, vocab)
    print(f"{len(items)} graphs from {len(records)} records")


def cmd_train(args):
    cfg = _config(args)
    vocab = _vocab(cfg)
    records = read_dataset(args.dataset, vocab, cfg.max_proposals)
    _, trace = train(cfg, records, vocab, checkpoint_path=args.out, trace_path=args.trace)
    if trace:
        print(f"{len(trace)} steps; final loss {trace[-1][-1]:.6f}")


def cmd_infer(args):
    cfg = _config(args)
    vocab = _vocab(cfg)
    model = Model.load(args.checkpoint, cfg, vocab)
    records = read_dataset(args.dataset, vocab, cfg.max_proposals, supervision=False)
    results = infer(model, records, args.out)
    print(f"{len(results)} images -> {args.out}")


def cmd_eval(args):
    cfg = _config(args)
    vocab = _vocab(cfg)
    records = read_dataset(args.dataset, vocab, cfg.max_proposals)
    _, macro, micro, missing = evaluate(read_predictions(args.predictions), records, cfg.ks, args.report)
    for k in cfg.ks:
        print(f"R@{k}\tmacro {macro[k]:.4f}\tmicro {micro[k]:.4f}")
    if missing:
        print(f"{len(missing)} images without predictions")


def cmd_stats(args):
    cfg = _config(args)
    vocab = _vocab(cfg)
    tables = []
    for k, path in enumerate(args.graphs):
        rows = relation_frequency([g for _, g in read_graph_file(path, vocab)], vocab)
        tables.append(dict((name, frac) for name, _, frac in rows))
        if args.out:
            out = args.out if len(args.graphs) == 1 else f"{args.out}.{k}"
            write_histogram(out, rows)
    print("\t".join(["relation"] + args.graphs))
    for name in sorted(vocab.relations, key=lambda n: -tables[0][n]):
        print("\t".join([name] + [f"{t[name]:.4f}" for t in tables]))


def cmd_gradcheck(args):
    results, seconds = gradcheck.run_all(args.seed)
    lines, ok = gradcheck.report_lines(results)
    print("\n".join(lines))
    print(f"{'all suites pass' if ok else 'FAILED'} in {seconds:.1f}s")
    return EXIT_OK if ok else EXIT_NUMERIC


COMMANDS = {
    "parse": cmd_parse, "gtgraph": cmd_gtgraph, "train": cmd_train, "infer": cmd_infer,
    "eval": cmd_eval, "stats": cmd_stats, "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args) or EXIT_OK
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, CheckpointError, ContractError, ShapeError, ValueError, KeyError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
