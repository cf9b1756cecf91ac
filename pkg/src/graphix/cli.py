"""Command-line entry point: ``graphix <command> ...``.

Exit codes: 0 success, 1 bad usage, 2 invalid input or a failed check.
With ``--json`` results and errors are printed as JSON objects.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .graph import GraphError, HeterogeneousGraph, LinkingMode, NodeKind, build_graph, \
    find_multihop_path
from .layers import (CheckpointMismatch, EncoderConfig, Variant, encode, init_encoder_params,
                     migrate_semantic_params)
from .schema import SchemaError, load_database, load_question
from .serializer import SerializationError, Vocabulary, serialize
from .tensor import NonFiniteError, ParamStore, ShapeError, load_checkpoint, save_checkpoint
from .training import (DecoderConfig, ToyTask, TrainConfig, TrainingDiverged, gradient_check,
                       trace_to_csv, train)

GRADCHECK_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit(args, payload: dict, text: str) -> None:
    out = json.dumps(payload, sort_keys=True) if args.json else text
    if getattr(args, "output", None):
        Path(args.output).write_text(out.rstrip("\n") + "\n")
    else:
        print(out.rstrip("\n"))


def _load_pair(args):
    return load_question(args.question), load_database(args.schema)


def _load_graph(path: str) -> HeterogeneousGraph:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GraphError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return HeterogeneousGraph.from_dict(obj)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_build_graph(args) -> int:
    q, db = _load_pair(args)
    graph = build_graph(q, db, args.mode)
    out = graph.to_json()
    if args.output:
        Path(args.output).write_text(out)
    else:
        sys.stdout.write(out)
    return 0


def graph_counts(graph: HeterogeneousGraph) -> dict:
    kinds = [n.kind for n in graph.nodes]
    counts = {
        "question_tokens": kinds.count(NodeKind.QUESTION),
        "tables": kinds.count(NodeKind.TABLE),
        "columns": kinds.count(NodeKind.COLUMN),
        "nodes": len(graph.nodes),
        "edges": len(graph.edges),
        "mode": graph.mode.value,
    }
    counts.update(graph.stats)
    return counts


def cmd_stats(args) -> int:
    graph = _load_graph(args.graph)
    c = graph_counts(graph)
    if "nomatch_count" not in c:
        raise GraphError("graph JSON carries no linking statistics")
    a, b = c["unmatched_question"], c["unmatched_schema"]
    text = "\n".join([
        f"mode            {c['mode']}",
        f"nodes           {c['nodes']} ({c['question_tokens']} question, {c['tables']} tables, "
        f"{c['columns']} columns, 1 star)",
        f"edges           {c['edges']} ({c.get('forward_edges', '?')} forward)",
        f"unmatched       A={a} question tokens, B={b} schema items",
        f"no-match edges  A*B = {c['nomatch_count']}",
        f"bridge edges    |Q|+|T|+|C| = {c['bridge_count']}",
    ])
    _emit(args, c, text)
    return 0


def cmd_serialize(args) -> int:
    q, db = _load_pair(args)
    x = serialize(q, db)
    _emit(args, x.to_dict(), x.text)
    return 0


def cmd_path(args) -> int:
    if args.graph:
        graph = _load_graph(args.graph)
    elif args.question and args.schema:
        graph = build_graph(*_load_pair(args), args.mode)
    else:
        raise UsageError("path: give --graph, or --question and --schema")
    src, dst = graph.find(args.src), graph.find(args.dst)
    kwargs = {"skip": frozenset()} if args.all_relations else {}
    path = find_multihop_path(graph, src, dst, args.max_hops, **kwargs)
    if path is None:
        payload = {"found": False, "hops": None, "relations": [], "path": None}
        _emit(args, payload, f"no path from {args.src} to {args.dst} within {args.max_hops} hops")
        return 0
    rendered = path.render(graph)
    payload = {"found": True, "hops": len(path), "relations": path.relations, "path": rendered}
    _emit(args, payload, f"{rendered}\n({len(path)} hops)")
    return 0


def _encoder_config(args) -> EncoderConfig:
    if getattr(args, "config", None):
        cfg = EncoderConfig.load(args.config)
        return replace(cfg, variant=args.variant) if args.variant else cfg
    return EncoderConfig(d_m=args.dm, h=args.heads, layers=args.layers,
                         variant=args.variant or Variant.GRAPHIX)


def cmd_encode(args) -> int:
    saved, manifest = load_checkpoint(args.checkpoint) if args.checkpoint else ({}, {})
    if args.config:
        cfg = EncoderConfig.load(args.config)
    elif "encoder" in manifest:
        cfg = EncoderConfig.from_dict(manifest["encoder"])
    else:
        raise UsageError("encode: --config is required unless the checkpoint records one")
    q, db = _load_pair(args)
    x = serialize(q, db)
    graph = build_graph(q, db, args.mode)
    vocab = None
    if args.checkpoint:
        if "vocab" in manifest:
            vocab = Vocabulary.from_list(manifest["vocab"])
        if args.migrate:
            params = migrate_semantic_params(args.checkpoint, cfg, args.seed)
        else:
            params = init_encoder_params(cfg, ParamStore(args.seed))
            for name in params.names():
                if name not in saved:
                    raise CheckpointMismatch(f"checkpoint lacks parameter {name!r} "
                                             "(use --migrate to initialise graph weights)")
                params[name] = saved[name]
    else:
        params = init_encoder_params(cfg, ParamStore(args.seed))
    if vocab is None:
        vocab = Vocabulary(dict.fromkeys(x.tokens))
    if len(vocab) > cfg.vocab_size:
        raise ShapeError(f"vocabulary of {len(vocab)} exceeds vocab_size={cfg.vocab_size}")
    hidden = encode(x, graph, cfg, params, vocab)
    payload = {"tokens": list(x.tokens), "shape": list(hidden.shape), "hidden": hidden.tolist()}
    out = json.dumps(payload if args.json else hidden.tolist())
    if args.output:
        Path(args.output).write_text(out + "\n")
    else:
        print(out)
    return 0


def cmd_gradcheck(args) -> int:
    enc = _encoder_config(args)
    dec = DecoderConfig(layers=args.decoder_layers, h=enc.h, max_len=8)
    report: dict[str, float] = {}
    err = gradient_check(enc, dec, args.seed, args.eps, report=report)
    ok = err < GRADCHECK_TOLERANCE
    payload = {"max_rel_err": err, "tolerance": GRADCHECK_TOLERANCE, "passed": ok,
               "seed": args.seed, "parameters": len(report),
               "worst": max(report, key=report.get) if report else None}
    sign = "<" if ok else ">="
    _emit(args, payload, f"max_rel_err = {err:.3e} {sign} {GRADCHECK_TOLERANCE:g} "
                         f"over {len(report)} parameters")
    if not ok:
        raise CheckFailed(f"gradient check failed: {err:.3e} >= {GRADCHECK_TOLERANCE:g}")
    return 0


def cmd_train_toy(args) -> int:
    task = ToyTask(args.task, min_len=args.min_len, max_len=args.max_len)
    enc = _encoder_config(args)
    dec = DecoderConfig(layers=args.decoder_layers, h=enc.h, max_len=task.max_target_len + 2)
    enc = replace(enc, vocab_size=max(enc.vocab_size, len(task.vocab)),
                  max_len=max(enc.max_len, 32))
    cfg = TrainConfig(steps=args.steps, lr=args.lr, batch_size=args.batch_size, seed=args.seed,
                      task_seed=args.task_seed)
    model, trace = train(task, enc, dec, cfg)
    csv_text = trace_to_csv(trace)
    if args.output:
        Path(args.output).write_text(csv_text)
    elif not args.json:
        sys.stdout.write(csv_text)
    if args.save:
        save_checkpoint(model.params, args.save,
                        {"encoder": model.enc.to_dict(), "vocab": task.vocab.to_list()})
    result = {"task": args.task, "steps": cfg.steps, "final_loss": trace[-1][1]}
    if args.eval:
        held_out = task.batch(np.random.default_rng(args.task_seed + 10_000), args.eval)
        result["token_accuracy"] = model.token_accuracy(held_out)
    if args.json:
        print(json.dumps(result, sort_keys=True))
    elif "token_accuracy" in result:
        print(f"held-out token accuracy {result['token_accuracy']:.3f}", file=sys.stderr)
    return 0


def compare_example(question_path: str, schemas: dict[str, str]) -> dict:
    obj = json.loads(Path(question_path).read_text())
    db_id = obj.get("db_id") if isinstance(obj, dict) else None
    if db_id is None and len(schemas) == 1:
        db_id = next(iter(schemas))
    if db_id not in schemas:
        raise SchemaError(f"unknown or missing db_id {db_id!r}", question_path)
    q, db = load_question(question_path), load_database(schemas[db_id])
    stats = build_graph(q, db, LinkingMode.BRIDGE).stats
    a, b = stats["unmatched_question"], stats["unmatched_schema"]
    return {"example": Path(question_path).stem, "db_id": db_id, "Q": len(q.tokens),
            "T": len(db.tables), "C": len(db.columns) - 1, "A": a, "B": b,
            "nomatch": stats["nomatch_count"], "bridge": stats["bridge_count"]}


def cmd_compare_modes(args) -> int:
    root = Path(args.dataset)
    schema_files = sorted((root / "schemas").glob("*.json"))
    question_files = sorted((root / "questions").glob("*.json"))
    if not schema_files or not question_files:
        raise SchemaError("expected schemas/*.json and questions/*.json", str(root))
    schemas = {}
    for path in schema_files:
        schemas[load_database(path).name] = str(path)
    jobs = [str(p) for p in question_files]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            rows = list(pool.map(compare_example, jobs, [schemas] * len(jobs)))
    else:
        rows = [compare_example(j, schemas) for j in jobs]
    header = f"{'example':<20} {'db':<16} {'Q':>3} {'T':>3} {'C':>3} {'A':>3} {'B':>3} " \
             f"{'A*B':>6} {'Q+T+C':>6}"
    lines = [header] + [
        f"{r['example']:<20} {r['db_id']:<16} {r['Q']:>3} {r['T']:>3} {r['C']:>3} {r['A']:>3} "
        f"{r['B']:>3} {r['nomatch']:>6} {r['bridge']:>6}" for r in rows]
    total_nm = sum(r["nomatch"] for r in rows)
    total_br = sum(r["bridge"] for r in rows)
    lines.append(f"total: no-match {total_nm}, bridge {total_br}")
    _emit(args, {"examples": rows, "total_nomatch": total_nm, "total_bridge": total_br},
          "\n".join(lines))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")

    p = _Parser(prog="graphix", description="Question-schema graphs and a relation-aware graph attention encoder.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_, description=help_)
        sp.set_defaults(func=func)
        return sp

    def pair(sp, required=True):
        sp.add_argument("--question", required=required, help="question JSON")
        sp.add_argument("--schema", required=required, help="schema JSON")
        sp.add_argument("--mode", choices=[m.value for m in LinkingMode], default="bridge")

    def model(sp):
        sp.add_argument("--config", help="encoder config JSON (overrides --dm/--heads/--layers)")
        sp.add_argument("--dm", type=int, default=32)
        sp.add_argument("--heads", type=int, default=4)
        sp.add_argument("--layers", type=int, default=2)
        sp.add_argument("--variant", choices=[v.value for v in Variant])
        sp.add_argument("--decoder-layers", type=int, default=1)
        sp.add_argument("--seed", type=int, default=0)

    sp = add("build-graph", cmd_build_graph, "build the question-schema graph as JSON")
    pair(sp)
    sp.add_argument("-o", "--output")

    sp = add("stats", cmd_stats, "edge counts of a graph JSON, bridge versus no-match")
    sp.add_argument("graph")

    sp = add("serialize", cmd_serialize, "flat text rendering of question and schema")
    pair(sp)

    sp = add("path", cmd_path, "shortest typed relation path between two nodes")
    pair(sp, required=False)
    sp.add_argument("--graph", help="graph JSON (instead of --question/--schema)")
    sp.add_argument("--from", dest="src", required=True, help="node label or kind:id")
    sp.add_argument("--to", dest="dst", required=True, help="node label or kind:id")
    sp.add_argument("--max-hops", type=int, default=4)
    sp.add_argument("--all-relations", action="store_true",
                    help="also walk bridge, no-match and self-loop edges")

    sp = add("encode", cmd_encode, "dump encoder hidden states as a JSON array")
    pair(sp)
    sp.add_argument("--config", help="encoder config JSON (default: the checkpoint's)")
    sp.add_argument("--checkpoint", help="parameter checkpoint directory")
    sp.add_argument("--migrate", action="store_true",
                    help="take only semantic weights from the checkpoint")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("-o", "--output")

    sp = add("gradcheck", cmd_gradcheck, "finite-difference check of the full model gradient")
    model(sp)
    sp.set_defaults(dm=16)
    sp.add_argument("--eps", type=float, default=1e-5)

    sp = add("train-toy", cmd_train_toy, "train on a toy task and write the loss trace CSV")
    model(sp)
    sp.add_argument("--task", choices=["copy", "schema-echo"], default="copy")
    sp.add_argument("--steps", type=int, default=500)
    sp.add_argument("--lr", type=float, default=0.1)
    sp.add_argument("--batch-size", type=int, default=8)
    sp.add_argument("--task-seed", type=int, default=1)
    sp.add_argument("--min-len", type=int, default=3)
    sp.add_argument("--max-len", type=int, default=6)
    sp.add_argument("--eval", type=int, default=0, metavar="N",
                    help="report token accuracy on N held-out examples")
    sp.add_argument("--save", help="write a checkpoint directory after training")
    sp.add_argument("-o", "--output", help="trace CSV path (default stdout)")

    sp = add("compare-modes", cmd_compare_modes,
             "per-example no-match (A*B) versus bridge edge counts over a dataset directory")
    sp.add_argument("dataset", help="directory with schemas/*.json and questions/*.json")
    sp.add_argument("--workers", type=int, default=1)
    return p


VALIDATION_ERRORS = (SchemaError, GraphError, SerializationError, ShapeError, NonFiniteError,
                     CheckpointMismatch, TrainingDiverged, CheckFailed, ValueError, OSError,
                     KeyError)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    as_json = "--json" in argv
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        return args.func(args)
    except UsageError as exc:
        return _fail(as_json, "usage", str(exc), 1)
    except VALIDATION_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        return _fail(as_json, type(exc).__name__, str(msg), 2)


def _fail(as_json: bool, kind: str, message: str, code: int) -> int:
    if as_json:
        print(json.dumps({"error": kind, "message": message, "exit_code": code}))
    else:
        print(f"error: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
