"""``ordernet`` command line: data generation, training, evaluation, checks.

Every subcommand accepts ``--config FILE`` with ``key = value`` lines using
the long flag names (dashes or underscores); flags given on the command
line win. The resolved configuration is printed to stderr before work
starts.

Exit codes: 0 success, 1 contract or property violation, 2 usage error,
3 I/O error. ``ORDERNET_THREADS`` sets the worker count for gen-tsp and
eval-tsp.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import checks, tsp
from .checkpoint import CheckpointError, atomic_write_bytes, load_checkpoint
from .data import DatasetError, read_jsonl, write_jsonl
from .evaluation import CSV_HEADER, evaluate_tsp
from .inference import beam_search
from .model import ConfigError, InvalidPrefixError, ModelConfig
from .trainer import TrainConfig, TrainingDiverged, train
from .wordorder import EmbeddingFormatError, PrepStats, exact_order_accuracy, load_embeddings, prepare_corpus

log = logging.getLogger("ordernet")

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


def threads_from_env() -> int:
    raw = os.environ.get("ORDERNET_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise UsageError(f"ORDERNET_THREADS must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise UsageError(f"ORDERNET_THREADS must be >= 1, got {value}")
    return value


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


# -- subcommands -----------------------------------------------------------


def cmd_gen_tsp(args) -> int:
    threads = threads_from_env()
    began = time.perf_counter()
    total = (args.n_max - args.n_min + 1) * args.count_per_n
    step = max(1, total // 10)

    def progress(done, total):
        if done % step == 0 or done == total:
            rate = done / max(time.perf_counter() - began, 1e-9)
            log.info("gen-tsp: %d/%d instances (%.0f/s)", done, total, rate)

    try:
        examples = list(tsp.generate_dataset(args.n_min, args.n_max, args.count_per_n, args.seed, args.solver,
                                             threads=threads, progress=progress))
    except tsp.SolverLimitError as exc:
        raise UsageError(str(exc)) from None
    count = write_jsonl(args.out, examples)
    print(json.dumps({"records": count, "out": str(args.out), "seconds": round(time.perf_counter() - began, 3)}))
    return EXIT_OK


def cmd_prep_text(args) -> int:
    table = load_embeddings(args.embeddings, args.dim, strict=args.strict)
    stats = PrepStats()
    examples = [ex.to_ordering() for ex in prepare_corpus(args.text, table, args.seed, stats)]
    write_jsonl(args.out, examples)
    print(json.dumps({"lines": stats.lines, "kept": stats.kept, "skipped": dict(sorted(stats.skipped.items())),
                      "embeddings": len(table), "malformed_embeddings": table.malformed,
                      "duplicate_embeddings": table.duplicates, "out": str(args.out)}))
    return EXIT_OK


_MODEL_FLAGS = ("input_dim", "encoder_blocks", "encoder_layer1_depth", "encoder_layer2_depth", "encoder_pool",
                "decoder_blocks", "decoder_block_depth", "precision")


def _model_config(args) -> ModelConfig:
    base = ModelConfig.word_order() if args.preset == "word-order" else ModelConfig.tsp()
    overrides = {k: getattr(args, k) for k in _MODEL_FLAGS if getattr(args, k) is not None}
    return ModelConfig.from_dict({**base.to_dict(), **overrides})


def cmd_train(args) -> int:
    examples = read_jsonl(args.data)
    held_out = read_jsonl(args.eval_data) if args.eval_data else None
    model_config = _model_config(args)
    if args.input_dim is None and examples:
        model_config = ModelConfig.from_dict({**model_config.to_dict(), "input_dim": int(examples[0].x.shape[1])})
    config = TrainConfig(model=model_config, learning_rate=args.lr, beta1=args.beta1, beta2=args.beta2,
                         epsilon=args.epsilon, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed,
                         clip_norm=args.clip_norm, checkpoint=args.out, metrics_csv=args.metrics,
                         eval_every=args.eval_every)
    log.info("model config: %s", json.dumps(model_config.to_dict(), sort_keys=True))
    try:
        report, _ = train(config, examples, held_out)
    except DatasetError as exc:
        raise ConfigError(str(exc)) from None
    print(json.dumps({"epochs": len(report.epoch_loss), "final_loss": report.epoch_loss[-1],
                      "final_tf_accuracy": report.epoch_accuracy[-1], "seconds": round(report.seconds, 3),
                      "checkpoint": args.out, "sha256": report.checkpoint_digest}))
    return EXIT_OK


def cmd_eval_tsp(args) -> int:
    model = load_checkpoint(args.model)
    if model.input_dim != 2:
        raise ConfigError(f"TSP cities are 2-dimensional but the checkpoint expects {model.input_dim}")
    sizes = [int(v) for v in str(args.n).split(",")]
    threads = threads_from_env()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda n: evaluate_tsp(model, n, args.count, args.beam, args.seed, args.baselines), sizes))
    else:
        rows = [evaluate_tsp(model, n, args.count, args.beam, args.seed, args.baselines) for n in sizes]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(row.csv_fields())
    text = buf.getvalue()
    if args.csv:
        atomic_write_bytes(args.csv, text.encode())
    sys.stdout.write(text)
    return EXIT_OK if all(r.valid_fraction == 1.0 for r in rows) else EXIT_VIOLATION


def cmd_eval_order(args) -> int:
    model = load_checkpoint(args.model)
    examples = read_jsonl(args.data)
    missing = [k for k, ex in enumerate(examples) if "tokens" not in ex.meta]
    if missing:
        raise DatasetError(f"{args.data}: record {missing[0] + 1} has no meta.tokens; produce it with prep-text")
    accuracy = exact_order_accuracy(model, examples, beam=args.beam)
    print(json.dumps({"examples": len(examples), "beam": args.beam, "exact_order_accuracy": accuracy}))
    return EXIT_OK


def _load_points(args) -> tsp.TspInstance:
    if args.points:
        return tsp.TspInstance(np.asarray(json.loads(Path(args.points).read_text(encoding="utf-8")), dtype=np.float64))
    if args.n is None:
        raise UsageError("solve needs --points FILE or --n N (with --seed)")
    return tsp.generate_instance(args.n, args.seed)


def cmd_solve(args) -> int:
    inst = _load_points(args)
    if args.solver == "model":
        if not args.model:
            raise UsageError("--solver model needs --model CHECKPOINT")
        order = beam_search(load_checkpoint(args.model), inst.points, beam=args.beam)
        tour = tsp.Tour(order, tsp.tour_length(inst, order), {"solver": "model", "beam": args.beam})
    else:
        try:
            tour = tsp.solve(inst, args.solver)
        except tsp.SolverLimitError as exc:
            raise UsageError(str(exc)) from None
    order = tsp.canonicalize_tour(inst, tour.order) if args.canonical else tour.order
    print(json.dumps({"n": inst.n, "solver": args.solver, "order": [int(v) for v in order],
                      "length": tour.length, "info": tour.info}))
    return EXIT_OK


def cmd_check(args) -> int:
    kinds = list(checks.SUITES) if args.kind == "all" else [args.kind]
    ok = True
    for kind in kinds:
        result = checks.SUITES[kind](seed=args.seed)
        print(result.summary())
        ok = ok and result.passed
    return EXIT_OK if ok else EXIT_VIOLATION


# -- parser ----------------------------------------------------------------


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ordernet", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="key = value file; command-line flags override it")
        p.set_defaults(func=func)
        return p

    p = command("gen-tsp", cmd_gen_tsp, "generate a labelled TSP dataset (JSONL)")
    p.add_argument("--n-min", type=int, default=5)
    p.add_argument("--n-max", type=int, default=20)
    p.add_argument("--count-per-n", type=_positive, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--solver", choices=["held-karp", "brute", "christofides"], default="held-karp")
    p.add_argument("--out", required=True)

    p = command("prep-text", cmd_prep_text, "turn a text corpus into shuffled five-word examples")
    p.add_argument("--text", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--dim", type=_positive, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strict", action="store_true", help="fail on malformed embedding lines")
    p.add_argument("--out", required=True)

    p = command("train", cmd_train, "train a model on a JSONL dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--metrics", help="per-epoch CSV")
    p.add_argument("--preset", choices=["tsp", "word-order"], default="tsp")
    p.add_argument("--input-dim", type=_positive)
    p.add_argument("--encoder-blocks", type=int)
    p.add_argument("--encoder-layer1-depth", type=_positive)
    p.add_argument("--encoder-layer2-depth", type=_positive)
    p.add_argument("--encoder-pool", choices=["max", "avg"])
    p.add_argument("--decoder-blocks", type=_positive)
    p.add_argument("--decoder-block-depth", type=_positive)
    p.add_argument("--precision", choices=["float32", "float64"])
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--beta1", type=float, default=0.9)
    p.add_argument("--beta2", type=float, default=0.999)
    p.add_argument("--epsilon", type=float, default=1e-8)
    p.add_argument("--batch-size", type=_positive, default=128)
    p.add_argument("--epochs", type=_positive, default=10)
    p.add_argument("--clip-norm", type=float)
    p.add_argument("--eval-every", type=_positive, default=1)
    p.add_argument("--seed", type=int, default=0)

    p = command("eval-tsp", cmd_eval_tsp, "average tour lengths of a model against baselines")
    p.add_argument("--model", required=True)
    p.add_argument("--n", default="10", help="set size, or comma-separated sizes")
    p.add_argument("--count", type=_positive, default=100)
    p.add_argument("--beam", type=_positive, default=5)
    p.add_argument("--baselines", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--seed", type=int, default=12345)
    p.add_argument("--csv")

    p = command("eval-order", cmd_eval_order, "exact-order accuracy on prepared word-order data")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--beam", type=_positive, default=1)

    p = command("solve", cmd_solve, "solve one TSP instance")
    p.add_argument("--solver", choices=sorted(tsp.SOLVERS) + ["model"], default="held-karp")
    p.add_argument("--points", help="JSON file holding [[x, y], ...]")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", help="checkpoint for --solver model")
    p.add_argument("--beam", type=_positive, default=5)
    p.add_argument("--canonical", action="store_true", help="print the canonical rotation/direction")

    p = command("check", cmd_check, "run a property suite")
    p.add_argument("--kind", choices=list(checks.SUITES) + ["all"], required=True)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _config_path(argv: list[str]) -> str | None:
    for k, tok in enumerate(argv):
        if tok == "--config" and k + 1 < len(argv):
            return argv[k + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse ``argv`` after loading defaults from ``--config`` (if given)."""
    path = _config_path(argv)
    commands = parser._subparsers._group_actions[0].choices
    command = next((tok for tok in argv if tok in commands), None)
    if path is None or command is None:
        return parser.parse_args(argv)
    values = read_config_file(path)
    subparser = commands[command]
    known = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in values.items():
        action = known.get(key)
        if action is None or key in ("config", "help"):
            raise UsageError(f"{path}: unknown key {key!r} for {command}")
        if isinstance(action, (argparse._StoreTrueAction, argparse.BooleanOptionalAction)):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            continue
        try:
            value = action.type(raw) if action.type else raw
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"{path}: bad value for {key}: {exc}") from None
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"{path}: {key} must be one of {list(action.choices)}, got {value!r}")
        defaults[key] = value
    subparser.set_defaults(**defaults)
    for action in subparser._actions:
        if action.dest in defaults:
            action.required = False  # satisfied by the file
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        try:
            args = _apply_config_file(parser, argv)
        except SystemExit as exc:
            return EXIT_OK if exc.code == 0 else EXIT_USAGE
        logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", force=True)
        resolved = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "log_level")}
        print("resolved config: " + json.dumps(resolved, sort_keys=True), file=sys.stderr)
        if "seed" in resolved:
            print(f"seed: {resolved['seed']}", file=sys.stderr)
        return args.func(args)
    except UsageError as exc:
        print(f"ordernet: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"ordernet: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, CheckpointError, EmbeddingFormatError) as exc:
        print(f"ordernet: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DatasetError, InvalidPrefixError, tsp.InvalidTourError, TrainingDiverged, ValueError) as exc:
        print(f"ordernet: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
