"""Command line entry point: ``carl {preprocess,train,eval,grid,explain}``.

Exit codes: 0 ok, 1 usage/config error, 2 data error, 3 numeric fault.
The number of workers is read from ``CARL_WORKERS`` and recorded in every
run manifest; computation itself is single-process.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint
from .config import file_digest, load_config
from .corpus import DF_MAX, DOC_LEN, VOCAB_SIZE, load_corpus, preprocess, save_corpus
from .errors import CarlError, ConfigError, DataError
from .evaluate import EvalResult, attach_significance, mse, run_variant, write_results
from .explain import explain, render_ansi, render_html
from .trainer import model_from_checkpoint, train

logger = logging.getLogger("carl")

WORKERS_ENV = "CARL_WORKERS"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _workers():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1")
    return n


def write_manifest(out_dir, command, config, inputs, extra=None):
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "inputs": {str(p): file_digest(p) for p in inputs if p is not None and Path(p).exists()},
        "workers": _workers(),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    if extra:
        manifest.update(extra)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out / "manifest.json"


def _run_config(args):
    overrides = list(args.set or [])
    for key, attr in (("data.corpus", "corpus"), ("out", "out"), ("train.epochs", "epochs")):
        value = getattr(args, attr, None)
        if value is not None:
            overrides.append((key, value))
    if getattr(args, "variant", None):
        overrides.append(("variant", args.variant))
    if getattr(args, "variants", None):
        overrides.append(("variants", [v for v in args.variants.split(",") if v]))
    if getattr(args, "seeds", None):
        overrides.append(("seeds", [int(s) for s in args.seeds.split(",") if s != ""]))
    if getattr(args, "seed", None) is not None:
        overrides.append(("seeds", [args.seed]))
    cfg = load_config(args.config or args.manifest, overrides)
    if cfg.data.corpus is None:
        raise ConfigError("data.corpus: a preprocessed corpus directory is required (--corpus)")
    return cfg


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_preprocess(args):
    if not Path(args.input).exists():
        raise DataError(f"input file not found: {args.input}")
    dataset, stats = preprocess(args.input, args.seed, args.vocab_size, args.doc_len, args.df_max)
    save_corpus(dataset, args.out, stats)
    config = {
        "input": str(args.input), "seed": args.seed, "vocab_size": args.vocab_size,
        "doc_len": args.doc_len, "df_max": args.df_max,
    }
    write_manifest(args.out, "preprocess", config, [args.input])
    print(json.dumps(stats, indent=2, sort_keys=True))
    return 0


def cmd_train(args):
    cfg = _run_config(args)
    dataset = load_corpus(cfg.data.corpus)
    seed = cfg.seeds[0]
    started = time.time()
    model, report = train(dataset, cfg.model_config_for(), cfg.train_config(seed), cfg.out)
    write_manifest(
        cfg.out, "train", cfg.model_dump(), [cfg.data.corpus],
        {"wall_time_s": time.time() - started, "epoch_wall_time_s": report.wall_time},
    )
    print(json.dumps({
        "checkpoint": str(Path(cfg.out) / "model.ckpt"),
        "best_epoch": report.best_epoch,
        "val_mse": report.best_val_mse,
        "test_mse": report.test_mse,
    }, indent=2))
    return 0


def cmd_eval(args):
    if args.checkpoint:
        if not Path(args.checkpoint).exists():
            raise DataError(f"checkpoint not found: {args.checkpoint}")
        if not args.corpus:
            raise ConfigError("--corpus is required with --checkpoint")
        dataset = load_corpus(args.corpus)
        tensors, header = load_checkpoint(args.checkpoint)
        model = model_from_checkpoint(tensors, header)
        value = mse(dataset.split_of(args.split), model, dataset)
        result = EvalResult(args.name or "", args.variant or "checkpoint", [value], [header["seed"]])
        out = args.out or str(Path(args.checkpoint).parent)
        write_results([result], out, "eval")
        print(json.dumps(result.to_dict(), indent=2))
        return 0
    cfg = _run_config(args)
    dataset = load_corpus(cfg.data.corpus)
    started = time.time()
    result = run_variant(
        cfg.variant, dataset, cfg.seeds, cfg.train_config(), cfg.model_config_for("CARL"),
        cfg.data.name, Path(cfg.out) / "runs",
    )
    write_results([result], cfg.out, "eval")
    write_manifest(cfg.out, "eval", cfg.model_dump(), [cfg.data.corpus], {"wall_time_s": time.time() - started})
    print(json.dumps(result.to_dict(), indent=2))
    return 0


def cmd_grid(args):
    cfg = _run_config(args)
    dataset = load_corpus(cfg.data.corpus)
    started = time.time()
    base = cfg.model_config_for("CARL")
    results = [
        run_variant(v, dataset, cfg.seeds, cfg.train_config(), base, cfg.data.name, Path(cfg.out) / "runs")
        for v in cfg.variants
    ]
    attach_significance(results, cfg.reference or cfg.variants[0])
    write_results(results, cfg.out, "grid")
    write_manifest(cfg.out, "grid", cfg.model_dump(), [cfg.data.corpus], {"wall_time_s": time.time() - started})
    print((Path(cfg.out) / "grid.md").read_text(), end="")
    return 0


def cmd_explain(args):
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise DataError(f"checkpoint not found: {ckpt}")
    dataset = load_corpus(args.corpus)
    tensors, header = load_checkpoint(ckpt)
    model = model_from_checkpoint(tensors, header)
    report = explain(args.user, args.item, model, dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"heatmap_{args.user}_{args.item}"
    (out / f"{stem}.json").write_text(report.to_json())
    (out / f"{stem}.html").write_text(render_html(report), encoding="utf-8")
    ansi = render_ansi(report)
    (out / f"{stem}.ansi.txt").write_text(ansi, encoding="utf-8")
    sys.stdout.write(ansi)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_run_options(p, multi_seed=False):
    p.add_argument("--corpus", help="preprocessed corpus directory")
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--manifest", help="replay the configuration stored in a run manifest")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry (repeatable)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--epochs", type=int)
    if multi_seed:
        p.add_argument("--seeds", help="comma-separated seeds")
    else:
        p.add_argument("--seed", type=int)


def build_parser():
    parser = _Parser(prog="carl", description="Context-aware review/rating model: data, training, evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("preprocess", help="build vocabulary, splits and documents from a 5-core dump")
    p.add_argument("--input", required=True, help="JSON-lines (optionally .gz) review file")
    p.add_argument("--out", required=True, help="corpus directory to write")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vocab-size", type=int, default=VOCAB_SIZE)
    p.add_argument("--doc-len", type=int, default=DOC_LEN)
    p.add_argument("--df-max", type=float, default=DF_MAX)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one model and write checkpoint + report")
    _add_run_options(p)
    p.add_argument("--variant")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, or train+evaluate a variant over seeds")
    _add_run_options(p, multi_seed=True)
    p.add_argument("--variant")
    p.add_argument("--checkpoint", help="evaluate this checkpoint instead of training")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--name", help="dataset name for the result table")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="sweep several variants over seeds")
    _add_run_options(p, multi_seed=True)
    p.add_argument("--variants", help="comma-separated variant names")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("explain", help="attention heat map for one user-item pair")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--item", required=True)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_explain)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        sys.stderr.write(str(exc))
        return 1
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        _workers()
        return args.func(args)
    except CarlError as exc:
        sys.stderr.write(f"error: {exc}\n")
        if isinstance(exc, (ConfigError, DataError)):
            sys.stderr.write(f"hint: run 'carl {args.command} --help' for usage\n")
        return exc.exit_code
    except KeyError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
