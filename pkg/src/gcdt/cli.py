"""Command-line entry point: ``gcdt {train,predict,eval,gradcheck,params}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Sequence

import numpy as np

from . import gradcheck
from .config import RunConfig, load_config
from .conll import (ConllFormatError, SchemeError, Sentence, Vocabs, Vocabulary,
                    build_vocabs, read_conll, to_bioes)
from .decoding import predict
from .embeddings import EmbeddingFormatError, attach_external, load_pretrained, read_external, read_words
from .evaluation import evaluate, read_predictions, write_predictions
from .model import ConfigError, build_params, component_counts
from .plotting import plot_history, plot_params
from .training import CheckpointError, aggregate_runs, load_checkpoint, run_seeds, save_checkpoint

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("gcdt")


def _config(args) -> RunConfig:
    cfg = load_config(args.config, args.set or ())
    if getattr(args, "seed", None) is not None:
        cfg.train.seeds = (args.seed,)
    if getattr(args, "beam", None) is not None:
        if args.beam < 1:
            raise ConfigError("beam width must be at least 1")
        cfg.model.beam_size = args.beam
    return cfg


def _read_corpus(path: str, scheme: str, external: str = "", align: str = "first") -> list[Sentence]:
    corpus = to_bioes(read_conll(path), scheme)
    if external:
        with open(external, encoding="utf-8") as fh:
            attach_external(corpus, read_external(fh, align))
    return corpus


def _write_history(history: list[dict], out_dir: str) -> None:
    cols = ["epoch", "step", "loss", "lr", "dev_f1", "dev_accuracy"]
    with open(os.path.join(out_dir, "history.jsonl"), "w", encoding="utf-8") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(os.path.join(out_dir, "history.tsv"), "w", encoding="utf-8") as fh:
        fh.write("\t".join(cols) + "\n")
        for rec in history:
            fh.write("\t".join(repr(rec[c]) for c in cols) + "\n")
    plot_history(history, os.path.join(out_dir, "history.png"))


def cmd_train(args) -> int:
    cfg = _config(args)
    d = cfg.data
    if not d.train or not d.dev:
        raise ConfigError("training needs both 'train' and 'dev' paths")
    out_dir = args.output or cfg.resolved_output_dir()
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.resolved"), "w", encoding="utf-8") as fh:
        fh.write(cfg.dumps())
    train_c = _read_corpus(d.train, d.scheme, d.external_train, d.external_align)
    dev_c = _read_corpus(d.dev, d.scheme, d.external_dev, d.external_align)
    table = None
    known = read_words(d.pretrained) if d.pretrained else None
    vocabs = build_vocabs(train_c, dev_c, known)
    if d.pretrained and cfg.model.use_pretrained:
        with open(d.pretrained, encoding="utf-8") as fh:
            table = load_pretrained(fh, cfg.model.word_dim, vocabs.word,
                                    np.random.default_rng(cfg.train.seeds[0]))
    results = run_seeds(train_c, dev_c, cfg.model, cfg.train, vocabs, table, d.workers)
    scores = []
    summary = ["seed\tbest_epoch\tdev_f1"]
    for seed, res in sorted(results.items()):
        seed_dir = os.path.join(out_dir, f"seed{seed}")
        os.makedirs(seed_dir, exist_ok=True)
        save_checkpoint(os.path.join(seed_dir, "model.ckpt"), res.checkpoint)
        _write_history(res.history, seed_dir)
        gold = [s.labels for s in dev_c]
        pred = predict(res.model, dev_c, cfg.model.beam_size, cfg.train.token_budget)
        report = evaluate(gold, pred)
        with open(os.path.join(seed_dir, "dev_report.txt"), "w", encoding="utf-8") as fh:
            fh.write(report.format())
        scores.append(report.f1)
        summary.append(f"{seed}\t{res.checkpoint.epoch}\t{report.f1!r}")
        print(f"seed {seed}: dev F1 {100 * report.f1:.2f} (epoch {res.checkpoint.epoch})")
    if len(scores) >= 2:
        mean, std = aggregate_runs(scores)
        line = f"F1 {100 * mean:.2f} ± {100 * std:.2f}"
        summary.append(f"# mean\t{mean!r}\n# std\t{std!r}")
        print(line)
    with open(os.path.join(out_dir, "summary.tsv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(summary) + "\n")
    return EXIT_OK


def _read_tagging_input(path: str) -> tuple[list[Sentence], list[list[str]] | None]:
    """Token-only lines, or lines whose last column is a gold label."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.readlines()
    widths = {len(line.split()) for line in lines if line.split()
              and not line.startswith("-DOCSTART-")}
    if widths <= {1}:
        corpus = []
        tokens: list[str] = []
        for line in lines + [""]:
            cols = line.split()
            if cols and not cols[0].startswith("-DOCSTART-"):
                tokens.append(cols[0])
            elif tokens:
                corpus.append(Sentence(tokens, ["O"] * len(tokens)))
                tokens = []
        return corpus, None
    corpus = read_conll(path)
    return corpus, [list(s.labels) for s in corpus]


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if args.config is not None or args.set:
        cfg = load_config(args.config, args.set or ())
        if cfg.model.to_dict() != ckpt.model_config.to_dict():
            raise ConfigError("model configuration does not match the checkpoint digest")
    model = ckpt.model()
    beam = args.beam if args.beam is not None else ckpt.model_config.beam_size
    if beam < 1:
        raise ConfigError("beam width must be at least 1")
    corpus, gold = _read_tagging_input(args.input)
    if args.external:
        with open(args.external, encoding="utf-8") as fh:
            attach_external(corpus, read_external(fh, args.external_align))
    pred = predict(model, corpus, beam) if corpus else []
    gold = gold if gold is not None else [["O"] * len(s) for s in corpus]
    out = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        write_predictions(out, [s.tokens for s in corpus], gold, pred)
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_eval(args) -> int:
    with open(args.file, encoding="utf-8") as fh:
        try:
            _, gold, pred = read_predictions(fh)
        except ValueError as exc:
            raise ConllFormatError(f"{args.file}: {exc}") from None
    sys.stdout.write(evaluate(gold, pred).format())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.config is not None:
        load_config(args.config, args.set or ())
    results = gradcheck.run_suite(args.seeds, args.seed or 0)
    print("component\tmax_rel_error\tseeds\tstatus")
    for r in results:
        print(f"{r.component}\t{r.max_error:.3e}\t{r.seeds}\t{'ok' if r.passed else 'FAIL'}")
    failed = [r.component for r in results if not r.passed]
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _count_vocabs(cfg: RunConfig, n_chars: int, n_labels: int) -> Vocabs:
    if cfg.data.train:
        return build_vocabs(to_bioes(read_conll(cfg.data.train), cfg.data.scheme))
    chars = Vocabulary("char", [f"c{i}" for i in range(max(n_chars - 2, 0))])
    labels = Vocabulary("label", [f"L{i}" for i in range(n_labels)])
    return Vocabs(Vocabulary("word"), chars, labels)


def cmd_params(args) -> int:
    cfg = _config(args)
    vocabs = _count_vocabs(cfg, args.chars, args.labels)
    params = build_params(cfg.model, vocabs, np.random.default_rng(0))
    counts = component_counts(params)
    lines = ["component\tparameters"] + [f"{k}\t{v}" for k, v in counts.items()]
    lines.append(f"total\t{sum(counts.values())}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.output:
        os.makedirs(args.output, exist_ok=True)
        with open(os.path.join(args.output, "params.tsv"), "w", encoding="utf-8") as fh:
            fh.write(text)
        plot_params(counts, os.path.join(args.output, "params.png"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gcdt", description="GCDT sequence labelling.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a configuration key (repeatable)")
        if seed:
            sp.add_argument("--seed", type=int, help="single seed, replaces 'seeds'")

    sp = sub.add_parser("train", help="train one model per seed")
    common(sp)
    sp.add_argument("--beam", type=int, help="beam width for the final dev report")
    sp.add_argument("--output", help="output directory (default: $GCDT_OUTPUT_DIR or ./gcdt-out)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("predict", help="tag a CoNLL file with a checkpoint")
    common(sp, seed=False)
    sp.add_argument("checkpoint")
    sp.add_argument("input")
    sp.add_argument("--output", help="prediction file (default: stdout)")
    sp.add_argument("--beam", type=int, help="beam width (default: the checkpoint's)")
    sp.add_argument("--external", help="external embedding file for the input")
    sp.add_argument("--external-align", default="first", choices=("first", "mean", "max"))
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("eval", help="score a 'token gold predicted' file")
    sp.add_argument("file")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference checks of every component")
    common(sp)
    sp.add_argument("--seeds", type=int, default=20, help="random instances per component")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("params", help="trainable parameter counts per component")
    common(sp, seed=False)
    sp.add_argument("--beam", type=int, help=argparse.SUPPRESS)
    sp.add_argument("--labels", type=int, default=17, help="label count when no train file is set")
    sp.add_argument("--chars", type=int, default=100, help="character count when no train file is set")
    sp.add_argument("--output", help="directory for params.tsv and params.png")
    sp.set_defaults(func=cmd_params)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ConllFormatError, SchemeError, EmbeddingFormatError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
