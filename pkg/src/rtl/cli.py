"""``rtl`` command line: train, eval, synth, analyze.

Exit codes: 0 ok, 2 config error, 3 data error, 4 runtime/numeric error.
Failures print one ``error category=<kind>: <message>`` line to stderr.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint
from .config import Config, ConfigError, config_lines, load_config, rng_for
from .data import (
    TARGET,
    Corpus,
    DataError,
    Vocabulary,
    load_corpus,
    load_embeddings,
    read_tsv,
    synth_embeddings,
    synth_generate,
    write_embeddings,
    write_tsv,
)
from .diagnostics import planted_shift_score, selection_report
from .numerics import NumericError
from .selector import read_selection_log

log = logging.getLogger("rtl")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


def _setup_logging() -> None:
    level = os.environ.get("RTL_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _header(cfg: Config) -> list[str]:
    return config_lines(cfg)


def _banner(cfg: Config | None = None) -> list[str]:
    lines = [f"# rtl {__version__}"]
    if cfg is not None:
        lines += [f"# config: {line}" for line in config_lines(cfg)]
    return lines


def load_run_corpus(cfg: Config) -> tuple[Corpus, object]:
    """Corpus + embedding matrix from the ``data.*`` paths of ``cfg``."""
    d, t = cfg.data, cfg.train
    needed = ["target_train", "target_val", "target_test"]
    if t.mode != "base_only":
        needed.insert(0, "source_train")
    missing = [f"data.{k}" for k in needed if not getattr(d, k)]
    if missing:
        raise ConfigError(f"missing data paths: {', '.join(missing)}")
    max_len = t.effective_max_len
    vocab = Vocabulary()
    splits = {}
    for key in ("source_train", "target_train", "target_val", "target_test"):
        path = getattr(d, key)
        splits[key] = load_corpus(path, max_len, vocab)[0] if path else []
    tags = None
    if d.source_tags:
        tags = Path(d.source_tags).read_text(encoding="utf-8").split()
    corpus = Corpus(vocab, splits["source_train"], splits["target_train"], splits["target_val"],
                    splits["target_test"], tags)
    table, hits = load_embeddings(
        d.embeddings or None, vocab, t.embedding_dim, rng_for(t.seed, "init.embedding"), t.trainable_embeddings
    )
    if d.embeddings:
        log.info("embeddings: %d of %d vocabulary entries found", hits, len(vocab))
    return corpus, table.vectors


def cmd_train(args) -> int:
    from .trainer import train

    overrides = dict(kv.split("=", 1) for kv in args.set)
    if args.mode:
        overrides["mode"] = args.mode
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out:
        overrides["out_dir"] = args.out
    cfg = load_config(args.config, overrides)
    t = cfg.train
    out = Path(t.out_dir or f"runs/{t.mode}-seed{t.seed}")
    corpus, vectors = load_run_corpus(cfg)
    report = train(t, corpus, out, _header(cfg), embeddings=vectors)
    print(f"out_dir={out}")
    print(f"final_test_acc={report.final.test_acc:.6f}")
    print(f"final_test_auc={'undefined' if report.final.test_auc is None else f'{report.final.test_auc:.6f}'}")
    print(f"best_episode={report.best_episode}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.domain != TARGET:
        raise ConfigError("only --domain target can be evaluated")
    model, _, vocab, meta = load_checkpoint(args.checkpoint)
    max_len = meta.get("extra", {}).get("max_len")
    pairs, _ = load_corpus(args.data, max_len, vocab, grow=False)
    acc, auc = model.evaluate(pairs, args.domain)
    print(f"# rtl {__version__}")
    print(f"checkpoint={args.checkpoint}")
    print(f"pairs={len(pairs)}")
    print(f"accuracy={acc:.6f}")
    print(f"auc={'undefined' if auc is None else f'{auc:.6f}'}")
    return EXIT_OK


SYNTH_FILES = {
    "source_train": "source_train.tsv",
    "target_train": "target_train.tsv",
    "target_val": "target_val.tsv",
    "target_test": "target_test.tsv",
    "source_tags": "source_tags.txt",
    "embeddings": "embeddings.txt",
}


def cmd_synth(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["synth.seed"] = str(args.seed)
    cfg = load_config(args.config, overrides)
    try:
        corpus = synth_generate(cfg.synth)
    except DataError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for key in ("source_train", "target_train", "target_val", "target_test"):
        write_tsv(out / SYNTH_FILES[key], getattr(corpus, key), corpus.vocab)
    (out / SYNTH_FILES["source_tags"]).write_text("\n".join(corpus.source_tags) + "\n", encoding="utf-8")
    write_embeddings(out / SYNTH_FILES["embeddings"], corpus.vocab, synth_embeddings(corpus.vocab, cfg.synth))
    banner = _banner(cfg)
    (out / "manifest.txt").write_text(
        "\n".join(banner + [f"{k}={v}" for k, v in SYNTH_FILES.items()]) + "\n", encoding="utf-8"
    )
    # ready-to-run training config pointing at the generated files
    # the embedding width follows the generated table
    cfg = Config(replace(cfg.train, embedding_dim=cfg.synth.embedding_dim), cfg.data, cfg.synth)
    lines = banner + [line for line in config_lines(cfg) if not line.startswith("data.")]
    lines += [f"data.{k} = {(out / v).resolve()}" for k, v in SYNTH_FILES.items()]
    (out / "train.conf").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"out_dir={out}")
    print(f"source_pairs={len(corpus.source_train)}")
    print(f"misaligned={corpus.source_tags.count('misaligned')}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    sel = read_selection_log(args.selection_log)
    source = read_tsv(args.source)
    target = read_tsv(args.target)
    report = selection_report(sel.final_actions, source, target, rng_for(args.seed, "analyze.random_subset"))
    lines = [f"# rtl {__version__}", f"# config: seed = {args.seed}"]
    lines += report.lines()
    if report.dropped_empty:
        lines.append("note: the selector kept every pair; dropped set is empty")
    lines += report.machine_lines()
    if args.tags:
        tags = Path(args.tags).read_text(encoding="utf-8").split()
        mis, ali = planted_shift_score(sel.final_actions, tags)
        lines.append(f"misaligned_drop_rate={'nan' if mis is None else repr(mis)}")
        lines.append(f"aligned_drop_rate={'nan' if ali is None else repr(ali)}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rtl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"rtl {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", required=True)
    t.add_argument("--mode", choices=["base_only", "transfer_only", "rtl_reinforce", "rtl_actor_critic"])
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output directory (overrides out_dir)")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a TSV file")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--domain", default=TARGET)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="write a planted-shift synthetic corpus")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    a = sub.add_parser("analyze", help="Wasserstein report of a selection log")
    a.add_argument("--selection-log", required=True)
    a.add_argument("--source", required=True)
    a.add_argument("--target", required=True)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--tags", help="origin tags of the source pairs (synthetic corpora)")
    a.add_argument("--out", help="also write the report here")
    a.set_defaults(func=cmd_analyze)
    return p


def _fail(category: str, code: int, exc: BaseException) -> int:
    msg = str(exc).replace("\n", " ")
    print(f"error category={category}: {msg}", file=sys.stderr)
    return code


def run(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "set", None):
            bad = [kv for kv in args.set if "=" not in kv]
            if bad:
                raise ConfigError(f"--set expects KEY=VALUE, got {bad[0]!r}")
        return args.func(args)
    except ConfigError as exc:
        return _fail("config", EXIT_CONFIG, exc)
    except (DataError, CheckpointError, OSError) as exc:
        return _fail("data", EXIT_DATA, exc)
    except (NumericError, ArithmeticError, ValueError) as exc:
        return _fail("runtime", EXIT_RUNTIME, exc)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
