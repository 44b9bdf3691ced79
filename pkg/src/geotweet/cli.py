"""Command-line interface: ``geotweet <command> [options]``.

Commands::

    init       write a starter config file
    label      parse raw tweets, de-duplicate users, attach countries
    split      draw the train/dev/test runs of a labeled corpus
    train      train one combination on one run and save model + vocabulary
    evaluate   score a saved model on a labeled corpus
    sweep      evaluate every selected combination on every run
    baseline   gazetteer baseline on every run
    classify   classify tweet lines from stdin, TSV to stdout
    report     re-summarize a sweep directory; distribution statistics

Exit codes: 0 success, 1 error (or failed sweep jobs), 2 per-line
classification errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import logging.handlers
import sys
from pathlib import Path

from geotweet import __version__
from geotweet.config import ExperimentConfig, create_default, load_config
from geotweet.corpus import (
    DropLog,
    country_distribution,
    deduplicate_users,
    distribution_correlation,
    label_tweets,
    make_splits,
    read_labeled,
    read_tweets,
    save_splits,
    topk_coverage,
    write_distribution_csv,
    write_drop_log,
    write_labeled,
)
from geotweet.errors import ConfigError, GeotweetError
from geotweet.experiment import Experiment, load_sweep, relabel_other, write_summary
from geotweet.features import Vocabulary, combination_name, feature_availability, featurize_matrix
from geotweet.gazetteer import LookupMode
from geotweet.geo import load_country_table, reverse_geocode
from geotweet.manifest import FORMAT_VERSION, write_json
from geotweet.metrics import OTHER_LABEL, confusion, evaluate, per_country_prf, write_report_json
from geotweet.model import load_model, predict_matrix, save_model
from geotweet.stream import StreamStats, classify_stream

logger = logging.getLogger("geotweet")

_LOG_FORMAT = "%(asctime)s [%(process)d] %(levelname)s %(name)s: %(message)s"
_file_handler: logging.Handler | None = None


def setup_logging(verbosity: int) -> None:
    """Stderr logging: WARNING by default, INFO with -v, DEBUG with -vv."""
    level = {0: logging.WARNING, 1: logging.INFO}.get(max(verbosity, 0), logging.DEBUG)
    root = logging.getLogger()
    for h in list(root.handlers):
        if getattr(h, "_geotweet", False):
            root.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(_LOG_FORMAT, datefmt="%H:%M:%S"))
    handler.setLevel(level)
    handler._geotweet = True  # type: ignore[attr-defined]
    root.addHandler(handler)
    root.setLevel(level)


def attach_file_log(out: Path) -> None:
    """Attach a rotating file handler to <out>/geotweet.log (idempotent)."""
    global _file_handler
    if _file_handler is not None:
        return
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "geotweet.log"
    fh = logging.handlers.RotatingFileHandler(
        log_path,
        maxBytes=2_000_000,
        backupCount=3,
        encoding="utf-8",
    )
    fh.setLevel(logging.DEBUG)
    fh.setFormatter(logging.Formatter(_LOG_FORMAT))
    root = logging.getLogger()
    root.addHandler(fh)
    # stderr keeps its own handler level
    root.setLevel(logging.DEBUG)
    _file_handler = fh
    logger.info("Log attached to %s", log_path)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return cfg.with_overrides(seed=args.seed, threads=args.threads, out=args.out)


def cmd_init(args: argparse.Namespace) -> int:
    path = create_default(args.path)
    print(path)
    return 0


def cmd_label(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if args.centroids:
        cfg.centroids = args.centroids
    if args.boundaries:
        cfg.boundaries = args.boundaries
    cfg.require("centroids", "boundaries")
    table = load_country_table(cfg.centroids, cfg.boundaries)

    drops: DropLog = []
    tweets = [t for path in args.input for t in read_tweets(path, drops)]
    excluded: set[str] = set()
    for path in args.exclude_users or ():
        excluded |= {t.user_id for t in read_tweets(path)}
    if not args.no_dedup:
        tweets = deduplicate_users(tweets, cfg.split.seed, excluded)
    elif excluded:
        tweets = [t for t in tweets if t.user_id not in excluded]

    labeled, dropped = label_tweets(
        tweets,
        lambda p: reverse_geocode(p, table, cfg.fallback_km),
        on_missing=args.on_missing,
        drops=drops,
    )
    write_labeled(args.output, labeled)
    if args.drops:
        write_drop_log(args.drops, drops)
    if args.distribution:
        write_distribution_csv(args.distribution, country_distribution(labeled))
    print(
        json.dumps(
            {
                "labeled": len(labeled),
                "dropped": dropped,
                "unparsed": len(drops) - dropped,
                "countries": len(country_distribution(labeled)),
                "feature_availability": feature_availability(labeled),
            },
            indent=2,
        )
    )
    return 0


def cmd_split(args: argparse.Namespace) -> int:
    cfg = _config(args)
    corpus_path = args.corpus or cfg.train_corpus
    if corpus_path is None:
        raise ConfigError("no corpus to split", "Pass --corpus or set train_corpus.")
    n = len(read_labeled(corpus_path))
    splits = make_splits(n, cfg.split)
    output = args.output or cfg.out / "splits.json"
    save_splits(output, n, cfg.split, splits)
    print(output)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _config(args)
    experiment = Experiment.from_config(cfg)
    trained = experiment.train_model(
        args.combination, args.run, l2_grid=[args.l2] if args.l2 is not None else None
    )
    out = cfg.out / "models" / f"{combination_name(trained.vocab.kinds)}-run{args.run}"
    trained.vocab.save(out / "vocab.tsv")
    save_model(out / "model.h5", trained.model)
    write_report_json(out / "dev.json", trained.dev, config=cfg.to_dict())
    print(out)
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _config(args)
    corpus_path = args.corpus or cfg.test_corpus
    if corpus_path is None:
        raise ConfigError("no corpus to evaluate on", "Pass --corpus or set test_corpus.")
    cfg.require("centroids")
    table = load_country_table(cfg.centroids, cfg.boundaries)
    vocab = Vocabulary.load(args.vocab)
    model = load_model(args.model, vocab)
    corpus = read_labeled(corpus_path)
    scored = corpus
    excludes: tuple[str, ...] = ()
    if cfg.top_k is not None:
        scored = relabel_other(corpus, set(model.classes))
        excludes = (OTHER_LABEL,)

    pred, _ = predict_matrix(model, featurize_matrix(scored, vocab))
    truth = [t.country for t in scored]
    report = evaluate(
        pred,
        truth,
        table,
        geo_truth=[t.country for t in corpus],
        exclude=excludes,
        macro_include_other=cfg.macro_include_other,
    )
    out = args.output or cfg.out / "evaluate"
    write_report_json(
        out / "report.json", report, config=cfg.to_dict(), macro_excludes=excludes
    )
    per_country_prf(pred, truth).write_csv(out / "per_country.csv")
    confusion(pred, truth).write_csv(out / "confusion.csv")
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _config(args)
    attach_file_log(cfg.out)
    result = Experiment.from_config(cfg).run_sweep(cfg.out)
    for metric in ("micro", "macro", "mse_km2"):
        head = result.rankings.get(metric) or []
        if head:
            print(f"best by {metric}: {head[0]['combination']} ({head[0]['value']:.4f})")
    if not result.ok:
        failed = len(result.failures)
        print(f"{failed} job(s) failed; see {cfg.out}/rankings.json", file=sys.stderr)
        return 1
    return 0


def cmd_baseline(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if args.gazetteer:
        cfg.gazetteer = args.gazetteer
    experiment = Experiment.from_config(cfg)
    modes = list(LookupMode) if args.mode == "both" else [LookupMode(args.mode)]
    for mode in modes:
        report = experiment.run_baseline(mode)
        write_report_json(
            cfg.out / f"baseline-{mode.value}.json", report, config=cfg.to_dict()
        )
        print(f"{mode.value}: {json.dumps(report.to_dict())}")
    return 0


def cmd_classify(args: argparse.Namespace) -> int:
    vocab = Vocabulary.load(args.vocab)
    model = load_model(args.model, vocab)
    stats = StreamStats()
    # Raw bytes: a line that is not UTF-8 becomes an ERROR line, not a crash.
    source = getattr(sys.stdin, "buffer", sys.stdin)
    for line in classify_stream(
        model,
        vocab,
        source,
        batch_size=args.batch_size,
        threads=args.threads or 1,
        stats=stats,
    ):
        sys.stdout.write(line + "\n")
    sys.stdout.flush()
    logger.info("Classified %d line(s), %d error(s)", stats.classified, stats.errors)
    return 2 if stats.errors else 0


def cmd_report(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if args.correlate:
        a, b = (country_distribution(read_labeled(p)) for p in args.correlate)
        stats = {
            "format_version": FORMAT_VERSION,
            "pearson_r": distribution_correlation(a, b),
            "countries": [len(a), len(b)],
            f"top{args.top_k}_coverage": [topk_coverage(d, args.top_k) for d in (a, b)],
        }
        if args.output:
            write_json(args.output, stats)
        print(json.dumps(stats, indent=2))
        return 0

    sweep_dir = args.sweep or cfg.out
    result = load_sweep(sweep_dir)
    if not result.records:
        raise ConfigError(
            f"no run records under {sweep_dir}/results", "Run `geotweet sweep` first."
        )
    write_summary(sweep_dir, result)
    for metric, ranking in result.rankings.items():
        print(f"# {metric}")
        for entry in ranking[: args.top]:
            print(f"{entry['combination']}\t{entry['value']:.6f}")
    print(f"# oracle union (mean over runs)\t{result.oracle_union.get('mean', float('nan')):.6f}")
    return 0 if result.ok else 1


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config (.toml, .json, .yaml)")
    common.add_argument("--seed", type=int, help="override split and training seeds")
    common.add_argument("--threads", type=int, help="worker threads")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")

    parser = argparse.ArgumentParser(
        prog="geotweet", description="Country-level tweet geolocation."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", parents=[common], help="write a starter config")
    p.add_argument("path", type=Path, nargs="?", default=Path("geotweet.yaml"))
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("label", parents=[common], help="label raw tweets with countries")
    p.add_argument("--input", type=Path, nargs="+", required=True, help="raw JSON-lines files")
    p.add_argument("--output", type=Path, required=True, help="labeled JSON-lines output")
    p.add_argument("--drops", type=Path, help="write line_no<TAB>reason for dropped lines")
    p.add_argument("--exclude-users", type=Path, nargs="+", help="corpora whose users to remove")
    p.add_argument("--no-dedup", action="store_true", help="keep every tweet of every user")
    p.add_argument("--on-missing", choices=("drop", "raise"), default="drop")
    p.add_argument("--distribution", type=Path, help="write country,count,share CSV")
    p.add_argument("--centroids", type=Path)
    p.add_argument("--boundaries", type=Path)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("split", parents=[common], help="draw train/dev/test runs")
    p.add_argument("--corpus", type=Path)
    p.add_argument("--output", type=Path)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", parents=[common], help="train one combination on one run")
    p.add_argument("--combination", required=True, help='e.g. "content-tz"')
    p.add_argument("--run", type=int, default=0)
    p.add_argument("--l2", type=float, help="fixed L2 strength instead of the dev-selected grid")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score a saved model")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--vocab", type=Path, required=True)
    p.add_argument("--corpus", type=Path, help="labeled corpus (default: test_corpus)")
    p.add_argument("--output", type=Path, help="report directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", parents=[common], help="run the combination sweep")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("baseline", parents=[common], help="gazetteer baseline")
    p.add_argument("--mode", choices=("population", "relevance", "both"), default="both")
    p.add_argument("--gazetteer", type=Path, help="TSV gazetteer (default: from the config)")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("classify", parents=[common], help="classify tweet lines from stdin")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--vocab", type=Path, required=True)
    p.add_argument("--batch-size", type=int, default=512)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("report", parents=[common], help="summaries and distribution statistics")
    p.add_argument("--sweep", type=Path, help="sweep directory (default: --out)")
    p.add_argument("--top", type=int, default=10, help="ranking rows to print per metric")
    p.add_argument("--correlate", type=Path, nargs=2, metavar=("A", "B"))
    p.add_argument("--top-k", type=int, default=25, help="coverage of the k largest countries")
    p.add_argument("--output", type=Path, help="write --correlate statistics as JSON")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        return args.func(args)
    except GeotweetError as exc:
        print(f"geotweet: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"geotweet: {exc}", file=sys.stderr)
        return 1
