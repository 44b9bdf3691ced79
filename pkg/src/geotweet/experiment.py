"""Experiment pipeline: folds, top-k restriction, single runs, sweeps, baselines.

A sweep evaluates every selected feature combination on every run of the
split. Jobs are independent and may run on a thread pool; results are
written in job order, so two sweeps with equal configs produce
byte-identical files.
"""

from __future__ import annotations

import logging
from collections import Counter
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from geotweet.checksum import sha256_file, sha256_json
from geotweet.config import ExperimentConfig
from geotweet.corpus import DatasetSplit, LabeledTweet, make_splits, read_labeled
from geotweet.errors import GeotweetError, MissingGazetteer, RunFailed, TopKTooLarge
from geotweet.features import (
    FeatureCombination,
    Vocabulary,
    build_vocabulary,
    combination_name,
    enumerate_combinations,
    featurize_matrix,
    parse_combination,
)
from geotweet.gazetteer import Gazetteer, LookupMode, gazetteer_lookup, load_gazetteer
from geotweet.geo import CountryTable, load_country_table
from geotweet.manifest import (
    FORMAT_VERSION,
    best_per_country_path,
    confusion_path,
    iter_records,
    manifest_path,
    oracle_union_path,
    rankings_path,
    record_path,
    summary_path,
    write_csv,
    write_json,
)
from geotweet.metrics import (
    OTHER_LABEL,
    ConfusionMatrix,
    EvalReport,
    PerCountryReport,
    aggregate,
    align,
    confusion,
    correct_mask,
    evaluate,
    mean_report,
    oracle_union_from_masks,
    pack_mask,
    per_country_prf,
    unpack_mask,
)
from geotweet.model import MaxEntModel, predict_matrix, train_matrix

logger = logging.getLogger(__name__)

_CANONICAL_RANK = {combination_name(c): i for i, c in enumerate(enumerate_combinations())}


# ---------------------------------------------------------------------------
# Top-k restriction
# ---------------------------------------------------------------------------


def top_countries(train: Sequence[LabeledTweet], k: int) -> list[str]:
    """The *k* most frequent training countries, ties by code."""
    counts = Counter(t.country for t in train)
    if k > len(counts):
        raise TopKTooLarge(k, len(counts))
    return sorted(counts, key=lambda c: (-counts[c], c))[:k]


def relabel_other(items: Sequence[LabeledTweet], keep: set[str]) -> list[LabeledTweet]:
    """Replace every country outside *keep* with ``OTHER``."""
    return [t if t.country in keep else LabeledTweet(t.tweet, OTHER_LABEL) for t in items]


def restrict_topk(
    train: Sequence[LabeledTweet], test: Sequence[LabeledTweet], k: int
) -> tuple[list[LabeledTweet], list[LabeledTweet]]:
    """Keep the top-*k* countries in training; relabel the rest of *test* as OTHER.

    The test set keeps its size. OTHER never appears in the returned training
    set, so a model trained on it never predicts OTHER.

    Raises:
        TopKTooLarge: If *k* exceeds the number of training countries.
    """
    keep = set(top_countries(train, k))
    return [t for t in train if t.country in keep], relabel_other(test, keep)


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass
class TrainedModel:
    """A model chosen on dev, with the vocabulary it was trained against."""

    model: MaxEntModel
    vocab: Vocabulary
    l2_lambda: float
    dev: EvalReport
    grid: list[dict[str, Any]]
    keep: set[str] | None = None


@dataclass
class RunResult:
    """Outcome of one (combination, run) job."""

    combination: str
    run: int
    l2_lambda: float
    grid: list[dict[str, Any]]
    dev: EvalReport
    test: EvalReport
    per_country: dict[str, dict[str, float]]
    confusion: ConfusionMatrix
    test_correct: np.ndarray
    dims: int
    classes: list[str]
    test_era: EvalReport | None = None
    per_country_era: dict[str, dict[str, float]] | None = None

    def to_record(self) -> dict[str, Any]:
        record: dict[str, Any] = {
            "format_version": FORMAT_VERSION,
            "combination": self.combination,
            "run": self.run,
            "status": "ok",
            "l2_lambda": self.l2_lambda,
            "grid": self.grid,
            "dims": self.dims,
            "classes": self.classes,
            "dev": self.dev.to_dict(),
            "test": self.test.to_dict(),
            "per_country": self.per_country,
            "confusion": self.confusion.to_dict(),
            "test_correct": {"n": len(self.test_correct), "bits": pack_mask(self.test_correct)},
        }
        if self.test_era is not None:
            record["test_era"] = self.test_era.to_dict()
        if self.per_country_era is not None:
            record["per_country_era"] = self.per_country_era
        return record


def _prf_dict(prf: PerCountryReport) -> dict[str, dict[str, float]]:
    return {
        c: {"precision": s.precision, "recall": s.recall, "f1": s.f1, "support": s.support}
        for c, s in sorted(prf.items())
    }


def failure_record(combination: str, run: int, exc: BaseException) -> dict[str, Any]:
    return {
        "format_version": FORMAT_VERSION,
        "combination": combination,
        "run": run,
        "status": "failed",
        "error_type": type(exc).__name__,
        "error": str(exc),
    }


@dataclass
class SweepResult:
    records: list[dict[str, Any]]
    summary: list[dict[str, Any]] = field(default_factory=list)
    rankings: dict[str, list[dict[str, Any]]] = field(default_factory=dict)
    best_per_country: list[dict[str, Any]] = field(default_factory=list)
    oracle_union: dict[str, Any] = field(default_factory=dict)
    confusion: ConfusionMatrix | None = None

    @property
    def failures(self) -> list[dict[str, Any]]:
        return [r for r in self.records if r.get("status") != "ok"]

    @property
    def ok(self) -> bool:
        return not self.failures


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------


def _selection_key(metric: str) -> Callable[[EvalReport], float]:
    """Key whose maximum is the best report under *metric*."""
    if metric == "micro":
        return lambda r: r.micro_accuracy
    if metric == "macro":
        return lambda r: r.macro_accuracy
    return lambda r: -r.mse_km2


def _majority(train: Sequence[LabeledTweet]) -> str:
    counts = Counter(t.country for t in train)
    return min(counts, key=lambda c: (-counts[c], c))


# ---------------------------------------------------------------------------
# Experiment
# ---------------------------------------------------------------------------


class Experiment:
    """A labeled corpus with its splits, geo data and experiment settings."""

    def __init__(
        self,
        config: ExperimentConfig,
        table: CountryTable,
        corpus: Sequence[LabeledTweet],
        splits: Sequence[DatasetSplit] | None = None,
        *,
        test_era: Sequence[LabeledTweet] | None = None,
        gazetteer: Gazetteer | None = None,
    ):
        config.validate()
        self.config = config
        self.table = table
        self.corpus = list(corpus)
        if splits is None:
            splits = make_splits(len(self.corpus), config.split)
        self.splits = list(splits)
        self.test_era = list(test_era) if test_era is not None else None
        self.gazetteer = gazetteer
        for item in (*self.corpus, *(self.test_era or ())):
            table.get(item.country)

    @classmethod
    def from_config(cls, config: ExperimentConfig) -> Experiment:
        """Load corpora, country table and (optional) gazetteer named in *config*."""
        config.require("train_corpus", "centroids")
        table = load_country_table(config.centroids, config.boundaries)
        corpus = read_labeled(config.train_corpus)
        test_era = read_labeled(config.test_corpus) if config.test_corpus else None
        gazetteer = load_gazetteer(config.gazetteer) if config.gazetteer else None
        logger.info(
            "Experiment: %d labeled tweets, %d runs, %d combinations%s",
            len(corpus),
            config.split.runs,
            len(config.combinations),
            f", {len(test_era)} later-era tweets" if test_era is not None else "",
        )
        return cls(config, table, corpus, test_era=test_era, gazetteer=gazetteer)

    def fold(self, run: int) -> tuple[list[LabeledTweet], list[LabeledTweet], list[LabeledTweet]]:
        split = self.splits[run]
        pick = self.corpus.__getitem__
        return (
            [pick(i) for i in split.train],
            [pick(i) for i in split.dev],
            [pick(i) for i in split.test],
        )

    # -- single run --------------------------------------------------------

    def _score(
        self,
        model: MaxEntModel,
        vocab: Vocabulary,
        scored: Sequence[LabeledTweet],
        real: Sequence[LabeledTweet],
    ) -> tuple[list[str], EvalReport]:
        """Predict *scored*; MSE uses the real countries of *real* (same tweets)."""
        X = featurize_matrix(scored, vocab)
        pred, _ = predict_matrix(model, X)
        restricted = self.config.top_k is not None
        report = evaluate(
            pred,
            [t.country for t in scored],
            self.table,
            geo_truth=[t.country for t in real],
            exclude=(OTHER_LABEL,) if restricted else (),
            macro_include_other=restricted and self.config.macro_include_other,
        )
        return pred, report

    def run_single(self, combination: FeatureCombination | str, run: int) -> RunResult:
        """Train on one run's training fold, select L2 on dev, evaluate on test.

        Raises:
            RunFailed: Wrapping any library error with the job's context.
        """
        combo = parse_combination(combination) if isinstance(combination, str) else combination
        name = combination_name(combo)
        try:
            return self._run_single(combo, run)
        except GeotweetError as exc:
            raise RunFailed(name, run, exc) from exc

    def train_model(
        self,
        combination: FeatureCombination | str,
        run: int,
        *,
        l2_grid: Sequence[float] | None = None,
    ) -> TrainedModel:
        """Build the run's vocabulary, train one model per L2 value, keep the best on dev."""
        cfg = self.config
        combo = parse_combination(combination) if isinstance(combination, str) else combination
        train, dev, _ = self.fold(run)
        keep = None
        if cfg.top_k is not None:
            keep = set(top_countries(train, cfg.top_k))
            train = [t for t in train if t.country in keep]

        vocab = build_vocabulary(
            train,
            combo,
            cfg.features.min_df,
            binary=cfg.features.binary,
            missing_indicator=cfg.features.missing_indicator,
        )
        X = featurize_matrix(train, vocab)
        labels = [t.country for t in train]
        dev_scored = relabel_other(dev, keep) if keep is not None else dev

        best: TrainedModel | None = None
        grid: list[dict[str, Any]] = []
        key = _selection_key(cfg.selection_metric)
        for l2 in l2_grid if l2_grid is not None else cfg.l2_grid:
            model = train_matrix(
                X, labels, cfg.train.with_l2(l2), vocab_fingerprint=vocab.fingerprint
            )
            _, dev_report = self._score(model, vocab, dev_scored, dev)
            grid.append({"l2_lambda": l2, "dev": dev_report.to_dict()})
            if best is None or key(dev_report) > key(best.dev):
                best = TrainedModel(model, vocab, l2, dev_report, grid, keep)
        assert best is not None
        return best

    def _run_single(self, combo: FeatureCombination, run: int) -> RunResult:
        name = combination_name(combo)
        trained = self.train_model(combo, run)
        model, vocab, keep = trained.model, trained.vocab, trained.keep
        _, _, test = self.fold(run)
        test_scored = relabel_other(test, keep) if keep is not None else test

        pred, test_report = self._score(model, vocab, test_scored, test)
        truth = [t.country for t in test_scored]
        prf = per_country_prf(pred, truth)
        era_report = None
        era_prf = None
        if self.test_era is not None:
            era = self.test_era
            era_scored = relabel_other(era, keep) if keep is not None else era
            era_pred, era_report = self._score(model, vocab, era_scored, era)
            era_prf = per_country_prf(era_pred, [t.country for t in era_scored])

        logger.info(
            "%s run %d: l2=%g micro=%.4f macro=%.4f mse=%.4g",
            name,
            run,
            trained.l2_lambda,
            test_report.micro_accuracy,
            test_report.macro_accuracy,
            test_report.mse_km2,
        )
        return RunResult(
            combination=name,
            run=run,
            l2_lambda=trained.l2_lambda,
            grid=trained.grid,
            dev=trained.dev,
            test=test_report,
            per_country=_prf_dict(prf),
            confusion=confusion(pred, truth),
            test_correct=correct_mask(pred, truth),
            dims=vocab.total_dims,
            classes=list(model.classes),
            test_era=era_report,
            per_country_era=_prf_dict(era_prf) if era_prf is not None else None,
        )

    # -- sweep -------------------------------------------------------------

    def _job(self, job: tuple[FeatureCombination, int]) -> dict[str, Any]:
        combo, run = job
        try:
            return self.run_single(combo, run).to_record()
        except Exception as exc:
            logger.exception("Job %s/%d failed", combination_name(combo), run)
            return failure_record(combination_name(combo), run, exc)

    def run_sweep(self, out: Path | None = None) -> SweepResult:
        """Evaluate every selected combination on every run and persist the results.

        Failed jobs are recorded and the sweep continues; check
        :attr:`SweepResult.ok`.
        """
        cfg = self.config
        out = out or cfg.out
        jobs = [(combo, run) for combo in cfg.combinations for run in range(len(self.splits))]
        logger.info("Sweep: %d jobs on %d thread(s) -> %s", len(jobs), cfg.threads, out)

        write_json(
            manifest_path(out),
            {
                "format_version": FORMAT_VERSION,
                "code_version": _code_version(),
                "config": cfg.to_dict(),
                "config_sha256": cfg.sha256,
                "config_hash": sha256_json(cfg.to_dict()),
                "corpus_size": len(self.corpus),
                "test_era_size": len(self.test_era) if self.test_era is not None else None,
                "inputs": _input_digests(cfg),
                "jobs": len(jobs),
                "macro_excludes": [OTHER_LABEL] if cfg.top_k is not None else [],
            },
            backup=True,
        )

        records: list[dict[str, Any]] = []
        if cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                for record in pool.map(self._job, jobs):
                    write_json(record_path(out, record["combination"], record["run"]), record)
                    records.append(record)
        else:
            for job in jobs:
                record = self._job(job)
                write_json(record_path(out, record["combination"], record["run"]), record)
                records.append(record)

        result = summarize(records)
        write_summary(out, result)
        if not result.ok:
            logger.warning("Sweep finished with %d failed job(s)", len(result.failures))
        return result

    # -- baseline ----------------------------------------------------------

    def run_baseline(self, mode: LookupMode | str) -> EvalReport:
        """Gazetteer baseline on each run's test fold, averaged over runs.

        Raises:
            MissingGazetteer: If no gazetteer was loaded.
        """
        if self.gazetteer is None:
            raise MissingGazetteer()
        reports = []
        for run in range(len(self.splits)):
            train, _, test = self.fold(run)
            reports.append(evaluate_baseline(train, test, self.gazetteer, mode, self.table))
        report = mean_report(reports)
        logger.info(
            "Baseline %s: micro=%.4f macro=%.4f over %d runs",
            LookupMode(mode).value,
            report.micro_accuracy,
            report.macro_accuracy,
            len(reports),
        )
        return report


def evaluate_baseline(
    train: Sequence[LabeledTweet],
    test: Sequence[LabeledTweet],
    gazetteer: Gazetteer,
    mode: LookupMode | str,
    table: CountryTable,
) -> EvalReport:
    """Resolve every test tweet's user location; empty or unmatched -> training majority."""
    majority = _majority(train)
    pred = [gazetteer_lookup(t.tweet.uloc, gazetteer, mode, majority) for t in test]
    return evaluate(pred, [t.country for t in test], table)


def _code_version() -> str:
    from geotweet import __version__

    return __version__


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------


def _canonical_rank(name: str) -> int:
    return _CANONICAL_RANK.get(name, len(_CANONICAL_RANK))


def _input_digests(cfg: ExperimentConfig) -> dict[str, str]:
    """SHA-256 of each input file the config names, keyed by config field."""
    paths = {
        "train_corpus": cfg.train_corpus,
        "test_corpus": cfg.test_corpus,
        "centroids": cfg.centroids,
        "boundaries": cfg.boundaries,
        "gazetteer": cfg.gazetteer,
    }
    return {key: sha256_file(Path(p)) for key, p in paths.items() if p is not None}


def _mean(values: list[float]) -> float:
    return float(np.mean(values)) if values else float("nan")


def _relative_diff(later: float, same: float) -> float:
    """Relative change from the same-era value to the later-era value."""
    return (later - same) / same if same else float("nan")


def _best_by_f1(records: Sequence[dict[str, Any]], key: str) -> dict[str, tuple[str, float]]:
    """Best combination per true country by mean F1 over the runs it appears in."""
    f1s: dict[str, dict[str, list[float]]] = {}
    for r in records:
        for country, scores in (r.get(key) or {}).items():
            if scores["support"] > 0:
                f1s.setdefault(country, {}).setdefault(r["combination"], []).append(scores["f1"])
    best = {}
    for country, by_combo in f1s.items():
        means = {name: _mean(v) for name, v in by_combo.items()}
        name = min(means, key=lambda n: (-means[n], _canonical_rank(n), n))
        best[country] = (name, means[name])
    return best


def summarize(records: Sequence[dict[str, Any]]) -> SweepResult:
    """Means, rankings, best-per-country, oracle union and confusion from records."""
    ok = [r for r in records if r.get("status") == "ok"]
    by_combo: dict[str, list[dict[str, Any]]] = {}
    for r in ok:
        by_combo.setdefault(r["combination"], []).append(r)
    names = sorted(by_combo, key=lambda n: (_canonical_rank(n), n))
    has_era = any("test_era" in r for r in ok)

    summary = []
    for name in names:
        rs = by_combo[name]
        row: dict[str, Any] = {
            "combination": name,
            "runs": len(rs),
            "micro": _mean([r["test"]["micro_accuracy"] for r in rs]),
            "macro": _mean([r["test"]["macro_accuracy"] for r in rs]),
            "mse_km2": _mean([r["test"]["mse_km2"] for r in rs]),
        }
        if has_era:
            era = [r["test_era"] for r in rs if "test_era" in r]
            row["era_micro"] = _mean([e["micro_accuracy"] for e in era])
            row["era_macro"] = _mean([e["macro_accuracy"] for e in era])
            row["era_mse_km2"] = _mean([e["mse_km2"] for e in era])
            row["diff_micro"] = _relative_diff(row["era_micro"], row["micro"])
            row["diff_macro"] = _relative_diff(row["era_macro"], row["macro"])
            row["diff_mse_km2"] = _relative_diff(row["era_mse_km2"], row["mse_km2"])
        summary.append(row)

    def ranking(column: str, descending: bool) -> list[dict[str, Any]]:
        sign = -1.0 if descending else 1.0
        rows = sorted(
            summary, key=lambda s: (sign * s[column], _canonical_rank(s["combination"]))
        )
        return [{"combination": s["combination"], "value": s[column]} for s in rows]

    rankings = {"micro": ranking("micro", True), "macro": ranking("macro", True)}
    rankings["mse_km2"] = ranking("mse_km2", False)
    if has_era:
        rankings["era_micro"] = ranking("era_micro", True)
        rankings["era_macro"] = ranking("era_macro", True)
        rankings["era_mse_km2"] = ranking("era_mse_km2", False)

    same = _best_by_f1(ok, "per_country")
    later = _best_by_f1(ok, "per_country_era") if has_era else {}
    best = []
    for country in sorted(set(same) | set(later)):
        name, f1 = same.get(country, ("", float("nan")))
        entry: dict[str, Any] = {"country": country, "combination": name, "f1": f1}
        if has_era:
            era_name, era_f1 = later.get(country, ("", float("nan")))
            entry["era_combination"] = era_name
            entry["era_f1"] = era_f1
        best.append(entry)

    per_run: dict[int, list[np.ndarray]] = {}
    for r in ok:
        packed = r["test_correct"]
        per_run.setdefault(r["run"], []).append(unpack_mask(packed["bits"], packed["n"]))
    oracle_runs = {run: oracle_union_from_masks(masks) for run, masks in sorted(per_run.items())}
    oracle = {
        "format_version": FORMAT_VERSION,
        "per_run": {str(k): v for k, v in oracle_runs.items()},
        "mean": _mean(list(oracle_runs.values())),
    }

    matrix = None
    if ok:
        matrices = [ConfusionMatrix.from_dict(r["confusion"]) for r in ok]
        universe = sorted({c for m in matrices for c in m.classes})
        matrix = aggregate(align(m, universe) for m in matrices)

    return SweepResult(
        records=list(records),
        summary=summary,
        rankings=rankings,
        best_per_country=best,
        oracle_union=oracle,
        confusion=matrix,
    )


def _fmt(value: float) -> str:
    return repr(round(value, 10))


def write_summary(out: Path, result: SweepResult) -> None:
    """Persist the summary, ranking, best-per-country, confusion and oracle-union files."""
    if result.summary:
        columns = list(result.summary[0])
        write_csv(
            summary_path(out),
            columns,
            ([_fmt(v) if isinstance(v, float) else v for v in r.values()] for r in result.summary),
        )
    write_json(
        rankings_path(out),
        {
            "format_version": FORMAT_VERSION,
            "failures": [
                {"combination": f["combination"], "run": f["run"], "error": f["error"]}
                for f in result.failures
            ],
            **result.rankings,
        },
    )
    best = result.best_per_country
    write_csv(
        best_per_country_path(out),
        list(best[0]) if best else ["country", "combination", "f1"],
        ([_fmt(v) if isinstance(v, float) else v for v in b.values()] for b in best),
    )
    if result.confusion is not None:
        result.confusion.write_csv(confusion_path(out))
    write_json(oracle_union_path(out), result.oracle_union)


def load_sweep(out: Path) -> SweepResult:
    """Re-summarize a sweep directory from its stored run records."""
    return summarize(iter_records(out))
