"""Evaluation metrics: accuracies, centroid MSE, per-country P/R/F1, confusion.

All counts are integers and all ratios are computed in double precision;
squared distances are summed with :func:`math.fsum`.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np
from sklearn.metrics import confusion_matrix as sk_confusion_matrix
from sklearn.metrics import precision_recall_fscore_support

from geotweet.errors import ContractError
from geotweet.geo import CountryTable, haversine_km_array
from geotweet.manifest import FORMAT_VERSION, write_csv, write_json

# Label given to test tweets outside the top-k training countries.
OTHER_LABEL = "OTHER"


def _check_lengths(pred: Sequence[str], truth: Sequence[str]) -> None:
    if len(pred) != len(truth):
        raise ContractError(f"{len(pred)} predictions for {len(truth)} truth labels")
    if not truth:
        raise ContractError("cannot evaluate zero instances")


@dataclass(frozen=True)
class EvalReport:
    micro_accuracy: float
    macro_accuracy: float
    mse_km2: float
    n: int
    macro_accuracy_with_other: float | None = None

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        if self.macro_accuracy_with_other is None:
            del data["macro_accuracy_with_other"]
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> EvalReport:
        return cls(
            micro_accuracy=float(data["micro_accuracy"]),
            macro_accuracy=float(data["macro_accuracy"]),
            mse_km2=float(data["mse_km2"]),
            n=int(data["n"]),
            macro_accuracy_with_other=data.get("macro_accuracy_with_other"),
        )


def micro_accuracy(pred: Sequence[str], truth: Sequence[str]) -> float:
    """Fraction of instances predicted correctly."""
    _check_lengths(pred, truth)
    return sum(p == t for p, t in zip(pred, truth)) / len(truth)


def macro_accuracy(
    pred: Sequence[str],
    truth: Sequence[str],
    class_universe: Iterable[str] | None = None,
    *,
    exclude: Iterable[str] = (),
) -> float:
    """Unweighted mean of per-class recall over the classes present in *truth*.

    Args:
        class_universe: When given, every truth label must belong to it.
        exclude: Classes left out of the mean (their instances still exist).

    Raises:
        ContractError: If *truth* is empty.
    """
    _check_lengths(pred, truth)
    if class_universe is not None:
        universe = set(class_universe)
        unknown = sorted(set(truth) - universe)
        if unknown:
            raise ContractError(f"truth labels outside the class universe: {unknown}")
    skip = set(exclude)
    hits: dict[str, int] = {}
    totals: dict[str, int] = {}
    for p, t in zip(pred, truth):
        totals[t] = totals.get(t, 0) + 1
        hits[t] = hits.get(t, 0) + (p == t)
    recalls = [hits[c] / totals[c] for c in sorted(totals) if c not in skip]
    if not recalls:
        raise ContractError("every truth class is excluded from the macro mean")
    return float(np.mean(recalls))


def mse_km2(pred: Sequence[str], truth: Sequence[str], table: CountryTable) -> float:
    """Mean squared centroid distance in square kilometres.

    Raises:
        UnknownCountry: Naming the first code the table cannot resolve.
    """
    _check_lengths(pred, truth)
    lat_p, lon_p = table.centroid_arrays(list(pred))
    lat_t, lon_t = table.centroid_arrays(list(truth))
    d = haversine_km_array(lat_p, lon_p, lat_t, lon_t)
    d[np.array([p == t for p, t in zip(pred, truth)])] = 0.0
    return math.fsum(d * d) / len(truth)


# ---------------------------------------------------------------------------
# Per-country scores
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CountryScores:
    precision: float
    recall: float
    f1: float
    support: int


class PerCountryReport(dict[str, CountryScores]):
    """Country code -> one-vs-rest precision, recall, F1 and support."""

    def to_rows(self) -> list[list[Any]]:
        return [
            [c, f"{s.precision:.6f}", f"{s.recall:.6f}", f"{s.f1:.6f}", s.support]
            for c, s in sorted(self.items())
        ]

    def write_csv(self, path: Path) -> None:
        write_csv(path, ["country", "precision", "recall", "f1", "support"], self.to_rows())


def per_country_prf(pred: Sequence[str], truth: Sequence[str]) -> PerCountryReport:
    """P/R/F1 for every country in *truth* or *pred*; undefined values are 0."""
    _check_lengths(pred, truth)
    labels = sorted(set(pred) | set(truth))
    p, r, f, s = precision_recall_fscore_support(
        list(truth), list(pred), labels=labels, zero_division=0
    )
    return PerCountryReport(
        {
            c: CountryScores(float(p[i]), float(r[i]), float(f[i]), int(s[i]))
            for i, c in enumerate(labels)
        }
    )


# ---------------------------------------------------------------------------
# Confusion matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    classes: tuple[str, ...]
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def trace(self) -> int:
        return int(np.trace(self.counts))

    def row_sums(self) -> dict[str, int]:
        return {c: int(n) for c, n in zip(self.classes, self.counts.sum(axis=1))}

    def to_dict(self) -> dict[str, Any]:
        return {"classes": list(self.classes), "counts": self.counts.tolist()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ConfusionMatrix:
        return cls(tuple(data["classes"]), np.array(data["counts"], dtype=np.int64))

    def write_csv(self, path: Path) -> None:
        """K x K table with a header row and column of country codes."""
        rows = [[c, *map(int, row)] for c, row in zip(self.classes, self.counts)]
        write_csv(path, ["true\\pred", *self.classes], rows)


def confusion(
    pred: Sequence[str], truth: Sequence[str], classes: Sequence[str] | None = None
) -> ConfusionMatrix:
    """Confusion counts over *classes* (default: sorted union of labels)."""
    _check_lengths(pred, truth)
    labels = list(classes) if classes is not None else sorted(set(pred) | set(truth))
    missing = sorted((set(pred) | set(truth)) - set(labels))
    if missing:
        raise ContractError(f"labels {missing} are not in the class ordering")
    if len(set(labels)) != len(labels):
        raise ContractError("class ordering has duplicates")
    counts = sk_confusion_matrix(list(truth), list(pred), labels=labels)
    return ConfusionMatrix(tuple(labels), counts.astype(np.int64))


def aggregate(matrices: Iterable[ConfusionMatrix]) -> ConfusionMatrix:
    """Elementwise sum of matrices sharing one class ordering."""
    matrices = list(matrices)
    if not matrices:
        raise ContractError("nothing to aggregate")
    classes = matrices[0].classes
    total = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for m in matrices:
        if m.classes != classes:
            raise ContractError("confusion matrices have different class orderings")
        total += m.counts
    return ConfusionMatrix(classes, total)


def align(matrix: ConfusionMatrix, classes: Sequence[str]) -> ConfusionMatrix:
    """Re-index *matrix* onto a superset ordering, padding with zeros."""
    index = {c: i for i, c in enumerate(classes)}
    missing = [c for c in matrix.classes if c not in index]
    if missing:
        raise ContractError(f"classes {missing} are not in the target ordering")
    out = np.zeros((len(classes), len(classes)), dtype=np.int64)
    pos = [index[c] for c in matrix.classes]
    out[np.ix_(pos, pos)] = matrix.counts
    return ConfusionMatrix(tuple(classes), out)


def correct_mask(pred: Sequence[str], truth: Sequence[str]) -> np.ndarray:
    """Boolean array, True where the prediction matches the truth."""
    _check_lengths(pred, truth)
    return np.fromiter((p == t for p, t in zip(pred, truth)), dtype=bool, count=len(truth))


def pack_mask(mask: np.ndarray) -> str:
    """Hex string of a packed boolean mask (length is stored separately)."""
    return np.packbits(mask.astype(bool)).tobytes().hex()


def unpack_mask(packed: str, n: int) -> np.ndarray:
    raw = np.frombuffer(bytes.fromhex(packed), dtype=np.uint8)
    return np.unpackbits(raw, count=n).astype(bool)


def oracle_union_from_masks(masks: Sequence[np.ndarray]) -> float:
    """Fraction of instances marked correct in at least one mask."""
    if not masks:
        raise ContractError("oracle union needs at least one prediction set")
    n = len(masks[0])
    if n == 0 or any(len(m) != n for m in masks):
        raise ContractError("oracle union masks must be non-empty and of equal length")
    return int(np.logical_or.reduce(masks).sum()) / n


def oracle_union_accuracy(
    prediction_sets: Sequence[Sequence[str]], truth: Sequence[str]
) -> float:
    """Fraction of instances that at least one predictor labels correctly."""
    return oracle_union_from_masks([correct_mask(preds, truth) for preds in prediction_sets])


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def evaluate(
    pred: Sequence[str],
    truth: Sequence[str],
    table: CountryTable,
    *,
    geo_truth: Sequence[str] | None = None,
    exclude: Iterable[str] = (),
    macro_include_other: bool = False,
) -> EvalReport:
    """Micro, macro and MSE in one report.

    Args:
        pred: Predicted countries.
        truth: Truth labels as scored; may contain ``OTHER``.
        table: Country centroids for the MSE.
        geo_truth: Real countries used for the MSE when *truth* carries
            synthetic labels (defaults to *truth*).
        exclude: Classes left out of the macro mean.
        macro_include_other: Also report the macro mean with nothing excluded.
    """
    exclude = tuple(exclude)
    return EvalReport(
        micro_accuracy=micro_accuracy(pred, truth),
        macro_accuracy=macro_accuracy(pred, truth, exclude=exclude),
        mse_km2=mse_km2(pred, geo_truth if geo_truth is not None else truth, table),
        n=len(truth),
        macro_accuracy_with_other=(
            macro_accuracy(pred, truth) if macro_include_other and exclude else None
        ),
    )


def write_report_json(
    path: Path,
    report: EvalReport,
    *,
    config: dict[str, Any] | None = None,
    macro_excludes: Sequence[str] = (),
) -> None:
    """Write a report with its config echo and the macro-mean convention."""
    write_json(
        path,
        {
            "format_version": FORMAT_VERSION,
            "config": config or {},
            "macro_excludes": list(macro_excludes),
            "metrics": report.to_dict(),
        },
    )


def mean_report(reports: Sequence[EvalReport]) -> EvalReport:
    """Per-metric means over runs; ``n`` is the total evaluated count."""
    if not reports:
        raise ContractError("no reports to average")
    with_other = [r.macro_accuracy_with_other for r in reports]
    return EvalReport(
        micro_accuracy=float(np.mean([r.micro_accuracy for r in reports])),
        macro_accuracy=float(np.mean([r.macro_accuracy for r in reports])),
        mse_km2=float(np.mean([r.mse_km2 for r in reports])),
        n=sum(r.n for r in reports),
        macro_accuracy_with_other=(
            None if any(v is None for v in with_other) else float(np.mean(with_other))
        ),
    )
