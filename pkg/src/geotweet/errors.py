"""Exception hierarchy for geotweet.

Every error message includes: what happened, why, and what to do next.
Structured fields are kept as attributes so callers (the CLI, the sweep
recorder) can act on them without parsing the message.
"""

from __future__ import annotations


class GeotweetError(Exception):
    """Base class for all geotweet errors."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


class ConfigError(GeotweetError):
    """Experiment or component configuration is missing or invalid."""

    def __init__(self, detail: str, hint: str = ""):
        msg = f"Configuration error: {detail}."
        if hint:
            msg += f" {hint}"
        super().__init__(msg)
        self.detail = detail
        self.hint = hint


class SplitConfigError(ConfigError):
    """Split fractions or run count are invalid."""

    def __init__(self, detail: str):
        super().__init__(
            detail,
            hint=(
                "train_frac + dev_frac + test_frac must sum to 1.0, each fraction must be "
                "positive, and runs must be at least 1."
            ),
        )


class TrainConfigError(ConfigError):
    """Training hyperparameters are out of range."""

    def __init__(self, detail: str):
        super().__init__(
            detail,
            hint="Use tol > 0, max_epochs >= 1, learning_rate > 0 and l2_lambda >= 0.",
        )


class MissingGazetteer(ConfigError):
    """The gazetteer baseline was requested without a gazetteer file."""

    def __init__(self):
        super().__init__(
            "the gazetteer baseline needs a gazetteer file",
            hint="Set 'gazetteer' in the experiment config or pass --gazetteer <file.tsv>.",
        )


class EmptyCountryTable(ConfigError):
    """Reverse geocoding was attempted against a table with no boundaries."""

    def __init__(self):
        super().__init__(
            "the country table has no boundary polygons",
            hint="Load a boundary file (GeoJSON with an 'iso2' property) alongside the centroids.",
        )


# ---------------------------------------------------------------------------
# Corpus
# ---------------------------------------------------------------------------


class TweetParseError(GeotweetError):
    """A tweet record could not be parsed."""

    def __init__(self, line_no: int, reason: str, tweet_id: str = ""):
        super().__init__(
            f"Line {line_no}: cannot parse tweet record ({reason}). "
            f"Each line must be one JSON object in the tweet schema. "
            f"The record was skipped; see the drop log for all rejected lines."
        )
        self.line_no = line_no
        self.reason = reason
        self.tweet_id = tweet_id


class MissingUserId(TweetParseError):
    """A tweet record carries no user id."""

    def __init__(self, line_no: int, tweet_id: str = ""):
        super().__init__(line_no, "missing user.id_str", tweet_id)


class MissingCoordinates(GeotweetError):
    """A tweet without coordinates reached the labeling step."""

    def __init__(self, tweet_id: str):
        super().__init__(
            f"Tweet '{tweet_id}' has no coordinates and cannot be reverse geocoded. "
            f"Only geolocated tweets can be labeled. "
            f"Filter the input to geolocated tweets or label with on_missing='drop'."
        )
        self.tweet_id = tweet_id


class UndefinedCorrelation(GeotweetError):
    """Pearson correlation is undefined for a constant distribution."""

    def __init__(self, which: str):
        super().__init__(
            f"Correlation is undefined: distribution '{which}' is constant over the "
            f"country universe. Compare corpora that cover at least two countries "
            f"with different counts."
        )
        self.which = which


# ---------------------------------------------------------------------------
# Geography
# ---------------------------------------------------------------------------


class CountryTableError(GeotweetError):
    """A centroid row or boundary feature is malformed."""

    def __init__(self, path: str, location: str, reason: str):
        super().__init__(
            f"Cannot load country data from '{path}' at {location}: {reason}. "
            f"The table was not loaded. Fix the record and reload."
        )
        self.path = path
        self.location = location
        self.reason = reason


class UnknownCountry(GeotweetError):
    """A country code is not present in the loaded country table."""

    def __init__(self, code: str):
        super().__init__(
            f"Country '{code}' is not in the country table. "
            f"Add its centroid to the centroid file, or drop tweets labeled '{code}'."
        )
        self.code = code


# ---------------------------------------------------------------------------
# Features, model, evaluation
# ---------------------------------------------------------------------------


class ContractError(GeotweetError):
    """Inputs violate an operation's contract (shapes, lengths, orderings)."""

    def __init__(self, detail: str):
        super().__init__(f"Contract violation: {detail}.")
        self.detail = detail


class EmptyTrainingSet(GeotweetError):
    """An operation that learns from data received no data."""

    def __init__(self, what: str):
        super().__init__(
            f"Cannot build {what} from an empty training set. "
            f"Check the corpus path and the split fractions."
        )
        self.what = what


class SingleClassData(GeotweetError):
    """Training data has fewer than two classes."""

    def __init__(self, classes: list[str]):
        found = ", ".join(classes) if classes else "(none)"
        super().__init__(
            f"Training needs at least two countries, found: {found}. "
            f"Use a larger corpus or a lower top_k."
        )
        self.classes = classes


class ZeroClassCount(GeotweetError):
    """A class with zero examples was passed to class weighting."""

    def __init__(self, classes: list[str]):
        super().__init__(
            f"Classes with zero examples cannot be weighted: {', '.join(classes)}. "
            f"Drop them from the class list before training."
        )
        self.classes = classes


class TrainingDiverged(GeotweetError):
    """The training objective became non-finite."""

    def __init__(self, epoch: int, value: float):
        super().__init__(
            f"Training diverged at epoch {epoch} (objective {value}). "
            f"Lower the learning_rate or raise l2_lambda."
        )
        self.epoch = epoch
        self.value = value


class FingerprintMismatch(GeotweetError):
    """A model was loaded against a vocabulary it was not trained with."""

    def __init__(self, expected: str, actual: str):
        super().__init__(
            f"Model expects vocabulary {expected[:12]}… but got {actual[:12]}…. "
            f"Load the vocab.tsv written next to the model file."
        )
        self.expected = expected
        self.actual = actual


class FormatError(GeotweetError):
    """A persisted artifact is unreadable or has an unsupported version."""

    def __init__(self, path: str, reason: str):
        super().__init__(
            f"Cannot read '{path}': {reason}. "
            f"Regenerate the artifact with this version of geotweet."
        )
        self.path = path
        self.reason = reason


# ---------------------------------------------------------------------------
# Harness
# ---------------------------------------------------------------------------


class TopKTooLarge(GeotweetError):
    """top_k exceeds the number of countries seen in training."""

    def __init__(self, k: int, available: int):
        super().__init__(
            f"top_k={k} but the training fold has only {available} countries. "
            f"Use top_k <= {available} or omit top_k to keep all countries."
        )
        self.k = k
        self.available = available


class RunFailed(GeotweetError):
    """One (combination, run) job of an experiment failed."""

    def __init__(self, combination: str, run: int, cause: Exception):
        super().__init__(
            f"Run {run} of combination '{combination}' failed: {cause} "
            f"The sweep records the failure and continues with the next job."
        )
        self.combination = combination
        self.run = run
        self.cause = cause
