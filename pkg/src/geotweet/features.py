"""Tokenization, per-feature vocabularies and sparse feature vectors.

Eight tweet-inherent features are available. Four free-text ones (user
location, user name, description, tweet content) become bag-of-words blocks;
four short ones (user language, tweet language, time zone, UTC offset) become
one-hot categorical blocks. A feature combination concatenates the blocks of
its kinds in canonical order.
"""

from __future__ import annotations

import itertools
import logging
import re
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from geotweet.checksum import sha256_text
from geotweet.corpus import LabeledTweet, RawTweet
from geotweet.errors import ContractError, EmptyTrainingSet, FormatError

logger = logging.getLogger(__name__)

VOCAB_FORMAT_VERSION = 1
MISSING_TOKEN = "<missing>"


class FeatureKind(Enum):
    """The eight tweet-inherent features, in canonical order."""

    ULOC = "uloc"
    ULANG = "ulang"
    TZ = "tz"
    TLANG = "tlang"
    OFFSET = "offset"
    NAME = "name"
    DESCRIPTION = "description"
    CONTENT = "content"


CANONICAL_ORDER: tuple[FeatureKind, ...] = tuple(FeatureKind)
_RANK = {kind: i for i, kind in enumerate(CANONICAL_ORDER)}

BOW_KINDS = frozenset(
    {FeatureKind.ULOC, FeatureKind.NAME, FeatureKind.DESCRIPTION, FeatureKind.CONTENT}
)
CATEGORICAL_KINDS = frozenset(CANONICAL_ORDER) - BOW_KINDS

# Names and locations are short and sparse; content and descriptions are pruned.
DEFAULT_MIN_DF: dict[FeatureKind, int] = {
    FeatureKind.ULOC: 1,
    FeatureKind.NAME: 1,
    FeatureKind.DESCRIPTION: 2,
    FeatureKind.CONTENT: 2,
}

FeatureCombination = tuple[FeatureKind, ...]


# ---------------------------------------------------------------------------
# Combinations
# ---------------------------------------------------------------------------


def make_combination(kinds: Iterable[FeatureKind | str]) -> FeatureCombination:
    """Normalize kinds (enum members or names) to a canonical-order combination."""
    try:
        unique = {k if isinstance(k, FeatureKind) else FeatureKind(str(k).strip()) for k in kinds}
    except ValueError as exc:
        raise ContractError(f"unknown feature kind ({exc})") from None
    if not unique:
        raise ContractError("a feature combination needs at least one kind")
    return tuple(sorted(unique, key=_RANK.__getitem__))


def combination_name(combo: FeatureCombination) -> str:
    """Hyphen-joined kind names in alphabetical order, e.g. ``content-tz``."""
    return "-".join(sorted(k.value for k in combo))


def parse_combination(name: str) -> FeatureCombination:
    """Inverse of :func:`combination_name`; also accepts ``,`` and ``+``."""
    return make_combination(p for p in re.split(r"[-,+\s]+", name) if p)


def enumerate_combinations() -> list[FeatureCombination]:
    """All 255 non-empty subsets, by size then canonical lexicographic order."""
    return [
        combo
        for size in range(1, len(CANONICAL_ORDER) + 1)
        for combo in itertools.combinations(CANONICAL_ORDER, size)
    ]


def singleton_combinations() -> list[FeatureCombination]:
    return [(kind,) for kind in CANONICAL_ORDER]


# ---------------------------------------------------------------------------
# Tokens and field values
# ---------------------------------------------------------------------------

_URL_RE = re.compile(r"https?://\S+")
# Underscores join hashtag and mention names (@new_york) but split plain words.
_TOKEN_RE = re.compile(r"[#@]\w+|[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Case-fold, drop URLs, split on whitespace/punctuation keeping ``#``/``@`` prefixes."""
    if not text:
        return []
    return _TOKEN_RE.findall(_URL_RE.sub(" ", text.casefold()))


def field_value(tweet: RawTweet, kind: FeatureKind) -> str:
    """Raw value of one feature ('' when absent)."""
    if kind is FeatureKind.OFFSET:
        return "" if tweet.offset is None else str(tweet.offset)
    value = {
        FeatureKind.ULOC: tweet.uloc,
        FeatureKind.ULANG: tweet.ulang,
        FeatureKind.TZ: tweet.tz,
        FeatureKind.TLANG: tweet.tlang,
        FeatureKind.NAME: tweet.name,
        FeatureKind.DESCRIPTION: tweet.description,
        FeatureKind.CONTENT: tweet.content,
    }[kind]
    if kind in CATEGORICAL_KINDS:
        return " ".join(value.split())
    return value


def _units(tweet: RawTweet, kind: FeatureKind, missing_indicator: bool) -> list[str]:
    """Tokens (bag of words) or the single value (categorical) of one feature."""
    value = field_value(tweet, kind)
    units = tokenize(value) if kind in BOW_KINDS else ([value] if value else [])
    if not units and missing_indicator:
        return [MISSING_TOKEN]
    return units


def feature_availability(tweets: Iterable[RawTweet | LabeledTweet]) -> dict[str, float]:
    """Fraction of tweets with a non-empty value, per feature."""
    counts: Counter[FeatureKind] = Counter()
    n = 0
    for item in tweets:
        tweet = item.tweet if isinstance(item, LabeledTweet) else item
        n += 1
        for kind in CANONICAL_ORDER:
            if field_value(tweet, kind).strip():
                counts[kind] += 1
    return {kind.value: (counts[kind] / n if n else 0.0) for kind in CANONICAL_ORDER}


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------


@dataclass
class Vocabulary:
    """Per-kind token/value index maps over a concatenated feature space."""

    kinds: FeatureCombination
    blocks: dict[FeatureKind, dict[str, int]]
    min_df: dict[FeatureKind, int] = field(default_factory=dict)
    binary: bool = True
    missing_indicator: bool = False

    def __post_init__(self) -> None:
        offsets: dict[FeatureKind, int] = {}
        total = 0
        for kind in self.kinds:
            offsets[kind] = total
            total += len(self.blocks[kind])
        self.block_offsets = offsets
        self.total_dims = total
        self._fingerprint: str | None = None

    def block_size(self, kind: FeatureKind) -> int:
        return len(self.blocks[kind])

    def index_of(self, kind: FeatureKind, unit: str) -> int | None:
        """Global index of a token/value, or None when out of vocabulary."""
        local = self.blocks[kind].get(unit)
        return None if local is None else self.block_offsets[kind] + local

    @property
    def fingerprint(self) -> str:
        """SHA256 of the serialized vocabulary; binds models to this vocabulary."""
        if self._fingerprint is None:
            self._fingerprint = sha256_text(self.to_text())
        return self._fingerprint

    def to_text(self) -> str:
        min_df = ",".join(f"{k.value}={self.min_df.get(k, 1)}" for k in self.kinds)
        lines = [
            f"#geotweet-vocab\tv{VOCAB_FORMAT_VERSION}",
            "#kinds\t" + ",".join(k.value for k in self.kinds),
            f"#min_df\t{min_df}",
            f"#binary\t{int(self.binary)}",
            f"#missing_indicator\t{int(self.missing_indicator)}",
            f"#total_dims\t{self.total_dims}",
        ]
        for kind in self.kinds:
            block = self.blocks[kind]
            for unit, i in sorted(block.items(), key=lambda x: x[1]):
                lines.append(f"{kind.value}\t{unit}\t{i}")
        return "\n".join(lines) + "\n"

    def save(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(self.to_text(), encoding="utf-8")
        tmp.replace(path)

    @classmethod
    def from_text(cls, text: str, source: str = "<vocabulary>") -> Vocabulary:
        header: dict[str, str] = {}
        blocks: dict[FeatureKind, dict[str, int]] = {}
        for line_no, line in enumerate(text.splitlines(), start=1):
            if not line:
                continue
            parts = line.split("\t")
            if line.startswith("#"):
                if len(parts) != 2:
                    raise FormatError(source, f"line {line_no}: malformed header")
                header[parts[0][1:]] = parts[1]
                continue
            if len(parts) != 3:
                raise FormatError(source, f"line {line_no}: expected kind<TAB>token<TAB>index")
            try:
                kind = FeatureKind(parts[0])
                blocks.setdefault(kind, {})[parts[1]] = int(parts[2])
            except ValueError as exc:
                raise FormatError(source, f"line {line_no}: {exc}") from exc

        if header.get("geotweet-vocab") != f"v{VOCAB_FORMAT_VERSION}":
            version = header.get("geotweet-vocab")
            raise FormatError(source, f"unsupported vocabulary version {version!r}")
        try:
            kinds = make_combination(header["kinds"].split(","))
            min_df = {
                FeatureKind(k): int(v)
                for k, v in (i.split("=") for i in header.get("min_df", "").split(",") if i)
            }
            vocab = cls(
                kinds=kinds,
                blocks={k: blocks.get(k, {}) for k in kinds},
                min_df=min_df,
                binary=header.get("binary", "1") == "1",
                missing_indicator=header.get("missing_indicator", "0") == "1",
            )
        except (KeyError, ValueError, ContractError) as exc:
            raise FormatError(source, f"bad header ({exc})") from exc

        for kind, block in vocab.blocks.items():
            if sorted(block.values()) != list(range(len(block))):
                raise FormatError(source, f"indices of '{kind.value}' are not dense")
        if str(vocab.total_dims) != header.get("total_dims"):
            raise FormatError(source, "total_dims does not match the entries")
        return vocab

    @classmethod
    def load(cls, path: Path) -> Vocabulary:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise FormatError(str(path), str(exc)) from exc
        return cls.from_text(text, source=str(path))


def build_vocabulary(
    train: Sequence[LabeledTweet | RawTweet],
    kinds: Iterable[FeatureKind | str],
    min_df: int | Mapping[FeatureKind, int] | None = None,
    *,
    binary: bool = True,
    missing_indicator: bool = False,
) -> Vocabulary:
    """Build a vocabulary from training tweets only.

    Bag-of-words blocks keep tokens seen in at least ``min_df`` distinct
    tweets; categorical blocks keep every observed value. Each block is
    built independently of the others, so a sub-combination's blocks equal
    the corresponding blocks of a larger combination.

    Args:
        train: Training tweets.
        kinds: Feature kinds to include.
        min_df: One threshold for all bag-of-words kinds, a per-kind mapping,
            or None for the defaults (2 for content/description, 1 otherwise).
    """
    combo = make_combination(kinds)
    if not train:
        raise EmptyTrainingSet("a vocabulary")
    if min_df is None:
        thresholds = dict(DEFAULT_MIN_DF)
    elif isinstance(min_df, Mapping):
        thresholds = {**DEFAULT_MIN_DF, **min_df}
    else:
        thresholds = {k: int(min_df) for k in BOW_KINDS}
    if any(v < 1 for v in thresholds.values()):
        raise ContractError(f"min_df must be >= 1, got {thresholds}")

    df: dict[FeatureKind, Counter[str]] = {kind: Counter() for kind in combo}
    for item in train:
        tweet = item.tweet if isinstance(item, LabeledTweet) else item
        for kind in combo:
            df[kind].update(set(_units(tweet, kind, missing_indicator)))

    blocks: dict[FeatureKind, dict[str, int]] = {}
    used_min_df: dict[FeatureKind, int] = {}
    for kind in combo:
        threshold = thresholds.get(kind, 1) if kind in BOW_KINDS else 1
        used_min_df[kind] = threshold
        kept = sorted(unit for unit, count in df[kind].items() if count >= threshold)
        blocks[kind] = {unit: i for i, unit in enumerate(kept)}

    vocab = Vocabulary(
        kinds=combo,
        blocks=blocks,
        min_df=used_min_df,
        binary=binary,
        missing_indicator=missing_indicator,
    )
    logger.debug(
        "Vocabulary %s: %d dims (%s)",
        combination_name(combo),
        vocab.total_dims,
        ", ".join(f"{k.value}={len(blocks[k])}" for k in combo),
    )
    return vocab


# ---------------------------------------------------------------------------
# Vectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureVector:
    """Sparse vector: strictly increasing indices with positive values."""

    indices: np.ndarray
    values: np.ndarray
    dims: int

    def pairs(self) -> list[tuple[int, float]]:
        return [(int(i), float(v)) for i, v in zip(self.indices, self.values)]

    def __len__(self) -> int:
        return len(self.indices)


def featurize(
    tweet: RawTweet | LabeledTweet,
    kinds: Iterable[FeatureKind | str],
    vocab: Vocabulary,
) -> FeatureVector:
    """Vectorize one tweet against *vocab*.

    Bag-of-words kinds contribute 1.0 per distinct in-vocabulary token (the
    token count when the vocabulary is not binary); categorical kinds
    contribute 1.0 at the observed value. Unknown tokens and empty fields
    contribute nothing.

    Raises:
        ContractError: If *kinds* differ from the kinds *vocab* was built for.
    """
    combo = make_combination(kinds)
    if combo != vocab.kinds:
        raise ContractError(
            f"vocabulary built for {combination_name(vocab.kinds)}, "
            f"asked to featurize {combination_name(combo)}"
        )
    raw = tweet.tweet if isinstance(tweet, LabeledTweet) else tweet
    weights: dict[int, float] = {}
    for kind in combo:
        block = vocab.blocks[kind]
        offset = vocab.block_offsets[kind]
        for unit, count in Counter(_units(raw, kind, vocab.missing_indicator)).items():
            local = block.get(unit)
            if local is not None:
                weights[offset + local] = 1.0 if vocab.binary else float(count)
    order = sorted(weights)
    return FeatureVector(
        indices=np.array(order, dtype=np.int64),
        values=np.array([weights[i] for i in order], dtype=np.float64),
        dims=vocab.total_dims,
    )


def stack_vectors(vectors: Sequence[FeatureVector], dims: int) -> sp.csr_matrix:
    """Stack feature vectors into an ``(n, dims)`` CSR matrix."""
    for v in vectors:
        if v.dims != dims:
            raise ContractError(f"vector has {v.dims} dims, expected {dims}")
    indptr = np.zeros(len(vectors) + 1, dtype=np.int64)
    if vectors:
        indptr[1:] = np.cumsum([len(v) for v in vectors])
        indices = np.concatenate([v.indices for v in vectors])
        data = np.concatenate([v.values for v in vectors])
    else:
        indices = np.empty(0, dtype=np.int64)
        data = np.empty(0, dtype=np.float64)
    return sp.csr_matrix((data, indices, indptr), shape=(len(vectors), dims))


def featurize_matrix(
    tweets: Sequence[RawTweet | LabeledTweet], vocab: Vocabulary
) -> sp.csr_matrix:
    """Design matrix of *tweets* under *vocab* (one row per tweet)."""
    return stack_vectors([featurize(t, vocab.kinds, vocab) for t in tweets], vocab.total_dims)
