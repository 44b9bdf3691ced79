"""Tweet ingestion: parsing, user de-duplication, country labeling and splits.

Input is UTF-8 JSON lines in the tweet-object schema::

    {"id_str": "...", "text": "...", "lang": "en",
     "coordinates": {"coordinates": [lon, lat]},
     "user": {"id_str": "...", "name": "...", "description": "...",
              "location": "...", "lang": "en", "time_zone": "...",
              "utc_offset": -10800}}

Unknown fields are ignored. A labeled corpus is the same schema plus a
top-level ``country_code``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from collections import Counter
from collections.abc import Callable, Iterable, Iterator, Mapping, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from geotweet.errors import (
    ContractError,
    MissingCoordinates,
    MissingUserId,
    SplitConfigError,
    TweetParseError,
    UndefinedCorrelation,
)
from geotweet.geo import GeoPoint
from geotweet.manifest import FORMAT_VERSION, read_json, write_json

logger = logging.getLogger(__name__)

MAX_OFFSET_SECONDS = 86400

# (line_no, reason) pairs collected while reading or labeling.
DropLog = list[tuple[int, str]]


@dataclass(frozen=True)
class RawTweet:
    """The eight tweet-inherent fields plus identity and coordinates."""

    user_id: str
    content: str = ""
    description: str = ""
    name: str = ""
    uloc: str = ""
    ulang: str = ""
    tlang: str = ""
    tz: str = ""
    offset: int | None = None
    coords: GeoPoint | None = None
    tweet_id: str = ""
    line_no: int = field(default=0, compare=False)

    def to_record(self) -> dict[str, Any]:
        """Serialize back to the canonical tweet schema."""
        record: dict[str, Any] = {
            "id_str": self.tweet_id,
            "text": self.content,
            "lang": self.tlang,
            "user": {
                "id_str": self.user_id,
                "name": self.name,
                "description": self.description,
                "location": self.uloc,
                "lang": self.ulang,
                "time_zone": self.tz,
                "utc_offset": self.offset,
            },
        }
        if self.coords is not None:
            record["coordinates"] = {
                "type": "Point",
                "coordinates": [self.coords.lon, self.coords.lat],
            }
        return record


@dataclass(frozen=True)
class LabeledTweet:
    """A tweet with its ground-truth country."""

    tweet: RawTweet
    country: str

    def to_record(self) -> dict[str, Any]:
        record = self.tweet.to_record()
        record["country_code"] = self.country
        return record


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _clean_text(value: Any) -> str:
    """Coerce a field to valid Unicode text; absent fields become ''."""
    if value is None:
        return ""
    s = value if isinstance(value, str) else str(value)
    # Lone surrogates survive json.loads but cannot be encoded as UTF-8.
    return s.encode("utf-8", "replace").decode("utf-8")


def _content(record: Mapping[str, Any]) -> str:
    extended = record.get("extended_tweet")
    if isinstance(extended, dict) and extended.get("full_text"):
        return _clean_text(extended["full_text"])
    return _clean_text(record.get("full_text") or record.get("text"))


def _coords(record: Mapping[str, Any], line_no: int) -> GeoPoint | None:
    coordinates = record.get("coordinates")
    if not coordinates:
        return None
    pair = coordinates.get("coordinates") if isinstance(coordinates, dict) else None
    if not isinstance(pair, list) or len(pair) < 2:
        raise TweetParseError(line_no, "coordinates.coordinates must be [longitude, latitude]")
    try:
        return GeoPoint(lat=float(pair[1]), lon=float(pair[0]))
    except (TypeError, ValueError, ContractError) as exc:
        raise TweetParseError(line_no, f"bad coordinates {pair!r}") from exc


def _offset(user: Mapping[str, Any], line_no: int) -> int | None:
    raw = user.get("utc_offset")
    if raw is None or raw == "":
        return None
    try:
        offset = int(raw)
    except (TypeError, ValueError):
        raise TweetParseError(line_no, f"utc_offset {raw!r} is not an integer") from None
    if abs(offset) > MAX_OFFSET_SECONDS:
        raise TweetParseError(line_no, f"utc_offset {offset} outside [-86400, 86400]")
    return offset


def parse_record(record: Any, line_no: int = 0) -> RawTweet:
    """Build a RawTweet from an already decoded tweet object."""
    if not isinstance(record, dict):
        raise TweetParseError(line_no, f"expected a JSON object, got {type(record).__name__}")
    tweet_id = _clean_text(record.get("id_str") or record.get("id")).strip()
    user = record.get("user")
    if not isinstance(user, dict):
        user = {}
    user_id = _clean_text(user.get("id_str") or user.get("id")).strip()
    if not user_id:
        raise MissingUserId(line_no, tweet_id)
    try:
        offset = _offset(user, line_no)
        coords = _coords(record, line_no)
    except TweetParseError as exc:
        exc.tweet_id = tweet_id
        raise
    return RawTweet(
        user_id=user_id,
        content=_content(record),
        description=_clean_text(user.get("description")),
        name=_clean_text(user.get("name")),
        uloc=_clean_text(user.get("location")),
        ulang=_clean_text(user.get("lang")),
        tlang=_clean_text(record.get("lang")),
        tz=_clean_text(user.get("time_zone")),
        offset=offset,
        coords=coords,
        tweet_id=tweet_id,
        line_no=line_no,
    )


def decode_line(line: str | bytes, line_no: int = 0) -> str:
    """Return *line* as text, rejecting bytes that are not valid UTF-8.

    Text read with ``errors="surrogateescape"`` carries undecodable bytes as
    lone surrogates; those are rejected the same way.

    Raises:
        TweetParseError: If the line is not valid UTF-8.
    """
    try:
        if isinstance(line, bytes):
            return line.decode("utf-8")
        line.encode("utf-8")
    except (UnicodeDecodeError, UnicodeEncodeError) as exc:
        raise TweetParseError(line_no, f"invalid UTF-8 at offset {exc.start}") from None
    return line


def parse_tweet(line: str | bytes, line_no: int = 0) -> RawTweet:
    """Parse one JSON-lines tweet record.

    Raises:
        TweetParseError: If the line is not UTF-8, not a JSON object, or a
            field is malformed.
        MissingUserId: If the record has no ``user.id_str``.
    """
    text = decode_line(line, line_no)
    try:
        record = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TweetParseError(line_no, f"invalid JSON: {exc.msg}") from exc
    return parse_record(record, line_no)


def iter_tweets(
    lines: Iterable[str] | Iterable[bytes], drops: DropLog | None = None
) -> Iterator[RawTweet]:
    """Parse lines, skipping blank ones; malformed lines go to *drops*."""
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            yield parse_tweet(line, line_no)
        except TweetParseError as exc:
            logger.debug("Line %d dropped: %s", line_no, exc.reason)
            if drops is not None:
                drops.append((line_no, exc.reason))


def read_tweets(path: Path, drops: DropLog | None = None) -> list[RawTweet]:
    """Read a JSON-lines tweet file."""
    with open(path, "rb") as fh:
        tweets = list(iter_tweets(fh, drops))
    logger.info("Read %d tweets from %s", len(tweets), path)
    return tweets


def read_labeled(path: Path) -> list[LabeledTweet]:
    """Read a labeled corpus written by :func:`write_labeled`.

    Raises:
        TweetParseError: On any malformed or unlabeled record.
    """
    labeled: list[LabeledTweet] = []
    with open(path, "rb") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            text = decode_line(line, line_no)
            try:
                record = json.loads(text)
            except json.JSONDecodeError as exc:
                raise TweetParseError(line_no, f"invalid JSON: {exc.msg}") from exc
            tweet = parse_record(record, line_no)
            code = str(record.get("country_code") or "").strip().upper()
            if not code:
                raise TweetParseError(line_no, "missing country_code in labeled corpus")
            labeled.append(LabeledTweet(tweet, code))
    logger.info("Read %d labeled tweets from %s", len(labeled), path)
    return labeled


def write_labeled(path: Path, labeled: Iterable[LabeledTweet]) -> int:
    """Write a labeled corpus atomically; returns the record count."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    count = 0
    with open(tmp, "w", encoding="utf-8") as fh:
        for item in labeled:
            fh.write(json.dumps(item.to_record(), ensure_ascii=False) + "\n")
            count += 1
    tmp.replace(path)
    return count


def write_drop_log(path: Path, drops: DropLog) -> None:
    """Write ``line_no<TAB>reason`` lines."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for line_no, reason in drops:
            fh.write(f"{line_no}\t{' '.join(reason.split())}\n")


# ---------------------------------------------------------------------------
# De-duplication
# ---------------------------------------------------------------------------


def _pick_key(seed: int, user_id: str, ordinal: int) -> bytes:
    return hashlib.blake2b(f"{seed}\x00{user_id}\x00{ordinal}".encode(), digest_size=16).digest()


def deduplicate_users(
    tweets: Iterable[RawTweet],
    seed: int,
    exclude_users: set[str] | frozenset[str] | None = None,
) -> list[RawTweet]:
    """Keep one uniformly chosen tweet per user.

    Each of a user's tweets gets a pseudo-random key derived from
    ``(seed, user_id, ordinal)``; the smallest key wins. The pick depends
    only on each user's own tweet sequence, so it is the same however the
    stream is chunked. Survivors keep the order of their user's first
    appearance. Users in *exclude_users* are removed entirely.
    """
    excluded = exclude_users or frozenset()
    chosen: dict[str, tuple[bytes, RawTweet]] = {}
    seen: Counter[str] = Counter()
    n_in = 0
    for tweet in tweets:
        n_in += 1
        uid = tweet.user_id
        if uid in excluded:
            continue
        key = _pick_key(seed, uid, seen[uid])
        seen[uid] += 1
        current = chosen.get(uid)
        if current is None or key < current[0]:
            chosen[uid] = (key, tweet)
    kept = [tweet for _, tweet in chosen.values()]
    logger.info("De-duplicated %d tweets to %d users", n_in, len(kept))
    return kept


# ---------------------------------------------------------------------------
# Labeling
# ---------------------------------------------------------------------------


def label_tweets(
    tweets: Sequence[RawTweet],
    geocoder: Callable[[GeoPoint], str | None],
    *,
    on_missing: str = "raise",
    drops: DropLog | None = None,
) -> tuple[list[LabeledTweet], int]:
    """Attach the geocoder's country to every tweet.

    Tweets resolving to Unknown are dropped and counted. A tweet without
    coordinates raises :class:`MissingCoordinates` unless *on_missing* is
    ``"drop"``, in which case it is dropped and counted too. Drop reasons
    are appended to *drops* keyed by the tweet's source line (its 1-based
    position when the line is unknown).
    """
    if on_missing not in ("raise", "drop"):
        raise ContractError(f"on_missing must be 'raise' or 'drop', got {on_missing!r}")
    labeled: list[LabeledTweet] = []
    dropped = 0
    for pos, tweet in enumerate(tweets, start=1):
        if tweet.coords is None:
            if on_missing == "raise":
                raise MissingCoordinates(tweet.tweet_id or f"#{pos}")
            reason = "no coordinates"
        else:
            country = geocoder(tweet.coords)
            if country is not None:
                labeled.append(LabeledTweet(tweet, country))
                continue
            reason = f"unknown country at ({tweet.coords.lat}, {tweet.coords.lon})"
        dropped += 1
        if drops is not None:
            drops.append((tweet.line_no or pos, reason))
    logger.info("Labeled %d tweets, dropped %d", len(labeled), dropped)
    return labeled, dropped


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitConfig:
    """How many random train/dev/test distributions to draw, and their sizes."""

    runs: int = 10
    train_frac: float = 0.50
    dev_frac: float = 0.25
    test_frac: float = 0.25
    seed: int = 0

    def validate(self) -> None:
        if self.runs < 1:
            raise SplitConfigError(f"runs={self.runs}")
        fracs = (self.train_frac, self.dev_frac, self.test_frac)
        if any(f <= 0 for f in fracs):
            raise SplitConfigError(f"non-positive fraction in {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise SplitConfigError(f"fractions sum to {sum(fracs)!r}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint index lists into a labeled corpus."""

    train: tuple[int, ...]
    dev: tuple[int, ...]
    test: tuple[int, ...]

    def to_dict(self) -> dict[str, list[int]]:
        return {"train": list(self.train), "dev": list(self.dev), "test": list(self.test)}


def make_splits(n: int, config: SplitConfig) -> list[DatasetSplit]:
    """Draw ``config.runs`` independent shuffles of ``range(n)``.

    Each shuffle gives ``floor(n * train_frac)`` train indices, the next
    ``floor(n * dev_frac)`` dev indices and the remainder as test. Index
    lists are sorted. Splits are a pure function of ``(n, config)``.
    """
    config.validate()
    if n < 4:
        raise ContractError(f"need at least 4 tweets to split, got {n}")
    n_train = math.floor(n * config.train_frac + 1e-9)
    n_dev = math.floor(n * config.dev_frac + 1e-9)
    splits = []
    for child in np.random.SeedSequence(config.seed).spawn(config.runs):
        order = np.random.default_rng(child).permutation(n)
        splits.append(
            DatasetSplit(
                train=tuple(sorted(int(i) for i in order[:n_train])),
                dev=tuple(sorted(int(i) for i in order[n_train : n_train + n_dev])),
                test=tuple(sorted(int(i) for i in order[n_train + n_dev :])),
            )
        )
    return splits


def save_splits(path: Path, n: int, config: SplitConfig, splits: Sequence[DatasetSplit]) -> None:
    write_json(
        path,
        {
            "format_version": FORMAT_VERSION,
            "n": n,
            "config": config.to_dict(),
            "runs": [s.to_dict() for s in splits],
        },
    )


def load_splits(path: Path) -> list[DatasetSplit]:
    data = read_json(path)
    return [
        DatasetSplit(tuple(r["train"]), tuple(r["dev"]), tuple(r["test"])) for r in data["runs"]
    ]


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------


def country_distribution(labeled: Iterable[LabeledTweet]) -> Counter[str]:
    """Tweet count per country."""
    return Counter(item.country for item in labeled)


def distribution_correlation(dist_a: Mapping[str, int], dist_b: Mapping[str, int]) -> float:
    """Pearson r between two country distributions (missing countries count 0).

    Raises:
        UndefinedCorrelation: If either distribution is constant.
    """
    universe = sorted(set(dist_a) | set(dist_b))
    a = np.array([dist_a.get(c, 0) for c in universe], dtype=np.float64)
    b = np.array([dist_b.get(c, 0) for c in universe], dtype=np.float64)
    for which, arr in (("a", a), ("b", b)):
        if len(arr) < 2 or np.all(arr == arr[0]):
            raise UndefinedCorrelation(which)
    r = float(np.corrcoef(a, b)[0, 1])
    return max(-1.0, min(1.0, r))


def topk_coverage(dist: Mapping[str, int], k: int) -> float:
    """Share of tweets that belong to the *k* most frequent countries."""
    total = sum(dist.values())
    if total == 0:
        return 0.0
    top = sorted(dist.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    return sum(count for _, count in top) / total


def write_distribution_csv(path: Path, dist: Mapping[str, int]) -> None:
    """Write ``country,count,share`` rows, most frequent first."""
    total = sum(dist.values()) or 1
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["country", "count", "share"])
        for code, count in sorted(dist.items(), key=lambda kv: (-kv[1], kv[0])):
            writer.writerow([code, count, f"{count / total:.6f}"])

