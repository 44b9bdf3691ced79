"""Place-name gazetteer and the location-string baseline resolver.

The baseline maps a user's self-reported location string to a country by
looking it up in a gazetteer, either picking the most populous matching
place or the place whose name most resembles the query. Queries that are
empty or match nothing resolve to the majority country.

Relevance score of an entry (best over its canonical and alternate names):

- 3     normalized names are equal
- 2     one name's token sequence occurs contiguously in the other
- j     Jaccard overlap of the token sets, scaled into (0, 1)

Any shared token is a match; ties fall to population, then the name.
"""

from __future__ import annotations

import logging
import re
import unicodedata
from collections import defaultdict
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from geotweet.errors import ContractError, FormatError

logger = logging.getLogger(__name__)

EXACT_SCORE = 3.0
CONTAINMENT_SCORE = 2.0
_JACCARD_SCALE = 0.999  # keeps a full set overlap below the containment tier

_PUNCT_RE = re.compile(r"[\W_]+")


class LookupMode(Enum):
    POPULATION = "population"
    RELEVANCE = "relevance"


@dataclass(frozen=True)
class GazetteerEntry:
    """One named place."""

    canonical_name: str
    country: str
    population: int = 0
    alternate_names: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if not self.canonical_name.strip():
            raise ContractError("gazetteer entry needs a non-empty canonical_name")
        if self.population < 0:
            raise ContractError(f"negative population for '{self.canonical_name}'")


def normalize_name(text: str) -> str:
    """Case-fold, strip accents and punctuation, collapse whitespace."""
    decomposed = unicodedata.normalize("NFKD", text)
    stripped = "".join(c for c in decomposed if not unicodedata.combining(c))
    return " ".join(_PUNCT_RE.sub(" ", stripped.casefold()).split())


def _contains_run(haystack: tuple[str, ...], needle: tuple[str, ...]) -> bool:
    n = len(needle)
    if n == 0 or n > len(haystack):
        return False
    return any(haystack[i : i + n] == needle for i in range(len(haystack) - n + 1))


def name_score(query: str, name: str) -> float:
    """Relevance of one (already normalized) name to a normalized query."""
    if not query or not name:
        return 0.0
    if query == name:
        return EXACT_SCORE
    q, t = tuple(query.split()), tuple(name.split())
    if _contains_run(q, t) or _contains_run(t, q):
        return CONTAINMENT_SCORE
    qs, ts = set(q), set(t)
    inter = len(qs & ts)
    if inter == 0:
        return 0.0
    return _JACCARD_SCALE * inter / len(qs | ts)


class Gazetteer:
    """Immutable gazetteer with a token index for candidate retrieval."""

    def __init__(self, entries: Sequence[GazetteerEntry]):
        self.entries = list(entries)
        self._names: list[tuple[str, ...]] = []
        self._index: dict[str, set[int]] = defaultdict(set)
        for i, entry in enumerate(self.entries):
            raw_names = (entry.canonical_name, *entry.alternate_names)
            names = tuple(dict.fromkeys(n for n in map(normalize_name, raw_names) if n))
            self._names.append(names)
            for name in names:
                for token in name.split():
                    self._index[token].add(i)
        self._cache: dict[tuple[str, LookupMode], str | None] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def score(self, query: str, i: int) -> float:
        """Relevance of entry *i* to a normalized query."""
        return max((name_score(query, n) for n in self._names[i]), default=0.0)

    def candidates(self, query: str) -> list[tuple[int, float]]:
        """Matching entry indices with their scores for a normalized query."""
        ids: set[int] = set()
        for token in query.split():
            ids |= self._index.get(token, set())
        scored = ((i, self.score(query, i)) for i in sorted(ids))
        return [(i, s) for i, s in scored if s > 0.0]

    def resolve(self, query: str, mode: LookupMode) -> str | None:
        """Country of the best match for *query*, or ``None`` when nothing matches."""
        norm = normalize_name(query)
        if not norm:
            return None
        key = (norm, mode)
        if key in self._cache:
            return self._cache[key]

        found = self.candidates(norm)
        result: str | None = None
        if found:
            if mode is LookupMode.POPULATION:

                def rank(c: tuple[int, float]) -> tuple:
                    e = self.entries[c[0]]
                    return (-e.population, -c[1], e.canonical_name)

            else:

                def rank(c: tuple[int, float]) -> tuple:
                    e = self.entries[c[0]]
                    return (-c[1], -e.population, e.canonical_name)

            result = self.entries[min(found, key=rank)[0]].country
        self._cache[key] = result
        return result


def gazetteer_lookup(
    query: str,
    gaz: Gazetteer | Sequence[GazetteerEntry],
    mode: LookupMode | str,
    majority: str,
) -> str:
    """Resolve a location string to a country; total over all strings.

    Empty queries and queries with no match return *majority*.
    """
    if not isinstance(gaz, Gazetteer):
        gaz = Gazetteer(gaz)
    found = gaz.resolve(query, LookupMode(mode))
    return found if found is not None else majority


def load_gazetteer(path: Path) -> Gazetteer:
    """Load a TSV gazetteer: name, alternate names (comma-separated), iso2, population."""
    entries: list[GazetteerEntry] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 4:
                raise FormatError(str(path), f"line {line_no}: expected 4 tab-separated columns")
            name, alternates, code, population = cols
            try:
                pop = int(population) if population.strip() else 0
                entries.append(
                    GazetteerEntry(
                        canonical_name=name.strip(),
                        country=code.strip().upper(),
                        population=pop,
                        alternate_names=tuple(
                            a.strip() for a in alternates.split(",") if a.strip()
                        ),
                    )
                )
            except (ValueError, ContractError) as exc:
                raise FormatError(str(path), f"line {line_no}: {exc}") from exc
    logger.info("Loaded %d gazetteer entries from %s", len(entries), path)
    return Gazetteer(entries)
