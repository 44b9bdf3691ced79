"""Shared test fixtures for geotweet.

The synthetic world has three square countries on the equator band:

    XA  lon 0..10,  lat 0..10, with a lake (hole) at lon 4..6, lat 4..6
    XB  lon 10..20, lat 0..10, sharing XA's eastern edge
    XC  lon 30..40, lat 0..10, with an extra vertex at (40, 5)

Labeled tweets are separable by time zone: every country has its own zone.
"""

import json
from collections.abc import Callable
from pathlib import Path

import pytest

from geotweet.config import ExperimentConfig
from geotweet.corpus import LabeledTweet, RawTweet, SplitConfig, write_labeled
from geotweet.features import make_combination
from geotweet.gazetteer import Gazetteer, GazetteerEntry
from geotweet.geo import CountryTable, GeoPoint, load_country_table
from geotweet.model import TrainConfig

CENTROIDS_CSV = "iso2,lat,lon\nXA,2.0,2.0\nXB,5.0,15.0\nXC,5.0,35.0\n"

_SQUARE_A = [[0, 0], [10, 0], [10, 10], [0, 10], [0, 0]]
_LAKE_A = [[4, 4], [6, 4], [6, 6], [4, 6], [4, 4]]
_SQUARE_B = [[10, 0], [20, 0], [20, 10], [10, 10], [10, 0]]
_SQUARE_C = [[30, 0], [40, 0], [40, 5], [40, 10], [30, 10], [30, 0]]

BOUNDARIES = {
    "type": "FeatureCollection",
    "features": [
        {
            "type": "Feature",
            "properties": {"iso2": "XA"},
            "geometry": {"type": "Polygon", "coordinates": [_SQUARE_A, _LAKE_A]},
        },
        {
            "type": "Feature",
            "properties": {"iso2": "XB"},
            "geometry": {"type": "Polygon", "coordinates": [_SQUARE_B]},
        },
        {
            "type": "Feature",
            "properties": {"iso2": "XC"},
            "geometry": {"type": "MultiPolygon", "coordinates": [[_SQUARE_C]]},
        },
    ],
}

# country -> (time zone, language, user location, home point, content words)
PROFILES = {
    "XA": ("Zone/A", "en", "Alphaville", (2.0, 2.0), "alpha beach sun"),
    "XB": ("Zone/B", "fr", "Betatown", (5.0, 15.0), "beta river rain"),
    "XC": ("Zone/C", "de", "Gammaburg", (5.0, 35.0), "gamma hills snow"),
}
COUNTS = {"XA": 24, "XB": 16, "XC": 8}


def tweet_record(
    user_id: str,
    *,
    text: str = "",
    lat: float | None = None,
    lon: float | None = None,
    tz: str = "",
    lang: str = "",
    location: str = "",
    tweet_id: str = "",
) -> dict:
    """A raw tweet object in the JSON-lines schema."""
    record: dict = {
        "id_str": tweet_id,
        "text": text,
        "lang": lang,
        "user": {
            "id_str": user_id,
            "name": f"user {user_id}",
            "description": "",
            "location": location,
            "lang": lang,
            "time_zone": tz,
            "utc_offset": None,
        },
    }
    if lat is not None and lon is not None:
        record["coordinates"] = {"type": "Point", "coordinates": [lon, lat]}
    return record


@pytest.fixture
def geo_files(tmp_path: Path) -> tuple[Path, Path]:
    centroids = tmp_path / "centroids.csv"
    centroids.write_text(CENTROIDS_CSV, encoding="utf-8")
    boundaries = tmp_path / "countries.geojson"
    boundaries.write_text(json.dumps(BOUNDARIES), encoding="utf-8")
    return centroids, boundaries


@pytest.fixture
def table(geo_files) -> CountryTable:
    return load_country_table(*geo_files)


@pytest.fixture
def make_tweet() -> Callable[..., RawTweet]:
    def _make(user_id: str = "u1", **fields) -> RawTweet:
        return RawTweet(user_id=user_id, **fields)

    return _make


@pytest.fixture
def labeled_corpus() -> list[LabeledTweet]:
    """48 tweets (24 XA, 16 XB, 8 XC), one per user, interleaved by country."""
    items: list[LabeledTweet] = []
    for i in range(max(COUNTS.values())):
        for country, count in COUNTS.items():
            if i >= count:
                continue
            tz, lang, uloc, (lat, lon), words = PROFILES[country]
            uid = f"{country.lower()}{i}"
            tweet = RawTweet(
                user_id=uid,
                tweet_id=f"t-{uid}",
                content=f"hello {words} {i % 3}",
                description=f"{words.split()[0]} fan",
                name=f"{uid} person",
                uloc=uloc,
                ulang=lang,
                tlang=lang,
                tz=tz,
                offset={"XA": 0, "XB": 3600, "XC": 7200}[country],
                coords=GeoPoint(lat, lon),
            )
            items.append(LabeledTweet(tweet, country))
    return items


@pytest.fixture
def gazetteer() -> Gazetteer:
    return Gazetteer(
        [
            GazetteerEntry("Alphaville", "XA", 1000),
            GazetteerEntry("Betatown", "XB", 500, ("Beta Town",)),
            GazetteerEntry("Gammaburg", "XC", 200),
            GazetteerEntry("Springfield", "XB", 5000),
            GazetteerEntry("Springfield Heights", "XA", 10),
            GazetteerEntry("São Paulo", "XC", 12000),
        ]
    )


@pytest.fixture
def experiment_config(tmp_path: Path) -> ExperimentConfig:
    return ExperimentConfig(
        out=tmp_path / "sweep",
        split=SplitConfig(runs=2, seed=7),
        train=TrainConfig(max_epochs=20),
        l2_grid=(0.0, 0.1),
        combinations=[make_combination(["tz"]), make_combination(["content"])],
    )


@pytest.fixture
def corpus_file(tmp_path: Path, labeled_corpus) -> Path:
    path = tmp_path / "corpus.labeled.jsonl"
    write_labeled(path, labeled_corpus)
    return path
