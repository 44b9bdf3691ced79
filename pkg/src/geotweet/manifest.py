"""Atomic JSON/CSV persistence and the sweep directory layout.

Layout of one sweep directory::

    <out>/manifest.json            config echo, code version, config and input hashes
    <out>/manifest.json.bak        the previous manifest when a sweep is re-run
    <out>/results/<combo>/<run>.json
    <out>/summary.csv              mean test metrics per combination
    <out>/rankings.json            combinations ranked by micro, macro, mse
    <out>/best_per_country.csv     best combination per country by F1
    <out>/confusion.csv            confusion summed over all records
    <out>/oracle_union.json

All writes go to a ``.tmp`` file first and are renamed into place. Nothing
written here carries a timestamp, so equal inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import shutil
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any

from geotweet.errors import FormatError

FORMAT_VERSION = 1


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def write_json(path: Path, data: dict[str, Any], *, backup: bool = False) -> None:
    """Write *data* as pretty JSON atomically.

    Args:
        path: Destination file.
        data: JSON-serializable mapping; should carry ``format_version``.
        backup: Copy an existing file to ``<name>.bak`` first.
    """
    if backup and path.exists():
        shutil.copy2(path, path.with_suffix(path.suffix + ".bak"))
    _atomic_write_text(path, json.dumps(data, indent=2, ensure_ascii=False, sort_keys=True) + "\n")


def read_json(path: Path) -> dict[str, Any]:
    """Read a JSON artifact and check its format version.

    Raises:
        FormatError: If the file is missing, not a JSON object, or from a
            newer format version.
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FormatError(str(path), "file does not exist") from None
    except json.JSONDecodeError as exc:
        raise FormatError(str(path), f"invalid JSON ({exc.msg})") from exc
    if not isinstance(data, dict):
        raise FormatError(str(path), "expected a JSON object")
    version = data.get("format_version")
    if not isinstance(version, int) or version > FORMAT_VERSION:
        raise FormatError(str(path), f"unsupported format_version {version!r}")
    return data


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """Write a CSV file atomically with ``\\n`` line endings."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    _atomic_write_text(path, buf.getvalue())


def read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# Sweep layout
# ---------------------------------------------------------------------------


def manifest_path(out: Path) -> Path:
    return out / "manifest.json"


def record_path(out: Path, combo: str, run: int) -> Path:
    """Path of the result record for one (combination, run) job."""
    return out / "results" / combo / f"{run}.json"


def summary_path(out: Path) -> Path:
    return out / "summary.csv"


def rankings_path(out: Path) -> Path:
    return out / "rankings.json"


def best_per_country_path(out: Path) -> Path:
    return out / "best_per_country.csv"


def confusion_path(out: Path) -> Path:
    return out / "confusion.csv"


def oracle_union_path(out: Path) -> Path:
    return out / "oracle_union.json"


def iter_records(out: Path) -> list[dict[str, Any]]:
    """All stored run records, ordered by (combination directory, run)."""
    records = []
    results = out / "results"
    if not results.exists():
        return records
    for combo_dir in sorted(p for p in results.iterdir() if p.is_dir()):
        files = sorted(combo_dir.glob("*.json"), key=lambda p: int(p.stem))
        records.extend(read_json(f) for f in files)
    return records
