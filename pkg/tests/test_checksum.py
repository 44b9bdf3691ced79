"""Tests for geotweet.checksum."""

import hashlib
from pathlib import Path

import pytest

from geotweet.checksum import CHUNK_SIZE, sha256_file, sha256_json, sha256_text


class TestSha256:
    def test_file_matches_hashlib(self, tmp_path: Path):
        data = b"x" * (CHUNK_SIZE * 2 + 17)
        path = tmp_path / "blob.bin"
        path.write_bytes(data)
        assert sha256_file(path) == hashlib.sha256(data).hexdigest()

    def test_empty_file(self, tmp_path: Path):
        path = tmp_path / "empty"
        path.write_bytes(b"")
        assert sha256_file(path) == hashlib.sha256(b"").hexdigest()

    def test_missing_file(self, tmp_path: Path):
        with pytest.raises(FileNotFoundError):
            sha256_file(tmp_path / "absent")

    def test_text_is_utf8(self):
        assert sha256_text("São Paulo") == hashlib.sha256("São Paulo".encode()).hexdigest()

    def test_file_and_text_agree(self, tmp_path: Path):
        path = tmp_path / "c.yaml"
        path.write_text("threads: 2\n", encoding="utf-8")
        assert sha256_file(path) == sha256_text("threads: 2\n")


class TestSha256Json:
    def test_key_order_irrelevant(self):
        assert sha256_json({"a": 1, "b": [1, 2]}) == sha256_json({"b": [1, 2], "a": 1})

    def test_values_matter(self):
        assert sha256_json({"a": 1}) != sha256_json({"a": 2})

    def test_paths_hash_as_strings(self):
        assert sha256_json({"p": Path("/x/y")}) == sha256_json({"p": "/x/y"})
