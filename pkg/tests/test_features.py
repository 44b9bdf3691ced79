"""Tests for geotweet.features."""

import random
from pathlib import Path

import numpy as np
import pytest

from geotweet.errors import ContractError, EmptyTrainingSet, FormatError
from geotweet.features import (
    CANONICAL_ORDER,
    MISSING_TOKEN,
    FeatureKind,
    Vocabulary,
    build_vocabulary,
    combination_name,
    enumerate_combinations,
    feature_availability,
    featurize,
    featurize_matrix,
    make_combination,
    parse_combination,
    singleton_combinations,
    tokenize,
)

K = FeatureKind


class TestTokenize:
    def test_basic(self):
        assert tokenize("Hello, World!") == ["hello", "world"]

    def test_keeps_hashtags_and_mentions(self):
        assert tokenize("#Fun with @Bob") == ["#fun", "with", "@bob"]

    def test_drops_urls(self):
        assert tokenize("look http://t.co/abc and https://x.y/z?q=1 now") == ["look", "and", "now"]

    def test_unicode_words(self):
        assert tokenize("Zürich ist schön") == ["zürich", "ist", "schön"]

    def test_empty(self):
        assert tokenize("") == []
        assert tokenize("  ...  ") == []

    def test_underscore_splits_words_but_not_handles(self):
        assert tokenize("new_york") == ["new", "york"]
        assert tokenize("@new_york #big_apple") == ["@new_york", "#big_apple"]
        assert tokenize("__init__") == ["init"]

    def test_idempotent(self):
        rng = random.Random(3)
        alphabet = "abcXYZ éüß_#@-.,!/:0123456789\t\U0001f600"
        samples = ["Hello, World!", "#Fun with @Bob", "see http://t.co/x now", "a#b@c__d"]
        samples += ["".join(rng.choice(alphabet) for _ in range(40)) for _ in range(300)]
        for text in samples:
            tokens = tokenize(text)
            assert tokenize(" ".join(tokens)) == tokens


class TestCombinations:
    def test_enumerates_255(self):
        combos = enumerate_combinations()
        assert len(combos) == 255
        assert len(set(combos)) == 255

    def test_order_by_size(self):
        sizes = [len(c) for c in enumerate_combinations()]
        assert sizes == sorted(sizes)
        assert enumerate_combinations()[:8] == singleton_combinations()

    def test_canonical_order_inside_combination(self):
        for combo in enumerate_combinations():
            ranks = [CANONICAL_ORDER.index(k) for k in combo]
            assert ranks == sorted(ranks)

    def test_name_is_alphabetical(self):
        assert combination_name((K.TZ, K.CONTENT)) == "content-tz"
        assert combination_name((K.ULOC,)) == "uloc"

    def test_parse_inverts_name(self):
        for combo in enumerate_combinations():
            assert parse_combination(combination_name(combo)) == combo

    def test_parse_alternative_separators(self):
        assert parse_combination("tz+content") == parse_combination("content, tz")

    def test_make_dedupes(self):
        assert make_combination(["tz", K.TZ, "uloc"]) == (K.ULOC, K.TZ)

    def test_unknown_kind(self):
        with pytest.raises(ContractError, match="unknown feature kind"):
            make_combination(["geo"])

    def test_empty(self):
        with pytest.raises(ContractError):
            make_combination([])


class TestVocabulary:
    def test_min_df_prunes_rare_tokens(self, make_tweet):
        tweets = [
            make_tweet("1", content="common rare1"),
            make_tweet("2", content="common rare2"),
        ]
        vocab = build_vocabulary(tweets, ["content"], min_df=2)
        assert vocab.blocks[K.CONTENT] == {"common": 0}

    def test_document_frequency_not_term_frequency(self, make_tweet):
        tweets = [make_tweet("1", content="echo echo echo"), make_tweet("2", content="other")]
        vocab = build_vocabulary(tweets, ["content"], min_df=2)
        assert vocab.total_dims == 0

    def test_default_min_df(self, make_tweet):
        tweets = [make_tweet("1", uloc="Alphaville", content="once")]
        vocab = build_vocabulary(tweets, ["uloc", "content"])
        assert "alphaville" in vocab.blocks[K.ULOC]
        assert vocab.blocks[K.CONTENT] == {}

    def test_categorical_keeps_every_value(self, make_tweet):
        tweets = [make_tweet("1", tz="Zone/A"), make_tweet("2", tz="Zone/B")]
        vocab = build_vocabulary(tweets, ["tz"], min_df=5)
        assert vocab.blocks[K.TZ] == {"Zone/A": 0, "Zone/B": 1}

    def test_offset_is_categorical(self, make_tweet):
        tweets = [make_tweet("1", offset=-10800), make_tweet("2", offset=0), make_tweet("3")]
        vocab = build_vocabulary(tweets, ["offset"])
        assert set(vocab.blocks[K.OFFSET]) == {"-10800", "0"}

    def test_blocks_independent_of_combination(self, labeled_corpus):
        small = build_vocabulary(labeled_corpus, ["tz"])
        large = build_vocabulary(labeled_corpus, ["tz", "content", "uloc"])
        assert small.blocks[K.TZ] == large.blocks[K.TZ]
        assert large.total_dims == sum(large.block_size(k) for k in large.kinds)

    def test_block_offsets_follow_canonical_order(self, labeled_corpus):
        vocab = build_vocabulary(labeled_corpus, ["content", "uloc", "tz"])
        assert vocab.kinds == (K.ULOC, K.TZ, K.CONTENT)
        assert vocab.block_offsets[K.ULOC] == 0
        assert vocab.block_offsets[K.TZ] == vocab.block_size(K.ULOC)

    def test_empty_training_set(self):
        with pytest.raises(EmptyTrainingSet):
            build_vocabulary([], ["tz"])

    def test_bad_min_df(self, make_tweet):
        with pytest.raises(ContractError):
            build_vocabulary([make_tweet("1")], ["content"], min_df=0)

    def test_missing_indicator(self, make_tweet):
        tweets = [make_tweet("1", tz="Zone/A"), make_tweet("2")]
        vocab = build_vocabulary(tweets, ["tz"], missing_indicator=True)
        assert MISSING_TOKEN in vocab.blocks[K.TZ]
        v = featurize(make_tweet("3"), ["tz"], vocab)
        assert v.pairs() == [(vocab.index_of(K.TZ, MISSING_TOKEN), 1.0)]


class TestVocabularyPersistence:
    def test_text_roundtrip(self, labeled_corpus):
        vocab = build_vocabulary(labeled_corpus, ["uloc", "tz", "content"], binary=False)
        loaded = Vocabulary.from_text(vocab.to_text())
        assert loaded.blocks == vocab.blocks
        assert loaded.kinds == vocab.kinds
        assert loaded.binary is False
        assert loaded.fingerprint == vocab.fingerprint

    def test_save_load(self, tmp_path: Path, labeled_corpus):
        vocab = build_vocabulary(labeled_corpus, ["name"])
        vocab.save(tmp_path / "vocab.tsv")
        assert Vocabulary.load(tmp_path / "vocab.tsv").fingerprint == vocab.fingerprint

    def test_fingerprint_differs_between_vocabularies(self, labeled_corpus):
        a = build_vocabulary(labeled_corpus, ["tz"])
        b = build_vocabulary(labeled_corpus[:2], ["tz"])
        c = build_vocabulary(labeled_corpus, ["ulang"])
        assert len({a.fingerprint, b.fingerprint, c.fingerprint}) == 3

    def test_wrong_version(self, labeled_corpus):
        text = build_vocabulary(labeled_corpus, ["tz"]).to_text().replace("\tv1", "\tv9", 1)
        with pytest.raises(FormatError, match="version"):
            Vocabulary.from_text(text)

    def test_tampered_total_dims(self, labeled_corpus):
        vocab = build_vocabulary(labeled_corpus, ["tz"])
        text = vocab.to_text().replace(f"#total_dims\t{vocab.total_dims}", "#total_dims\t99")
        with pytest.raises(FormatError, match="total_dims"):
            Vocabulary.from_text(text)

    def test_sparse_indices_rejected(self):
        text = "#geotweet-vocab\tv1\n#kinds\ttz\n#total_dims\t1\ntz\tZone/A\t3\n"
        with pytest.raises(FormatError, match="dense"):
            Vocabulary.from_text(text)

    def test_missing_file(self, tmp_path: Path):
        with pytest.raises(FormatError):
            Vocabulary.load(tmp_path / "nope.tsv")


class TestFeaturize:
    def test_indices_increasing_and_in_range(self, labeled_corpus):
        vocab = build_vocabulary(labeled_corpus, [k.value for k in CANONICAL_ORDER])
        for item in labeled_corpus:
            v = featurize(item, vocab.kinds, vocab)
            assert np.all(np.diff(v.indices) > 0)
            assert np.all((v.indices >= 0) & (v.indices < vocab.total_dims))
            assert np.all(v.values > 0)
            assert v.dims == vocab.total_dims

    def test_binary_values(self, make_tweet):
        tweets = [make_tweet("1", content="go go go")]
        vocab = build_vocabulary(tweets, ["content"], min_df=1)
        assert featurize(tweets[0], ["content"], vocab).pairs() == [(0, 1.0)]

    def test_count_values(self, make_tweet):
        tweets = [make_tweet("1", content="go go go")]
        vocab = build_vocabulary(tweets, ["content"], min_df=1, binary=False)
        assert featurize(tweets[0], ["content"], vocab).pairs() == [(0, 3.0)]

    def test_unknown_tokens_ignored(self, make_tweet):
        vocab = build_vocabulary([make_tweet("1", content="known")], ["content"], min_df=1)
        v = featurize(make_tweet("2", content="unseen words known"), ["content"], vocab)
        assert v.pairs() == [(0, 1.0)]

    def test_empty_fields_give_empty_vector(self, make_tweet, labeled_corpus):
        vocab = build_vocabulary(labeled_corpus, ["tz", "content"])
        v = featurize(make_tweet("x"), ["tz", "content"], vocab)
        assert len(v) == 0
        assert v.dims == vocab.total_dims

    def test_kinds_must_match_vocabulary(self, labeled_corpus):
        vocab = build_vocabulary(labeled_corpus, ["tz"])
        with pytest.raises(ContractError, match="vocabulary built for tz"):
            featurize(labeled_corpus[0], ["tz", "content"], vocab)

    def test_kind_order_does_not_matter(self, labeled_corpus):
        vocab = build_vocabulary(labeled_corpus, ["tz", "content"])
        a = featurize(labeled_corpus[0], ["content", "tz"], vocab)
        b = featurize(labeled_corpus[0], ["tz", "content"], vocab)
        assert a.pairs() == b.pairs()

    def test_matrix_rows_match_vectors(self, labeled_corpus):
        vocab = build_vocabulary(labeled_corpus, ["uloc", "content"])
        X = featurize_matrix(labeled_corpus, vocab)
        assert X.shape == (len(labeled_corpus), vocab.total_dims)
        row = X.getrow(5)
        v = featurize(labeled_corpus[5], vocab.kinds, vocab)
        assert list(row.indices) == list(v.indices)

    def test_combined_vector_concatenates_single_kind_vectors(self, labeled_corpus):
        kinds = [k.value for k in CANONICAL_ORDER]
        combined = build_vocabulary(labeled_corpus, kinds)
        for item in labeled_corpus[:10]:
            full = featurize(item, combined.kinds, combined).pairs()
            for kind in combined.kinds:
                single = build_vocabulary(labeled_corpus, [kind])
                offset = combined.block_offsets[kind]
                lo, hi = offset, offset + combined.block_size(kind)
                part = [(i - offset, x) for i, x in full if lo <= i < hi]
                assert part == featurize(item, [kind], single).pairs()


class TestAvailability:
    def test_fractions(self, make_tweet):
        tweets = [make_tweet("1", tz="Zone/A", offset=0), make_tweet("2", content="hi")]
        avail = feature_availability(tweets)
        assert avail["tz"] == 0.5
        assert avail["offset"] == 0.5
        assert avail["content"] == 0.5
        assert avail["uloc"] == 0.0
        assert list(avail) == [k.value for k in CANONICAL_ORDER]

    def test_empty(self):
        assert set(feature_availability([]).values()) == {0.0}
