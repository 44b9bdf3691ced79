"""Streaming classification of tweet lines.

Each non-blank input line yields exactly one output line, in input order::

    tweet_id<TAB>country<TAB>probability
    tweet_id_or_line_no<TAB>ERROR<TAB>reason

Lines are processed in fixed-size batches, so memory stays bounded however
long the stream is. With several threads, a window of batches is classified
concurrently and emitted in order before the next window is read.
"""

from __future__ import annotations

import itertools
import logging
from collections.abc import Iterable, Iterator
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from geotweet.corpus import RawTweet, parse_tweet
from geotweet.errors import ContractError, FingerprintMismatch, GeotweetError, TweetParseError
from geotweet.features import Vocabulary, featurize_matrix
from geotweet.model import MaxEntModel, predict_matrix

logger = logging.getLogger(__name__)

DEFAULT_BATCH_SIZE = 512


def _one_line(text: str) -> str:
    return " ".join(text.split())


@dataclass
class StreamStats:
    lines: int = 0
    classified: int = 0
    errors: int = 0


class StreamClassifier:
    """A trained model bound to its vocabulary."""

    def __init__(
        self,
        model: MaxEntModel,
        vocab: Vocabulary,
        *,
        batch_size: int = DEFAULT_BATCH_SIZE,
        threads: int = 1,
    ):
        if model.vocab_fingerprint != vocab.fingerprint:
            raise FingerprintMismatch(model.vocab_fingerprint, vocab.fingerprint)
        if model.dims != vocab.total_dims:
            raise ContractError(f"model has {model.dims} dims, vocabulary {vocab.total_dims}")
        if batch_size < 1 or threads < 1:
            raise ContractError("batch_size and threads must be >= 1")
        self.model = model
        self.vocab = vocab
        self.batch_size = batch_size
        self.threads = threads
        self.stats = StreamStats()

    def classify_batch(self, batch: list[tuple[int, str | bytes]]) -> list[str]:
        """Output lines for ``(line_no, line)`` pairs, in the same order."""
        parsed: list[RawTweet | str] = []
        for line_no, line in batch:
            try:
                parsed.append(parse_tweet(line, line_no))
            except TweetParseError as exc:
                parsed.append(f"{exc.tweet_id or line_no}\tERROR\t{_one_line(exc.reason)}")
            except GeotweetError as exc:
                parsed.append(f"{line_no}\tERROR\t{_one_line(str(exc))}")

        tweets = [p for p in parsed if isinstance(p, RawTweet)]
        labels: list[str] = []
        probs = None
        if tweets:
            labels, probs = predict_matrix(self.model, featurize_matrix(tweets, self.vocab))

        out = []
        k = 0
        for (line_no, _), item in zip(batch, parsed):
            if isinstance(item, RawTweet):
                assert probs is not None
                p = float(probs[k].max())
                out.append(f"{item.tweet_id or line_no}\t{labels[k]}\t{p:.6f}")
                k += 1
            else:
                out.append(item)
        return out

    def classify(self, lines: Iterable[str] | Iterable[bytes]) -> Iterator[str]:
        """Lazily classify *lines*; updates :attr:`stats` as it goes.

        Byte lines are decoded one at a time, so invalid UTF-8 only fails
        its own line.
        """
        numbered = ((i, line) for i, line in enumerate(lines, start=1) if line.strip())
        batches = iter(lambda: list(itertools.islice(numbered, self.batch_size)), [])

        def emit(results: list[str]) -> Iterator[str]:
            for line in results:
                self.stats.lines += 1
                if "\tERROR\t" in line:
                    self.stats.errors += 1
                else:
                    self.stats.classified += 1
                yield line

        if self.threads == 1:
            for batch in batches:
                yield from emit(self.classify_batch(batch))
            return

        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            while True:
                window = list(itertools.islice(batches, self.threads))
                if not window:
                    break
                for results in pool.map(self.classify_batch, window):
                    yield from emit(results)


def classify_stream(
    model: MaxEntModel,
    vocab: Vocabulary,
    lines: Iterable[str] | Iterable[bytes],
    *,
    batch_size: int = DEFAULT_BATCH_SIZE,
    threads: int = 1,
    stats: StreamStats | None = None,
) -> Iterator[str]:
    """Classify tweet lines; see the module docstring for the output format.

    Raises:
        FingerprintMismatch: If *model* was not trained with *vocab*.
    """
    classifier = StreamClassifier(model, vocab, batch_size=batch_size, threads=threads)
    if stats is not None:
        classifier.stats = stats
    return classifier.classify(lines)
