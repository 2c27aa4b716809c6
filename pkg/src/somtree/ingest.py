"""Dataset loaders: MNIST-style IDX files, token dictionaries, parallel corpora.

Sentence vectors are plain rank sequences: each token maps to its position
in a frequency-sorted dictionary, padded/truncated to a fixed length with -1.
Unknown tokens also map to -1, so the vector space stays closed under
vocabulary growth; the per-sentence unknown count is reported alongside for
diagnostics.
"""

from __future__ import annotations

import csv
import gzip
import struct
import unicodedata
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .core import Record, RecordStore
from .errors import BadMagic, CountMismatch, LineCountMismatch, TruncatedFile

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
SENTENCE_LENGTH = 200


def _open_binary(path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def load_idx(images_path, labels_path) -> RecordStore:
    """Load an IDX image/label pair into records with raw 0-255 pixel features."""
    with _open_binary(images_path) as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise TruncatedFile("image file shorter than its 16-byte header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IMAGE_MAGIC:
            raise BadMagic(f"image file magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}")
        pixels = fh.read(count * rows * cols)
        if len(pixels) < count * rows * cols:
            raise TruncatedFile(
                f"image file declares {count} items but holds {len(pixels)} pixel bytes"
            )
    with _open_binary(labels_path) as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise TruncatedFile("label file shorter than its 8-byte header")
        magic, label_count = struct.unpack(">II", header)
        if magic != LABEL_MAGIC:
            raise BadMagic(f"label file magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}")
        labels = fh.read(label_count)
        if len(labels) < label_count:
            raise TruncatedFile(
                f"label file declares {label_count} items but holds {len(labels)}"
            )
    if count != label_count:
        raise CountMismatch(f"{count} images vs {label_count} labels")

    features = (
        np.frombuffer(pixels, dtype=np.uint8).reshape(count, rows * cols).astype(np.float64)
    )
    label_arr = np.frombuffer(labels, dtype=np.uint8)
    return RecordStore(
        ids=np.arange(count, dtype=np.int64),
        features=features,
        labels=[str(v) for v in label_arr],
        responses=np.full(count, np.nan),
        weights=np.ones(count, dtype=np.int64),
        payloads=[None] * count,
    )


def _strip_punct(piece: str) -> str:
    start, end = 0, len(piece)
    while start < end and unicodedata.category(piece[start]).startswith("P"):
        start += 1
    while end > start and unicodedata.category(piece[end - 1]).startswith("P"):
        end -= 1
    return piece[start:end]


def tokenize(sentence: str) -> list[str]:
    """Lowercase, split on whitespace, trim surrounding punctuation."""
    out = []
    for piece in sentence.lower().split():
        piece = _strip_punct(piece)
        if piece:
            out.append(piece)
    return out


@dataclass(frozen=True)
class TokenDictionary:
    """Frequency-ranked vocabulary; rank 0 is the most frequent token."""

    tokens: tuple[tuple[str, int], ...]
    index_of: dict[str, int]

    def __len__(self) -> int:
        return len(self.tokens)

    def rank_of(self, token: str) -> int:
        """Rank of a token, -1 when unknown (same as padding)."""
        return self.index_of.get(token, -1)


def build_token_dictionary(sentences) -> TokenDictionary:
    """Count tokens over all sentences; rank by frequency, ties by first sight."""
    counts: Counter[str] = Counter()
    first_seen: dict[str, int] = {}
    position = 0
    for sentence in sentences:
        for token in tokenize(sentence):
            counts[token] += 1
            if token not in first_seen:
                first_seen[token] = position
            position += 1
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], first_seen[kv[0]]))
    return TokenDictionary(
        tokens=tuple(ordered),
        index_of={tok: rank for rank, (tok, _) in enumerate(ordered)},
    )


def update_dictionary(dictionary: TokenDictionary, new_sentences) -> TokenDictionary:
    """Fold new sentences in without disturbing existing ranks.

    Already-known tokens keep their rank (their counts still grow); tokens
    never seen before are appended after the current vocabulary, ordered by
    frequency among themselves. Vectors built earlier therefore stay valid.
    """
    counts: Counter[str] = Counter()
    first_seen: dict[str, int] = {}
    position = 0
    for sentence in new_sentences:
        for token in tokenize(sentence):
            counts[token] += 1
            if token not in first_seen:
                first_seen[token] = position
            position += 1
    updated = [
        (tok, freq + counts.get(tok, 0)) for tok, freq in dictionary.tokens
    ]
    fresh = [
        (tok, freq) for tok, freq in counts.items() if tok not in dictionary.index_of
    ]
    fresh.sort(key=lambda kv: (-kv[1], first_seen[kv[0]]))
    ordered = updated + fresh
    return TokenDictionary(
        tokens=tuple(ordered),
        index_of={tok: rank for rank, (tok, _) in enumerate(ordered)},
    )


def vectorize_sentence(
    dictionary: TokenDictionary, sentence: str, length: int = SENTENCE_LENGTH
) -> np.ndarray:
    """Fixed-length vector of token ranks; -1 pads, truncates past ``length``.

    Unknown tokens become -1 in place.
    """
    values = np.full(length, -1, dtype=np.int64)
    for i, token in enumerate(tokenize(sentence)[:length]):
        values[i] = dictionary.rank_of(token)
    return values


def count_unknown_tokens(dictionary: TokenDictionary, sentence: str) -> int:
    return sum(1 for tok in tokenize(sentence) if tok not in dictionary.index_of)


@dataclass
class PairCorpus:
    """Aligned sentence pairs plus per-language dictionaries."""

    pairs: list[tuple[str, str]]
    source_dict: TokenDictionary
    target_dict: TokenDictionary


def _read_lines(path) -> list[str]:
    with open(path, encoding="utf-8", newline=None) as fh:
        return [line.rstrip("\n").rstrip("\r") for line in fh]


def load_parallel_corpus(source_path, target_path) -> PairCorpus:
    source_lines = _read_lines(source_path)
    target_lines = _read_lines(target_path)
    if len(source_lines) != len(target_lines):
        raise LineCountMismatch(
            f"{len(source_lines)} source lines vs {len(target_lines)} target lines"
        )
    return make_pair_corpus(list(zip(source_lines, target_lines)))


def make_pair_corpus(pairs: list[tuple[str, str]]) -> PairCorpus:
    return PairCorpus(
        pairs=pairs,
        source_dict=build_token_dictionary(src for src, _ in pairs),
        target_dict=build_token_dictionary(tgt for _, tgt in pairs),
    )


def source_records(corpus: PairCorpus, length: int = SENTENCE_LENGTH) -> list[Record]:
    """One record per pair: source-sentence rank vector, payload = pair index."""
    return [
        Record(
            id=i,
            features=vectorize_sentence(corpus.source_dict, src, length).astype(np.float64),
            payload=struct.pack("<Q", i),
        )
        for i, (src, _) in enumerate(corpus.pairs)
    ]


def save_dictionary(dictionary: TokenDictionary, path) -> None:
    """CSV dump: rank,token,frequency."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for rank, (token, freq) in enumerate(dictionary.tokens):
            writer.writerow([rank, token, freq])


def load_dictionary(path) -> TokenDictionary:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rank_s, token, freq_s in csv.reader(fh):
            rows.append((int(rank_s), token, int(freq_s)))
    rows.sort(key=lambda r: r[0])
    return TokenDictionary(
        tokens=tuple((token, freq) for _, token, freq in rows),
        index_of={token: rank for rank, token, _ in rows},
    )
