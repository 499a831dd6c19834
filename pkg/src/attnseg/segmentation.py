"""Align-to-segment: forced decoding, argmax alignment, boundary derivation.

Each target unit is aligned to the source column holding the largest
attention weight; a word boundary is inserted between two adjacent units
exactly when they align to different source words. Boundary positions are
1-based: boundary p separates unit p from unit p+1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import EncodedPair, make_batch
from .errors import DataError
from .model import Model, forward_teacher_forced


@dataclass
class SegmentedSentence:
    units: list[str]
    boundaries: set[int] = field(default_factory=set)

    def __post_init__(self):
        n = len(self.units)
        bad = [p for p in self.boundaries if not 1 <= p <= n - 1]
        if bad:
            raise DataError(f"boundary positions {sorted(bad)} outside 1..{n - 1}")

    @property
    def tokens(self) -> list[tuple[int, int]]:
        """Token spans as 1-based inclusive (start, end) pairs."""
        spans = []
        start = 1
        for p in sorted(self.boundaries):
            spans.append((start, p))
            start = p + 1
        spans.append((start, len(self.units)))
        return spans

    @property
    def token_strings(self) -> list[str]:
        return ["".join(self.units[s - 1:e]) for s, e in self.tokens]

    def text(self) -> str:
        return " ".join(self.token_strings)


def parse_segmented_line(line: str) -> SegmentedSentence:
    """Read one space-segmented line back into units plus boundaries."""
    words = line.split()
    if not words:
        raise DataError("empty segmented line")
    units: list[str] = []
    boundaries: set[int] = set()
    for word in words:
        units.extend(word)
        boundaries.add(len(units))
    boundaries.discard(len(units))
    return SegmentedSentence(units, boundaries)


def force_decode_corpus(encoded: list[EncodedPair], model: Model,
                        batch_size: int = 64) -> list[np.ndarray]:
    """One attention matrix per sentence, in corpus order.

    Batched for throughput; padding invariance makes the result identical to
    per-sentence decoding. Rows cover every decode step including EOS; in
    length-bias mode they are the renormalized rows.
    """
    matrices: list[np.ndarray] = []
    for start in range(0, len(encoded), batch_size):
        indices = np.arange(start, min(start + batch_size, len(encoded)))
        batch = make_batch(encoded, indices)
        result = forward_teacher_forced(batch, model, training=False)
        matrices.extend(result.attention_matrices(batch))
    return matrices


def align(matrix: np.ndarray) -> np.ndarray:
    """Aligned source column per real unit row (EOS row excluded).

    Returns 0-based column indices; ties break to the lowest column.
    """
    m = np.asarray(matrix)
    if m.ndim != 2 or m.shape[0] < 2:
        raise DataError(f"attention matrix must have >= 2 rows, got {m.shape}")
    return m[:-1].argmax(axis=1)


def boundaries_from_alignment(alignment: np.ndarray) -> set[int]:
    """Boundary after unit p whenever units p and p+1 align to different words."""
    a = np.asarray(alignment)
    if a.size < 1:
        raise DataError("alignment must cover at least one unit")
    return {p for p in range(1, a.size) if a[p - 1] != a[p]}


def segment_sentence(units: list[str], matrix: np.ndarray) -> SegmentedSentence:
    if matrix.shape[0] != len(units) + 1:
        raise DataError(
            f"matrix rows ({matrix.shape[0]}) do not match units + EOS ({len(units) + 1})")
    return SegmentedSentence(list(units), boundaries_from_alignment(align(matrix)))


def segment_corpus(encoded: list[EncodedPair],
                   matrices: list[np.ndarray]) -> list[SegmentedSentence]:
    """Apply align-to-segment to every sentence."""
    if len(encoded) != len(matrices):
        raise DataError(
            f"{len(encoded)} sentences but {len(matrices)} attention matrices")
    return [segment_sentence(pair.units, matrix)
            for pair, matrix in zip(encoded, matrices)]


def write_segmented(sentences: list[SegmentedSentence], path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for sent in sentences:
            handle.write(sent.text() + "\n")


def load_segmented(path: str) -> list[SegmentedSentence]:
    with open(path, encoding="utf-8") as handle:
        lines = handle.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    sentences = []
    for lineno, line in enumerate(lines, start=1):
        try:
            sentences.append(parse_segmented_line(line))
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
    return sentences


def dump_attention(matrices: list[np.ndarray], path: str) -> None:
    """Per-sentence blocks: '# id I J' then I rows of J tab-separated values."""
    with open(path, "w", encoding="utf-8") as handle:
        for sent_id, matrix in enumerate(matrices):
            rows, cols = matrix.shape
            handle.write(f"# {sent_id} {rows} {cols}\n")
            for row in matrix:
                handle.write("\t".join(repr(v) for v in row) + "\n")


def load_attention(path: str) -> list[np.ndarray]:
    matrices = []
    with open(path, encoding="utf-8") as handle:
        lines = [line.rstrip("\n") for line in handle if line.strip()]
    pos = 0
    while pos < len(lines):
        header = lines[pos].split()
        if header[0] != "#" or len(header) != 4:
            raise DataError(f"{path}: bad attention block header: {lines[pos]!r}")
        rows, cols = int(header[2]), int(header[3])
        block = lines[pos + 1:pos + 1 + rows]
        if len(block) != rows:
            raise DataError(f"{path}: truncated attention block for id {header[1]}")
        matrix = np.array([[float(v) for v in line.split("\t")] for line in block])
        if matrix.shape != (rows, cols):
            raise DataError(f"{path}: attention block shape mismatch for id {header[1]}")
        matrices.append(matrix)
        pos += 1 + rows
    return matrices
