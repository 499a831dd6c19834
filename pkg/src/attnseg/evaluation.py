"""Segmentation metrics, corpus statistics, and the length/attention correlation.

Boundary and token precision/recall/F are micro-averaged over the corpus;
exact match is the fraction of utterances whose boundary set is perfect,
single-word utterances included. Boundaries are internal positions only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import EncodedPair
from .errors import DataError
from .segmentation import SegmentedSentence


@dataclass
class PRF:
    precision: float
    recall: float
    f1: float


@dataclass
class CorpusStats:
    tokens: int
    types: int
    avg_token_len: float
    avg_sent_len: float


@dataclass
class MetricsReport:
    boundary: PRF
    token: PRF
    exact: float
    stats: CorpusStats
    correlation: float | None = None

    def as_rows(self) -> list[tuple[str, object]]:
        """Report rows; P/R/F and X are scaled by 100, the rest stay raw."""
        rows: list[tuple[str, object]] = [
            ("BP", 100.0 * self.boundary.precision),
            ("BR", 100.0 * self.boundary.recall),
            ("BF", 100.0 * self.boundary.f1),
            ("WP", 100.0 * self.token.precision),
            ("WR", 100.0 * self.token.recall),
            ("WF", 100.0 * self.token.f1),
            ("X", 100.0 * self.exact),
            ("tokens", self.stats.tokens),
            ("types", self.stats.types),
            ("avg_token_len", self.stats.avg_token_len),
            ("avg_sent_len", self.stats.avg_sent_len),
        ]
        if self.correlation is not None:
            rows.append(("correlation", self.correlation))
        return rows


def _check_aligned(pred: list[SegmentedSentence], gold: list[SegmentedSentence]) -> None:
    if len(pred) != len(gold):
        raise DataError(f"{len(pred)} predicted vs {len(gold)} gold sentences")
    for i, (p, g) in enumerate(zip(pred, gold), start=1):
        if p.units != g.units:
            raise DataError(f"sentence {i}: unit streams differ between pred and gold")


def _ratio(numerator: int, denominator: int, other_total: int) -> float:
    """Micro-averaged ratio with the 0-denominator convention: a ratio over an
    empty set is 1 when the other side is empty corpus-wide too, else 0."""
    if denominator == 0:
        return 1.0 if other_total == 0 else 0.0
    return numerator / denominator


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2.0 * p * r / (p + r)


def boundary_prf(pred: list[SegmentedSentence], gold: list[SegmentedSentence]) -> PRF:
    """Precision/recall/F over internal boundary positions."""
    _check_aligned(pred, gold)
    hits = sum(len(p.boundaries & g.boundaries) for p, g in zip(pred, gold))
    n_pred = sum(len(p.boundaries) for p in pred)
    n_gold = sum(len(g.boundaries) for g in gold)
    p = _ratio(hits, n_pred, n_gold)
    r = _ratio(hits, n_gold, n_pred)
    return PRF(p, r, _f1(p, r))


def token_prf(pred: list[SegmentedSentence], gold: list[SegmentedSentence]) -> PRF:
    """Precision/recall/F over exactly matching token spans."""
    _check_aligned(pred, gold)
    hits = 0
    n_pred = 0
    n_gold = 0
    for p, g in zip(pred, gold):
        pred_spans = set(p.tokens)
        gold_spans = set(g.tokens)
        hits += len(pred_spans & gold_spans)
        n_pred += len(pred_spans)
        n_gold += len(gold_spans)
    p = _ratio(hits, n_pred, n_gold)
    r = _ratio(hits, n_gold, n_pred)
    return PRF(p, r, _f1(p, r))


def exact_match(pred: list[SegmentedSentence], gold: list[SegmentedSentence]) -> float:
    """Fraction of utterances with a perfect boundary set."""
    _check_aligned(pred, gold)
    if not pred:
        raise DataError("exact match over an empty corpus")
    return sum(p.boundaries == g.boundaries for p, g in zip(pred, gold)) / len(pred)


def corpus_stats(sentences: list[SegmentedSentence]) -> CorpusStats:
    """Token count, type count, average token length, average sentence length."""
    if not sentences:
        raise DataError("corpus statistics over an empty corpus")
    tokens = 0
    characters = 0
    types = set()
    for sent in sentences:
        words = sent.token_strings
        tokens += len(words)
        characters += sum(len(w) for w in words)
        types.update(words)
    return CorpusStats(tokens, len(types), characters / tokens, tokens / len(sentences))


def length_attention_correlation(matrices: list[np.ndarray],
                                 encoded: list[EncodedPair],
                                 include_eos: bool = True) -> float | None:
    """Pearson correlation between source-word length and received attention.

    One observation per source token instance: its character length against
    the column sum of attention over all decode steps (EOS row included).
    EOS columns count with length 1 unless excluded. Returns None when the
    correlation is undefined (fewer than 2 points or zero variance).
    """
    if len(matrices) != len(encoded):
        raise DataError(
            f"{len(matrices)} attention matrices but {len(encoded)} sentences")
    lengths = []
    masses = []
    for pair, matrix in zip(encoded, matrices):
        if matrix.shape[1] != pair.source_length:
            raise DataError("attention matrix width does not match source length")
        column_mass = matrix.sum(axis=0)
        take = pair.source_length if include_eos else pair.source_length - 1
        lengths.extend(pair.source_word_lengths[:take])
        masses.extend(column_mass[:take])
    if len(lengths) < 2:
        return None
    x = np.asarray(lengths)
    y = np.asarray(masses)
    if x.std() == 0.0 or y.std() == 0.0:
        return None
    return float(np.corrcoef(x, y)[0, 1])


def build_report(pred: list[SegmentedSentence], gold: list[SegmentedSentence],
                 correlation: float | None = None) -> MetricsReport:
    return MetricsReport(
        boundary=boundary_prf(pred, gold),
        token=token_prf(pred, gold),
        exact=exact_match(pred, gold),
        stats=corpus_stats(pred),
        correlation=correlation,
    )


def write_report(report: MetricsReport, path: str) -> None:
    """One 'NAME<TAB>value' line per metric, diff-stable."""
    with open(path, "w", encoding="utf-8") as handle:
        for name, value in report.as_rows():
            handle.write(f"{name}\t{value!r}\n")


def read_report(path: str) -> dict[str, float]:
    values: dict[str, float] = {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.rstrip("\n")
            if not line:
                continue
            name, _, raw = line.partition("\t")
            if not raw:
                raise DataError(f"{path}: bad report line {line!r}")
            values[name] = float(raw)
    return values
