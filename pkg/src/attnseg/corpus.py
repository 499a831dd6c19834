"""Parallel corpus loading, vocabularies, and padded masked mini-batches.

Source sentences are whitespace-tokenized words plus a trailing EOS; target
sentences are unsegmented unit streams (single characters by default, or
symbols from an inventory file) framed by BOS and EOS. Boundary positions are
1-based: boundary p means "break after the p-th unit".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED_SYMBOLS = ("<pad>", "<bos>", "<eos>", "<unk>")


class Vocabulary:
    """Bijective symbol/index map with fixed reserved indices 0..3."""

    def __init__(self, symbols: list[str] | None = None):
        self._symbols: list[str] = list(RESERVED_SYMBOLS)
        self._index: dict[str, int] = {s: i for i, s in enumerate(self._symbols)}
        if symbols is not None:
            for s in symbols:
                self.add(s)

    def add(self, symbol: str) -> int:
        idx = self._index.get(symbol)
        if idx is None:
            idx = len(self._symbols)
            self._symbols.append(symbol)
            self._index[symbol] = idx
        return idx

    def index(self, symbol: str) -> int:
        return self._index.get(symbol, UNK)

    def symbol(self, idx: int) -> str:
        return self._symbols[idx]

    def __len__(self) -> int:
        return len(self._symbols)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._index

    def non_reserved(self) -> list[str]:
        return self._symbols[len(RESERVED_SYMBOLS):]


@dataclass
class SentencePair:
    """One parallel sentence: raw tokens plus an optional gold segmentation."""

    source_tokens: list[str]
    units: list[str]
    gold_boundaries: set[int] | None = None


@dataclass
class EncodedPair:
    """Index-encoded sentence pair ready for batching.

    ``source`` ends with EOS; ``target`` is framed by BOS and EOS. The decoder
    therefore runs len(target) - 1 steps, predicting every unit plus EOS.
    """

    source: np.ndarray
    target: np.ndarray
    source_word_lengths: np.ndarray
    units: list[str]
    gold_boundaries: set[int] | None = None
    unk_count: int = 0

    @property
    def source_length(self) -> int:
        return len(self.source)

    @property
    def target_steps(self) -> int:
        return len(self.target) - 1


@dataclass
class Batch:
    """Padded, masked group of encoded pairs.

    ``target`` keeps the BOS..EOS framing and is one column wider than
    ``target_mask``, which covers the decode steps. Masks are 1 exactly on
    non-pad positions and row sums equal the stored lengths.
    """

    source: np.ndarray
    source_mask: np.ndarray
    source_lengths: np.ndarray
    target: np.ndarray
    target_mask: np.ndarray
    target_lengths: np.ndarray
    word_lengths: np.ndarray
    indices: np.ndarray

    @property
    def size(self) -> int:
        return self.source.shape[0]


def _read_lines(path: str) -> list[str]:
    try:
        with open(path, encoding="utf-8") as handle:
            raw = handle.read()
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not valid UTF-8 ({exc})") from None
    lines = raw.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def tokenize_units(text: str, inventory: list[str] | None = None) -> list[str]:
    """Split an unsegmented stream into units.

    Default is one unit per Unicode character. With an inventory, greedy
    longest-match against the inventory symbols, falling back to a single
    character where nothing matches.
    """
    if inventory is None:
        return list(text)
    by_length = sorted(set(inventory), key=len, reverse=True)
    units = []
    pos = 0
    while pos < len(text):
        for sym in by_length:
            if text.startswith(sym, pos):
                units.append(sym)
                pos += len(sym)
                break
        else:
            units.append(text[pos])
            pos += 1
    return units


def load_symbol_inventory(path: str) -> list[str]:
    symbols = [line for line in _read_lines(path) if line]
    if not symbols:
        raise DataError(f"{path}: empty symbol inventory")
    return symbols


def load_parallel(
    source_path: str,
    target_path: str,
    gold: bool = False,
    inventory: list[str] | None = None,
) -> list[SentencePair]:
    """Load aligned source/target files into sentence pairs.

    With ``gold=True`` the target lines are space-segmented references: the
    spaces are stripped to produce the unit stream and recorded as gold
    boundary positions.
    """
    src_lines = _read_lines(source_path)
    tgt_lines = _read_lines(target_path)
    if len(src_lines) != len(tgt_lines):
        raise DataError(
            f"line-count mismatch: {source_path} has {len(src_lines)} lines, "
            f"{target_path} has {len(tgt_lines)}")
    pairs = []
    for lineno, (src, tgt) in enumerate(zip(src_lines, tgt_lines), start=1):
        tokens = src.split()
        if not tokens:
            raise DataError(f"{source_path}:{lineno}: empty source line")
        if not tgt.strip():
            raise DataError(f"{target_path}:{lineno}: empty target line")
        if gold:
            words = tgt.split()
            units: list[str] = []
            boundaries: set[int] = set()
            for word in words:
                word_units = tokenize_units(word, inventory)
                units.extend(word_units)
                boundaries.add(len(units))
            boundaries.discard(len(units))  # utterance edge is not a boundary
            pairs.append(SentencePair(tokens, units, boundaries))
        else:
            stream = tgt.strip()
            if any(ch.isspace() for ch in stream):
                raise DataError(
                    f"{target_path}:{lineno}: unsegmented target contains whitespace "
                    "(use --gold for segmented references)")
            pairs.append(SentencePair(tokens, tokenize_units(stream, inventory)))
    return pairs


def build_vocabularies(pairs: list[SentencePair]) -> tuple[Vocabulary, Vocabulary]:
    """Vocabularies over source words and target units, indexed by first occurrence."""
    if not pairs:
        raise DataError("cannot build vocabularies from an empty corpus")
    src_vocab = Vocabulary()
    tgt_vocab = Vocabulary()
    for pair in pairs:
        for token in pair.source_tokens:
            src_vocab.add(token)
        for unit in pair.units:
            tgt_vocab.add(unit)
    return src_vocab, tgt_vocab


def encode_pairs(
    pairs: list[SentencePair],
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
) -> list[EncodedPair]:
    """Index-encode pairs, appending EOS on the source and framing the target.

    The EOS source token gets word length 1. Symbols unseen at training time
    map to UNK; the per-pair UNK count is kept for reporting.
    """
    encoded = []
    for pair in pairs:
        src_idx = [src_vocab.index(t) for t in pair.source_tokens] + [EOS]
        tgt_idx = [BOS] + [tgt_vocab.index(u) for u in pair.units] + [EOS]
        lengths = [len(t) for t in pair.source_tokens] + [1]
        unk = sum(1 for i in src_idx if i == UNK) + sum(1 for i in tgt_idx if i == UNK)
        encoded.append(EncodedPair(
            source=np.array(src_idx, dtype=np.int64),
            target=np.array(tgt_idx, dtype=np.int64),
            source_word_lengths=np.array(lengths, dtype=np.float64),
            units=list(pair.units),
            gold_boundaries=set(pair.gold_boundaries) if pair.gold_boundaries is not None else None,
            unk_count=unk,
        ))
    return encoded


def make_batch(pairs: list[EncodedPair], indices: np.ndarray) -> Batch:
    """Pad a group of encoded pairs into one masked batch."""
    group = [pairs[i] for i in indices]
    b = len(group)
    j_max = max(p.source_length for p in group)
    i_max = max(p.target_steps for p in group)

    source = np.full((b, j_max), PAD, dtype=np.int64)
    source_mask = np.zeros((b, j_max))
    word_lengths = np.zeros((b, j_max))
    target = np.full((b, i_max + 1), PAD, dtype=np.int64)
    target_mask = np.zeros((b, i_max))
    source_lengths = np.zeros(b, dtype=np.int64)
    target_lengths = np.zeros(b, dtype=np.int64)

    for row, pair in enumerate(group):
        j = pair.source_length
        i = pair.target_steps
        source[row, :j] = pair.source
        source_mask[row, :j] = 1.0
        word_lengths[row, :j] = pair.source_word_lengths
        target[row, :i + 1] = pair.target
        target_mask[row, :i] = 1.0
        source_lengths[row] = j
        target_lengths[row] = i

    return Batch(source, source_mask, source_lengths, target, target_mask,
                 target_lengths, word_lengths, np.asarray(indices, dtype=np.int64))


def epoch_batches(
    pairs: list[EncodedPair],
    batch_size: int,
    seed: int,
    epoch: int,
) -> list[Batch]:
    """Shuffle keyed by (seed, epoch), stable-sort by target length, chunk, pad."""
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, epoch])))
    order = rng.permutation(len(pairs))
    order = order[np.argsort([pairs[i].target_steps for i in order], kind="stable")]
    return [make_batch(pairs, order[start:start + batch_size])
            for start in range(0, len(order), batch_size)]
