"""Synthetic parallel corpora with known gold segmentations.

Each source word maps injectively to a fixed target character string; gold
target lines are the concatenated images with spaces at word boundaries, so
the corpus-level length ratio is exactly 1 and segmentation is learnable.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

DEFAULT_ALPHABET = "abcdefghij"


def synth_corpus(
    sentences: int,
    source_vocab_size: int,
    seed: int,
    min_word_len: int = 2,
    max_word_len: int = 6,
    min_sent_len: int = 3,
    max_sent_len: int = 8,
    alphabet: str = DEFAULT_ALPHABET,
) -> tuple[list[str], list[str]]:
    """Returns (source lines, gold target lines), deterministic per seed."""
    if sentences < 1 or source_vocab_size < 1:
        raise ConfigError("synth: sentences and source_vocab_size must be >= 1")
    if not 1 <= min_word_len <= max_word_len:
        raise ConfigError("synth: need 1 <= min_word_len <= max_word_len")
    if not 1 <= min_sent_len <= max_sent_len:
        raise ConfigError("synth: need 1 <= min_sent_len <= max_sent_len")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 2])))

    words = [f"w{i}" for i in range(source_vocab_size)]
    images: dict[str, str] = {}
    taken = set()
    for word in words:
        while True:
            length = int(rng.integers(min_word_len, max_word_len + 1))
            image = "".join(alphabet[i] for i in rng.integers(0, len(alphabet), length))
            if image not in taken:
                taken.add(image)
                images[word] = image
                break

    source_lines = []
    target_lines = []
    for _ in range(sentences):
        length = int(rng.integers(min_sent_len, max_sent_len + 1))
        picks = [words[i] for i in rng.integers(0, len(words), length)]
        source_lines.append(" ".join(picks))
        target_lines.append(" ".join(images[w] for w in picks))
    return source_lines, target_lines


def write_lines(lines: list[str], path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for line in lines:
            handle.write(line + "\n")
