"""Bilingual unsupervised word segmentation with attentional encoder-decoders.

Trains a word-to-character translation model on a parallel corpus, force
decodes it to extract attention matrices, and inserts a target word boundary
wherever two adjacent units attend to different source words. Ships the
baseline system plus a word-length attention bias and an auxiliary loss that
controls the number of produced segments.
"""

__version__ = "0.1.0"
