"""Lexicon-constrained copying network for character-level abstractive summarization."""

__version__ = "0.1.0"
