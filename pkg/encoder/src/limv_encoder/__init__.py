"""Transformer encoder adapter for the limv retrieval engine.

Produces the engine's binary interchange files: per-token projected
embeddings, last-layer attention importance, IDF weights, and token
flags, with optional query expansion and reserved-summary-token modes.
"""

from .adapter import EncoderAdapter, EncoderConfig
from .interchange import (
    FLAG_PUNCTUATION,
    FLAG_SPECIAL,
    FLAG_UNUSED,
    WireManifest,
    WireToken,
    write_corpus_file,
    write_query_file,
)

__version__ = "0.1.0"

__all__ = [
    "EncoderAdapter",
    "EncoderConfig",
    "FLAG_PUNCTUATION",
    "FLAG_SPECIAL",
    "FLAG_UNUSED",
    "WireManifest",
    "WireToken",
    "write_corpus_file",
    "write_query_file",
]
