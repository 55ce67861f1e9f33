"""Writer for the token-embedding interchange files the engine consumes.

Implements the wire grammar independently so this package talks to the
retrieval engine only through the file format.  All integers are
little-endian; see the engine's documentation for the full layout.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Sequence, Union

import numpy as np

CORPUS_MAGIC = b"LIMV"
QUERY_MAGIC = b"LIMQ"
FORMAT_VERSION = 1

FLAG_PUNCTUATION = 1
FLAG_SPECIAL = 2
FLAG_UNUSED = 4

_DTYPE_CODES = {"f16": 0, "f32": 1}
_PRUNING_CODES = {"none": 0, "first": 1, "idf": 2, "unused": 3, "attention": 4}
_INDEX_KIND_CODES = {"flat": 0, "ivf": 1}

_MANIFEST = struct.Struct("<IBBBBIBIQ")
_DOC_COUNT = struct.Struct("<Q")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_TOKEN_FIXED = struct.Struct("<IBIff")


@dataclass
class WireToken:
    """One token record as it appears on the wire."""

    token_id: int
    position: int
    embedding: np.ndarray
    surface: str = ""
    flags: int = 0
    idf: float = 0.0
    attention_importance: float = 0.0


@dataclass
class WireManifest:
    d: int
    dtype: str = "f32"
    normalized: bool = False
    query_expansion: bool = False
    pruning: str = "none"
    k: int = 0
    index_kind: str = "flat"
    n_clusters: int = 0
    seed: int = 0


def _embedding_bytes(vec: np.ndarray, dtype: str, item_id: str) -> bytes:
    arr = np.asarray(vec, dtype=np.float32).reshape(-1)
    if dtype == "f16":
        with np.errstate(over="ignore"):
            half = arr.astype("<f2")
        if (np.isinf(half.astype(np.float32)) & np.isfinite(arr)).any():
            raise ValueError(f"{item_id!r}: embedding value overflows f16")
        return half.tobytes()
    return arr.astype("<f4").tobytes()


def serialize(
    manifest: WireManifest,
    items: Sequence[tuple[str, Sequence[WireToken]]],
    magic: bytes,
) -> bytes:
    out = bytearray()
    out += magic
    out += _U32.pack(FORMAT_VERSION)
    out += _MANIFEST.pack(
        manifest.d,
        _DTYPE_CODES[manifest.dtype],
        int(manifest.normalized),
        int(manifest.query_expansion),
        _PRUNING_CODES[manifest.pruning],
        manifest.k,
        _INDEX_KIND_CODES[manifest.index_kind],
        manifest.n_clusters,
        manifest.seed,
    )
    out += _DOC_COUNT.pack(len(items))
    for item_id, tokens in items:
        if not tokens:
            raise ValueError(f"{item_id!r} has no tokens")
        id_bytes = item_id.encode("utf-8")
        out += _U16.pack(len(id_bytes))
        out += id_bytes
        out += _U32.pack(len(tokens))
        for tok in tokens:
            if len(tok.embedding) != manifest.d:
                raise ValueError(
                    f"{item_id!r}: embedding length {len(tok.embedding)} != d={manifest.d}"
                )
            surface_bytes = tok.surface.encode("utf-8")
            out += _TOKEN_FIXED.pack(
                tok.token_id,
                tok.flags,
                tok.position,
                float(tok.idf),
                float(tok.attention_importance),
            )
            out += _U16.pack(len(surface_bytes))
            out += surface_bytes
            out += _embedding_bytes(tok.embedding, manifest.dtype, item_id)
    return bytes(out)


def _write(payload: bytes, destination: Union[str, Path, BinaryIO]) -> int:
    if isinstance(destination, (str, Path)):
        Path(destination).write_bytes(payload)
    else:
        destination.write(payload)
    return len(payload)


def write_corpus_file(
    manifest: WireManifest,
    docs: Sequence[tuple[str, Sequence[WireToken]]],
    destination: Union[str, Path, BinaryIO],
) -> int:
    return _write(serialize(manifest, docs, CORPUS_MAGIC), destination)


def write_query_file(
    manifest: WireManifest,
    queries: Sequence[tuple[str, Sequence[WireToken]]],
    destination: Union[str, Path, BinaryIO],
) -> int:
    if manifest.query_expansion:
        for query_id, tokens in queries:
            if len(tokens) != 32:
                raise ValueError(
                    f"query {query_id!r} has {len(tokens)} tokens; expansion "
                    f"requires exactly 32"
                )
    return _write(serialize(manifest, queries, QUERY_MAGIC), destination)
