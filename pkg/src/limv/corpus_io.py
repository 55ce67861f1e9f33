"""Domain types and the binary interchange format for token-level corpora.

A corpus file carries one embedding per document token plus the metadata
the rest of the pipeline needs (token id, flags, position, IDF weight,
attention importance).  The format is versioned, little-endian, and
byte-for-byte deterministic for identical logical input, so downstream
artifacts (pruned corpora, indexes, run files) are reproducible.

File grammar (all integers little-endian)::

    magic      4 bytes   "LIMV" corpus / "LIMQ" queries / "LIMI" index
    version    u32       currently 1
    manifest   d u32, dtype u8 (0=f16, 1=f32), normalized u8,
               query_expansion u8, pruning u8 (0 none, 1 first, 2 idf,
               3 unused, 4 attention), k u32, index_kind u8 (0 flat,
               1 ivf), n_clusters u32, seed u64
    doc_count  u64
    per doc    doc_id_len u16 + UTF-8 bytes, token_count u32, tokens
    per token  token_id u32, flags u8, position u32, idf f32,
               attention_importance f32, surface_len u16 + UTF-8 bytes,
               embedding d * dtype
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence, Union

import numpy as np

CORPUS_MAGIC = b"LIMV"
QUERY_MAGIC = b"LIMQ"
INDEX_MAGIC = b"LIMI"
FORMAT_VERSION = 1

DTYPE_CODES = {"f16": 0, "f32": 1}
PRUNING_CODES = {"none": 0, "first": 1, "idf": 2, "unused": 3, "attention": 4}
INDEX_KIND_CODES = {"flat": 0, "ivf": 1}

_DTYPE_NAMES = {v: k for k, v in DTYPE_CODES.items()}
_PRUNING_NAMES = {v: k for k, v in PRUNING_CODES.items()}
_INDEX_KIND_NAMES = {v: k for k, v in INDEX_KIND_CODES.items()}

BYTES_PER_DIM = {"f16": 2, "f32": 4}

_MANIFEST = struct.Struct("<IBBBBIBIQ")
_DOC_COUNT = struct.Struct("<Q")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_TOKEN_FIXED = struct.Struct("<IBIff")


class CorpusFormatError(ValueError):
    """Raised when a stream is not a recognizable corpus file."""


class CorpusCorruptionError(ValueError):
    """Raised when a corpus file ends or misparses mid-record."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class CorpusValidationError(ValueError):
    """Raised when decoded content violates a type invariant."""


class TokenFlags(enum.IntFlag):
    NONE = 0
    PUNCTUATION = 1
    SPECIAL = 2
    UNUSED = 4


_ALL_FLAGS = int(TokenFlags.PUNCTUATION | TokenFlags.SPECIAL | TokenFlags.UNUSED)


@dataclass(eq=False)
class TokenRecord:
    """One document token: vocabulary id, selection metadata, embedding.

    Floating-point fields are canonicalized to the single precision they
    occupy on the wire, so a written-then-read record equals the original.
    """

    token_id: int
    position: int
    embedding: np.ndarray
    surface: str = ""
    flags: int = TokenFlags.NONE
    idf: float = 0.0
    attention_importance: float = 0.0

    def __post_init__(self) -> None:
        self.embedding = np.asarray(self.embedding, dtype=np.float32)
        self.idf = float(np.float32(self.idf))
        self.attention_importance = float(np.float32(self.attention_importance))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TokenRecord):
            return NotImplemented
        return (
            self.token_id == other.token_id
            and self.position == other.position
            and self.surface == other.surface
            and int(self.flags) == int(other.flags)
            and self.idf == other.idf
            and self.attention_importance == other.attention_importance
            and np.array_equal(self.embedding, other.embedding)
        )

    def is_punctuation(self) -> bool:
        return bool(self.flags & TokenFlags.PUNCTUATION)

    def is_special(self) -> bool:
        return bool(self.flags & TokenFlags.SPECIAL)

    def is_unused(self) -> bool:
        return bool(self.flags & TokenFlags.UNUSED)


@dataclass
class EncodedDocument:
    """Ordered token records under an external document id."""

    doc_id: str
    tokens: list[TokenRecord]

    def matrix(self) -> np.ndarray:
        """Token embeddings stacked into a float32 (t, d) matrix."""
        return np.stack([t.embedding for t in self.tokens]).astype(np.float32, copy=False)


@dataclass
class EncodedQuery:
    """Ordered token records under an external query id."""

    query_id: str
    tokens: list[TokenRecord]

    def matrix(self) -> np.ndarray:
        return np.stack([t.embedding for t in self.tokens]).astype(np.float32, copy=False)


@dataclass
class IndexManifest:
    """Corpus-wide configuration recorded in every interchange file."""

    d: int = 128
    dtype: str = "f32"
    normalized: bool = False
    query_expansion: bool = False
    pruning: str = "none"
    k: int = 0
    index_kind: str = "flat"
    n_clusters: int = 0
    seed: int = 0

    def validate(self) -> None:
        if self.d < 1:
            raise CorpusValidationError(f"manifest d must be positive, got {self.d}")
        if self.dtype not in DTYPE_CODES:
            raise CorpusValidationError(f"unknown dtype {self.dtype!r}")
        if self.pruning not in PRUNING_CODES:
            raise CorpusValidationError(f"unknown pruning method {self.pruning!r}")
        if self.pruning != "none" and self.k < 1:
            raise CorpusValidationError(
                f"pruning {self.pruning!r} requires k >= 1, got {self.k}"
            )
        if self.index_kind not in INDEX_KIND_CODES:
            raise CorpusValidationError(f"unknown index kind {self.index_kind!r}")
        if self.index_kind == "ivf" and self.n_clusters < 1:
            raise CorpusValidationError(
                f"ivf index requires n_clusters >= 1, got {self.n_clusters}"
            )
        if not 0 <= self.seed < 2**64:
            raise CorpusValidationError("seed must fit in 64 bits")

    def bytes_per_dim(self) -> int:
        return BYTES_PER_DIM[self.dtype]


def validate_document(doc: EncodedDocument, d: int) -> None:
    """Check every TokenRecord invariant; raises CorpusValidationError."""
    if not doc.tokens:
        raise CorpusValidationError(f"document {doc.doc_id!r} has no tokens")
    for i, tok in enumerate(doc.tokens):
        if tok.position != i:
            raise CorpusValidationError(
                f"document {doc.doc_id!r}: token positions must be contiguous "
                f"from 0, found {tok.position} at index {i}"
            )
        if not 0 <= tok.token_id < 2**32:
            raise CorpusValidationError(
                f"document {doc.doc_id!r}: token_id {tok.token_id} out of range"
            )
        if not 0 <= int(tok.flags) <= _ALL_FLAGS:
            raise CorpusValidationError(
                f"document {doc.doc_id!r}: unknown flag bits {int(tok.flags):#x}"
            )
        if not tok.idf >= 0:
            raise CorpusValidationError(
                f"document {doc.doc_id!r}: idf must be >= 0, got {tok.idf}"
            )
        if not tok.attention_importance >= 0:
            raise CorpusValidationError(
                f"document {doc.doc_id!r}: attention_importance must be >= 0, "
                f"got {tok.attention_importance}"
            )
        emb = np.asarray(tok.embedding)
        if emb.ndim != 1 or emb.shape[0] != d:
            raise CorpusValidationError(
                f"document {doc.doc_id!r}: embedding of length "
                f"{emb.shape[0] if emb.ndim == 1 else emb.shape} does not match "
                f"manifest d={d}"
            )


def _encode_embedding(embedding: np.ndarray, manifest: IndexManifest, doc_id: str) -> bytes:
    arr = np.asarray(embedding, dtype=np.float32).reshape(-1)
    if manifest.dtype == "f16":
        with np.errstate(over="ignore"):  # overflow rejected explicitly below
            half = arr.astype("<f2")  # IEEE 754 round-to-nearest-even
        overflowed = np.isinf(half.astype(np.float32)) & np.isfinite(arr)
        if overflowed.any():
            raise CorpusValidationError(
                f"document {doc_id!r}: embedding value "
                f"{arr[overflowed][0]} not representable in f16"
            )
        return half.tobytes()
    return arr.astype("<f4").tobytes()


def _decode_embedding(raw: bytes, manifest: IndexManifest) -> np.ndarray:
    if manifest.dtype == "f16":
        return np.frombuffer(raw, dtype="<f2").astype(np.float32)
    return np.frombuffer(raw, dtype="<f4").astype(np.float32, copy=True)


def _serialize(
    items: Sequence, manifest: IndexManifest, magic: bytes, id_attr: str
) -> bytes:
    manifest.validate()
    seen_ids: set[str] = set()
    out = bytearray()
    out += magic
    out += _U32.pack(FORMAT_VERSION)
    out += _MANIFEST.pack(
        manifest.d,
        DTYPE_CODES[manifest.dtype],
        int(manifest.normalized),
        int(manifest.query_expansion),
        PRUNING_CODES[manifest.pruning],
        manifest.k,
        INDEX_KIND_CODES[manifest.index_kind],
        manifest.n_clusters,
        manifest.seed,
    )
    out += _DOC_COUNT.pack(len(items))
    for item in items:
        item_id = getattr(item, id_attr)
        if item_id in seen_ids:
            raise CorpusValidationError(f"duplicate id {item_id!r}")
        seen_ids.add(item_id)
        validate_document(EncodedDocument(item_id, item.tokens), manifest.d)
        if magic == QUERY_MAGIC and manifest.query_expansion and len(item.tokens) != 32:
            raise CorpusValidationError(
                f"query {item_id!r} has {len(item.tokens)} tokens; expansion "
                f"requires exactly 32"
            )
        id_bytes = item_id.encode("utf-8")
        out += _U16.pack(len(id_bytes))
        out += id_bytes
        out += _U32.pack(len(item.tokens))
        for tok in item.tokens:
            surface_bytes = tok.surface.encode("utf-8")
            out += _TOKEN_FIXED.pack(
                tok.token_id,
                int(tok.flags),
                tok.position,
                float(tok.idf),
                float(tok.attention_importance),
            )
            out += _U16.pack(len(surface_bytes))
            out += surface_bytes
            out += _encode_embedding(tok.embedding, manifest, item_id)
    return bytes(out)


def _open_sink(destination: Union[str, Path, BinaryIO]):
    if isinstance(destination, (str, Path)):
        return open(destination, "wb"), True
    return destination, False


def _read_all(source: Union[str, Path, BinaryIO, bytes]) -> bytes:
    if isinstance(source, bytes):
        return source
    if isinstance(source, (str, Path)):
        return Path(source).read_bytes()
    return source.read()


def write_corpus(
    docs: Sequence[EncodedDocument],
    manifest: IndexManifest,
    destination: Union[str, Path, BinaryIO],
) -> int:
    """Serialize documents to a corpus file; returns the byte count written."""
    payload = _serialize(docs, manifest, CORPUS_MAGIC, "doc_id")
    sink, owned = _open_sink(destination)
    try:
        sink.write(payload)
    finally:
        if owned:
            sink.close()
    return len(payload)


def write_queries(
    queries: Sequence[EncodedQuery],
    manifest: IndexManifest,
    destination: Union[str, Path, BinaryIO],
) -> int:
    """Serialize queries; same grammar as a corpus, magic "LIMQ"."""
    payload = _serialize(queries, manifest, QUERY_MAGIC, "query_id")
    sink, owned = _open_sink(destination)
    try:
        sink.write(payload)
    finally:
        if owned:
            sink.close()
    return len(payload)


class _Cursor:
    """Offset-tracking reader so corruption errors can name a byte offset."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        end = self.offset + n
        if end > len(self.buf):
            raise CorpusCorruptionError(
                f"truncated file: needed {n} bytes for {what}", self.offset
            )
        chunk = self.buf[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: struct.Struct, what: str):
        return fmt.unpack(self.take(fmt.size, what))


def _parse_manifest(cur: _Cursor) -> IndexManifest:
    (d, dtype_c, normalized, expansion, pruning_c, k, kind_c, n_clusters, seed) = cur.unpack(
        _MANIFEST, "manifest"
    )
    if dtype_c not in _DTYPE_NAMES:
        raise CorpusFormatError(f"unknown dtype code {dtype_c}")
    if pruning_c not in _PRUNING_NAMES:
        raise CorpusFormatError(f"unknown pruning code {pruning_c}")
    if kind_c not in _INDEX_KIND_NAMES:
        raise CorpusFormatError(f"unknown index kind code {kind_c}")
    manifest = IndexManifest(
        d=d,
        dtype=_DTYPE_NAMES[dtype_c],
        normalized=bool(normalized),
        query_expansion=bool(expansion),
        pruning=_PRUNING_NAMES[pruning_c],
        k=k,
        index_kind=_INDEX_KIND_NAMES[kind_c],
        n_clusters=n_clusters,
        seed=seed,
    )
    manifest.validate()
    return manifest


def _parse_items(buf: bytes, expected_magic: bytes):
    cur = _Cursor(buf)
    magic = cur.take(4, "magic")
    if magic != expected_magic:
        raise CorpusFormatError(
            f"bad magic {magic!r}; expected {expected_magic.decode('ascii')}"
        )
    (version,) = cur.unpack(_U32, "version")
    if version != FORMAT_VERSION:
        raise CorpusFormatError(f"unsupported format version {version}")
    manifest = _parse_manifest(cur)
    (doc_count,) = cur.unpack(_DOC_COUNT, "document count")
    emb_bytes = manifest.d * manifest.bytes_per_dim()
    items = []
    for _ in range(doc_count):
        (id_len,) = cur.unpack(_U16, "id length")
        item_id = cur.take(id_len, "id").decode("utf-8")
        (token_count,) = cur.unpack(_U32, "token count")
        tokens = []
        for _ in range(token_count):
            token_id, flags, position, idf, attention = cur.unpack(
                _TOKEN_FIXED, f"token record of {item_id!r}"
            )
            (surface_len,) = cur.unpack(_U16, "surface length")
            surface = cur.take(surface_len, "surface").decode("utf-8")
            raw = cur.take(emb_bytes, f"embedding of {item_id!r}")
            tokens.append(
                TokenRecord(
                    token_id=token_id,
                    position=position,
                    embedding=_decode_embedding(raw, manifest),
                    surface=surface,
                    flags=TokenFlags(flags),
                    idf=idf,
                    attention_importance=attention,
                )
            )
        items.append((item_id, tokens))
    return manifest, items, cur


def read_corpus(
    source: Union[str, Path, BinaryIO, bytes]
) -> tuple[IndexManifest, list[EncodedDocument]]:
    """Parse and validate a corpus file; returns (manifest, documents)."""
    buf = _read_all(source)
    manifest, items, cur = _parse_items(buf, CORPUS_MAGIC)
    if cur.offset != len(buf):
        raise CorpusCorruptionError("trailing data after last document", cur.offset)
    docs = []
    seen: set[str] = set()
    for doc_id, tokens in items:
        if doc_id in seen:
            raise CorpusValidationError(f"duplicate doc_id {doc_id!r}")
        seen.add(doc_id)
        doc = EncodedDocument(doc_id, tokens)
        validate_document(doc, manifest.d)
        docs.append(doc)
    return manifest, docs


def read_queries(
    source: Union[str, Path, BinaryIO, bytes]
) -> tuple[IndexManifest, list[EncodedQuery]]:
    """Parse and validate a query file (magic "LIMQ")."""
    buf = _read_all(source)
    manifest, items, cur = _parse_items(buf, QUERY_MAGIC)
    if cur.offset != len(buf):
        raise CorpusCorruptionError("trailing data after last query", cur.offset)
    queries = []
    seen: set[str] = set()
    for query_id, tokens in items:
        if query_id in seen:
            raise CorpusValidationError(f"duplicate query_id {query_id!r}")
        seen.add(query_id)
        query = EncodedQuery(query_id, tokens)
        validate_document(EncodedDocument(query_id, tokens), manifest.d)
        if manifest.query_expansion and len(tokens) != 32:
            raise CorpusValidationError(
                f"query {query_id!r} has {len(tokens)} tokens; the expansion "
                f"flag requires exactly 32"
            )
        queries.append(query)
    return manifest, queries


def renumber_positions(tokens: Iterable[TokenRecord]) -> list[TokenRecord]:
    """Re-emit records with contiguous positions, preserving order.

    Needed when a pruned token subset (which keeps original positions) is
    written back out as a corpus file, where positions must be contiguous.
    """
    return [replace(tok, position=i) for i, tok in enumerate(tokens)]
