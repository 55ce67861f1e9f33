"""Runs a pretrained transformer and emits token-embedding corpora.

For every document the adapter stores one projected embedding per token,
the total last-layer attention each token receives, corpus IDF weights,
and punctuation/special/reserved-token flags.  Two encoding modes mirror
the retrieval engine's pruning strategies: queries can be padded with
mask tokens to a fixed width of 32 (soft expansion), and documents can be
prefixed with reserved vocabulary tokens whose contextual embeddings
summarize the text.
"""

from __future__ import annotations

import logging
import math
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence, Union

import numpy as np
import torch

from .interchange import (
    FLAG_PUNCTUATION,
    FLAG_SPECIAL,
    FLAG_UNUSED,
    WireManifest,
    WireToken,
    write_corpus_file,
    write_query_file,
)

logger = logging.getLogger("limv_encoder")

QUERY_WIDTH = 32


@dataclass
class EncoderConfig:
    """Model selection plus the encoding-mode switches.

    ``model`` may be a local checkpoint directory or a registry name.  If
    the checkpoint directory contains ``projection.npy`` (hidden x d) that
    trained head is used; otherwise a seeded random projection stands in,
    which keeps the pipeline runnable without trained retrieval weights.
    """

    model: str = "microsoft/MiniLM-L12-H384-uncased"
    d: int = 128
    normalize: bool = False
    query_expansion: bool = False
    unused_token_count: int = 0
    max_length: int = 256
    batch_size: int = 8
    device: str = "cpu"
    seed: int = 0
    dtype: str = "f32"

    def validate(self) -> None:
        if self.d < 1:
            raise ValueError(f"projection dimension must be positive, got {self.d}")
        if self.unused_token_count < 0:
            raise ValueError("unused_token_count must be >= 0")
        if self.max_length < 4 + self.unused_token_count:
            raise ValueError("max_length leaves no room for text tokens")
        if self.dtype not in ("f16", "f32"):
            raise ValueError(f"unknown dtype {self.dtype!r}")


class EncoderAdapter:
    """Tokenize, encode, and write interchange files for one checkpoint."""

    def __init__(self, config: EncoderConfig):
        config.validate()
        self.config = config
        try:
            from transformers import AutoModel, AutoTokenizer

            self.tokenizer = AutoTokenizer.from_pretrained(config.model)
            self.model = AutoModel.from_pretrained(
                config.model, attn_implementation="eager"
            )
        except Exception as exc:
            raise RuntimeError(f"cannot load model {config.model!r}: {exc}") from exc
        self.model.eval()
        self.model.to(config.device)
        hidden = int(self.model.config.hidden_size)
        if config.d > hidden:
            raise ValueError(
                f"projection dimension {config.d} exceeds encoder hidden size {hidden}"
            )
        self.projection = self._load_projection(hidden)
        self.special_ids = set(self.tokenizer.all_special_ids)
        self.unused_ids = self._resolve_unused_ids()
        torch.manual_seed(config.seed)

    def _load_projection(self, hidden: int) -> np.ndarray:
        path = Path(self.config.model) / "projection.npy"
        if path.is_file():
            projection = np.load(path).astype(np.float32)
            if projection.shape != (hidden, self.config.d):
                raise ValueError(
                    f"projection head shape {projection.shape} does not match "
                    f"(hidden={hidden}, d={self.config.d})"
                )
            logger.info("using trained projection head from %s", path)
            return projection
        rng = np.random.default_rng(self.config.seed)
        logger.info(
            "no projection head found; using a seed-%d random projection",
            self.config.seed,
        )
        return (rng.standard_normal((hidden, self.config.d)) / math.sqrt(hidden)).astype(
            np.float32
        )

    def _resolve_unused_ids(self) -> list[int]:
        count = self.config.unused_token_count
        if count == 0:
            return []
        names = [f"[unused{i}]" for i in range(count)]
        ids = self.tokenizer.convert_tokens_to_ids(names)
        unk = self.tokenizer.unk_token_id
        missing = [name for name, tid in zip(names, ids) if tid == unk or tid is None]
        if missing:
            raise ValueError(
                f"tokenizer lacks reserved vocabulary entries: {missing[:3]}..."
            )
        return list(ids)

    # ------------------------------------------------------------------
    # token id assembly

    def _body_ids(self, text: str, budget: int) -> tuple[list[int], bool]:
        ids = self.tokenizer(text, add_special_tokens=False)["input_ids"]
        return ids[:budget], len(ids) > budget

    def _doc_ids(self, text: str) -> tuple[list[int], list[int], bool]:
        """Returns (ids, unused positions, truncated)."""
        cls_id = self.tokenizer.cls_token_id
        sep_id = self.tokenizer.sep_token_id
        reserve = len(self.unused_ids)
        body, truncated = self._body_ids(text, self.config.max_length - 2 - reserve)
        ids = [cls_id] + self.unused_ids + body + [sep_id]
        unused_positions = list(range(1, 1 + reserve))
        return ids, unused_positions, truncated

    def _query_ids(self, text: str) -> tuple[list[int], bool]:
        cls_id = self.tokenizer.cls_token_id
        sep_id = self.tokenizer.sep_token_id
        if self.config.query_expansion:
            body, truncated = self._body_ids(text, QUERY_WIDTH - 2)
            ids = [cls_id] + body + [sep_id]
            ids += [self.tokenizer.mask_token_id] * (QUERY_WIDTH - len(ids))
            return ids, truncated
        body, truncated = self._body_ids(text, self.config.max_length - 2)
        return [cls_id] + body + [sep_id], truncated

    # ------------------------------------------------------------------
    # model forward

    def _encode_batch(self, id_lists: Sequence[list[int]]):
        """Yields (embeddings (L, d) float32, importance (L,)) per item."""
        pad_id = self.tokenizer.pad_token_id or 0
        width = max(len(ids) for ids in id_lists)
        input_ids = torch.full((len(id_lists), width), pad_id, dtype=torch.long)
        mask = torch.zeros((len(id_lists), width), dtype=torch.long)
        for row, ids in enumerate(id_lists):
            input_ids[row, : len(ids)] = torch.tensor(ids, dtype=torch.long)
            mask[row, : len(ids)] = 1
        with torch.no_grad():
            out = self.model(
                input_ids=input_ids.to(self.config.device),
                attention_mask=mask.to(self.config.device),
                output_attentions=True,
            )
        hidden = out.last_hidden_state.cpu().numpy()
        attention = out.attentions[-1].cpu().numpy()
        for row, ids in enumerate(id_lists):
            length = len(ids)
            embeddings = hidden[row, :length].astype(np.float32) @ self.projection
            if self.config.normalize:
                norms = np.linalg.norm(embeddings, axis=1)
                if (norms == 0.0).any():
                    raise ValueError("zero-norm embedding cannot be normalized")
                embeddings = embeddings / norms[:, None]
            importance = self._importance(attention[row, :, :length, :length])
            yield embeddings.astype(np.float32), importance

    @staticmethod
    def _importance(attention: np.ndarray) -> np.ndarray:
        """Attention received per token, summed over heads and paying tokens."""
        tensor = attention.astype(np.float64)
        row_sums = tensor.sum(axis=2)
        if np.abs(row_sums - 1.0).max() > 1e-3:
            raise ValueError("attention rows are not normalized after masking")
        return tensor.sum(axis=(0, 1))

    # ------------------------------------------------------------------
    # record assembly

    def _surface(self, token_id: int) -> str:
        return self.tokenizer.convert_ids_to_tokens(token_id) or ""

    def _flags(self, token_id: int, position: int, unused_positions: set[int]) -> int:
        flags = 0
        if position in unused_positions:
            flags |= FLAG_UNUSED
        if token_id in self.special_ids:
            flags |= FLAG_SPECIAL
        surface = self._surface(token_id)
        bare = surface[2:] if surface.startswith("##") else surface
        if bare and all(unicodedata.category(ch).startswith("P") for ch in bare):
            flags |= FLAG_PUNCTUATION
        return flags

    def _records(self, ids, embeddings, importance, idf, unused_positions=()):
        unused = set(unused_positions)
        return [
            WireToken(
                token_id=tid,
                position=pos,
                embedding=embeddings[pos],
                surface=self._surface(tid),
                flags=self._flags(tid, pos, unused),
                idf=idf.get(tid, 0.0) if idf else 0.0,
                attention_importance=float(importance[pos]),
            )
            for pos, tid in enumerate(ids)
        ]

    def _manifest(self) -> WireManifest:
        return WireManifest(
            d=self.config.d,
            dtype=self.config.dtype,
            normalized=self.config.normalize,
            query_expansion=self.config.query_expansion,
            seed=self.config.seed,
        )

    # ------------------------------------------------------------------
    # public surface

    def compute_idf(self, id_lists: Iterable[Sequence[int]]) -> dict[int, float]:
        """Smoothed IDF over tokenized documents: ln((N+1) / (df+1))."""
        lists = list(id_lists)
        if not lists:
            raise ValueError("cannot compute idf over an empty corpus")
        df: dict[int, int] = {}
        for ids in lists:
            for tid in set(ids):
                df[tid] = df.get(tid, 0) + 1
        n = len(lists)
        return {tid: math.log((n + 1) / (count + 1)) for tid, count in df.items()}

    def encode_corpus(
        self,
        texts: Sequence[tuple[str, str]],
        destination: Union[str, Path, BinaryIO],
    ) -> int:
        """Encode (doc_id, text) pairs into a corpus file; returns bytes written."""
        if not texts:
            raise ValueError("no documents to encode")
        assembled = [self._doc_ids(text) for _, text in texts]
        truncated = sum(1 for _, _, was_cut in assembled if was_cut)
        if truncated:
            logger.info("truncated %d of %d documents", truncated, len(texts))
        idf = self.compute_idf([ids for ids, _, _ in assembled])
        docs = []
        index = 0
        for start in range(0, len(texts), self.config.batch_size):
            chunk = assembled[start : start + self.config.batch_size]
            encoded = self._encode_batch([ids for ids, _, _ in chunk])
            for (ids, unused_positions, _), (embeddings, importance) in zip(chunk, encoded):
                doc_id = texts[index][0]
                docs.append(
                    (doc_id, self._records(ids, embeddings, importance, idf, unused_positions))
                )
                index += 1
        return write_corpus_file(self._manifest(), docs, destination)

    def encode_queries(
        self,
        texts: Sequence[tuple[str, str]],
        destination: Union[str, Path, BinaryIO],
    ) -> int:
        """Encode (query_id, text) pairs into a query file."""
        if not texts:
            raise ValueError("no queries to encode")
        assembled = [self._query_ids(text) for _, text in texts]
        truncated = sum(1 for _, was_cut in assembled if was_cut)
        if truncated:
            logger.info("truncated %d of %d queries", truncated, len(texts))
        queries = []
        index = 0
        for start in range(0, len(texts), self.config.batch_size):
            chunk = assembled[start : start + self.config.batch_size]
            for (ids, _), (embeddings, importance) in zip(
                chunk, self._encode_batch([ids for ids, _ in chunk])
            ):
                query_id = texts[index][0]
                queries.append(
                    (query_id, self._records(ids, embeddings, importance, idf=None))
                )
                index += 1
        return write_query_file(self._manifest(), queries, destination)
