"""Builds a tiny local checkpoint so tests run fully offline.

The model weights are randomly initialized (seeded), which exercises the
real tokenizer/encoder/attention machinery without any downloads; the
adapter's random projection path covers the missing trained head.
"""

import os

import pytest
import torch
from transformers import BertConfig, BertModel, BertTokenizerFast

os.environ.setdefault("HF_HUB_OFFLINE", "1")

LEXICON = [
    "dog", "dogs", "nasal", "poly", "polyp", "removal", "grow", "body",
    "parts", "being", "hide", "growth", "nose", "the", "a", "an", "of",
    "and", "in", "on", "for", "how", "to", "remove", "from", "his", "her",
    "hello", "world", "search", "engine", "token", "embed", "query",
    "passage", "ranking", "cat", "bird", "fish", "tree", "house", "water",
]


def build_vocab() -> dict[str, int]:
    words = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    words += [f"[unused{i}]" for i in range(32)]
    words += LEXICON
    words += [",", ".", "!", "?", ";", ":", "'", '"', "-", "..."]
    words += list("abcdefghijklmnopqrstuvwxyz0123456789")
    words += ["##" + c for c in "abcdefghijklmnopqrstuvwxyz0123456789"]
    words += ["##s", "##ing", "##ed"]
    vocab: dict[str, int] = {}
    for word in words:
        if word not in vocab:
            vocab[word] = len(vocab)
    return vocab


@pytest.fixture(scope="session")
def checkpoint(tmp_path_factory) -> str:
    target = tmp_path_factory.mktemp("tiny-checkpoint")
    vocab = build_vocab()
    tokenizer = BertTokenizerFast(vocab=vocab, do_lower_case=True)
    tokenizer.save_pretrained(target)
    config = BertConfig(
        vocab_size=len(vocab),
        hidden_size=64,
        num_hidden_layers=2,
        num_attention_heads=4,
        intermediate_size=128,
        max_position_embeddings=256,
    )
    torch.manual_seed(1234)
    BertModel(config).save_pretrained(target)
    return str(target)


@pytest.fixture(scope="session")
def doc_texts() -> list[tuple[str, str]]:
    return [
        ("doc0", "dog nasal polyp removal, how to remove a polyp from his dog nose"),
        ("doc1", "the cat and the bird grow in the tree house"),
        ("doc2", "water fish search engine for passage ranking"),
        ("doc3", "hello world! token embed query; hello hello world."),
        ("doc4", "dogs hide growth: nasal poly dogs nose dogs nose dog"),
    ]


@pytest.fixture(scope="session")
def query_texts() -> list[tuple[str, str]]:
    return [
        ("q0", "dog nasal polyp"),
        ("q1", "hello world search"),
        ("q2", "how to remove growth from a dog nose and hide the removal of it"),
    ]
