"""Command line for encoding TSV text collections into interchange files.

Input is UTF-8 TSV, one ``id<TAB>text`` pair per line.  Output files are
written atomically.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from pathlib import Path

from .adapter import EncoderAdapter, EncoderConfig


def read_tsv(path: str) -> list[tuple[str, str]]:
    pairs = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise ValueError(f"{path}:{lineno}: expected id<TAB>text")
            item_id, text = line.split("\t", 1)
            pairs.append((item_id, text))
    if not pairs:
        raise ValueError(f"{path}: no input rows")
    return pairs


def _atomic(path: str, produce) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.")
    try:
        with os.fdopen(fd, "wb") as handle:
            produce(handle)
        os.replace(tmp, target)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _config_from_args(args: argparse.Namespace) -> EncoderConfig:
    return EncoderConfig(
        model=args.model,
        d=args.dim,
        normalize=args.normalize,
        query_expansion=args.query_expansion,
        unused_token_count=args.unused_k,
        max_length=args.max_length,
        batch_size=args.batch_size,
        device=args.device,
        seed=args.seed,
        dtype=args.dtype,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="limv-encode",
        description="Encode text into per-token embedding interchange files.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("corpus", "encode documents into a corpus file"),
        ("queries", "encode queries into a query file"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--input", required=True, help="UTF-8 TSV: id<TAB>text")
        p.add_argument("--output", required=True)
        p.add_argument(
            "--model",
            default=EncoderConfig.model,
            help="checkpoint directory or registry name",
        )
        p.add_argument("--dim", type=int, default=128, help="projection dimension")
        p.add_argument("--normalize", action="store_true")
        p.add_argument(
            "--query-expansion",
            action="store_true",
            help="pad queries with mask tokens to exactly 32 records",
        )
        p.add_argument(
            "--unused-k",
            type=int,
            default=0,
            help="prepend this many reserved summary tokens to each document",
        )
        p.add_argument("--max-length", type=int, default=256)
        p.add_argument("--batch-size", type=int, default=8)
        p.add_argument("--device", default="cpu")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--dtype", choices=["f16", "f32"], default="f32")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        adapter = EncoderAdapter(_config_from_args(args))
        pairs = read_tsv(args.input)
        if args.command == "corpus":
            _atomic(args.output, lambda h: adapter.encode_corpus(pairs, h))
        else:
            _atomic(args.output, lambda h: adapter.encode_queries(pairs, h))
        print(f"wrote {args.output} ({len(pairs)} items)", file=sys.stderr)
        return 0
    except Exception as exc:
        print(f"limv-encode: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
