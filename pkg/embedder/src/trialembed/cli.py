"""embed: turn a trials JSONL file into an EMB1 embedding matrix.

    embed --in trials.jsonl --out emb.bin [--model ID] [--pooling mean|cls]
          [--batch 8] [--max-tokens 4096]

Exit codes: 0 success, 2 usage error, 3 data error, 5 environment error
(model could not be loaded).  Pass --model offline-hash for the
deterministic dependency-free encoder.
"""

import argparse
import json
import logging
import sys

from trialembed import backends, emb1, serialize

logger = logging.getLogger("trialembed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed",
        description="Embed trial context text into an EMB1 matrix file.")
    parser.add_argument("--in", dest="in_path", required=True,
                        help="input trials JSONL file")
    parser.add_argument("--out", dest="out_path", required=True,
                        help="output EMB1 file")
    parser.add_argument("--model", default=backends.DEFAULT_MODEL,
                        help=f"encoder model id (default: "
                             f"{backends.DEFAULT_MODEL}; "
                             f"'{backends.OFFLINE_MODEL}' needs no download)")
    parser.add_argument("--pooling", choices=backends.POOLINGS,
                        default="mean",
                        help="row pooling strategy (default: mean)")
    parser.add_argument("--batch", type=int, default=8,
                        help="encoder batch size (default: 8)")
    parser.add_argument("--max-tokens", type=int, default=backends.MAX_TOKENS,
                        help=f"truncation length "
                             f"(default: {backends.MAX_TOKENS})")
    return parser


def read_trials(path):
    ids, texts = [], []
    seen = set()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path} line {lineno}: {exc}") from exc
                trial_id = record.get("trial_id")
                if not trial_id:
                    raise ValueError(
                        f"{path} line {lineno}: missing trial_id")
                if trial_id in seen:
                    raise ValueError(
                        f"{path} line {lineno}: duplicate trial_id "
                        f"{trial_id!r}")
                seen.add(trial_id)
                ids.append(trial_id)
                texts.append(serialize.serialize_context(record))
    except OSError as exc:
        raise ValueError(f"cannot read {path}: {exc}") from exc
    if not ids:
        raise ValueError(f"{path}: no trials")
    return ids, texts


def run(argv) -> int:
    logging.basicConfig(level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        options = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if options.batch < 1 or options.max_tokens < 1:
        print("embed: usage error: --batch and --max-tokens must be >= 1",
              file=sys.stderr)
        return 2

    try:
        ids, texts = read_trials(options.in_path)
    except ValueError as exc:
        print(f"embed: data error: {exc}", file=sys.stderr)
        return 3

    try:
        encoder = backends.load_encoder(options.model,
                                        max_tokens=options.max_tokens,
                                        batch_size=options.batch)
    except backends.EncoderLoadError as exc:
        print(f"embed: environment error: {exc}", file=sys.stderr)
        return 5

    matrix, truncated = encoder.encode(texts, pooling=options.pooling)
    try:
        emb1.write_embeddings(options.out_path, ids, matrix)
    except (ValueError, OSError) as exc:
        print(f"embed: data error: {exc}", file=sys.stderr)
        return 3

    if truncated:
        print(f"embed: truncated {truncated} of {len(ids)} trials to "
              f"{encoder.max_tokens} tokens", file=sys.stderr)
    print(f"embed: wrote {len(ids)} x {encoder.hidden_size} matrix to "
          f"{options.out_path}")
    return 0


def main(argv=None) -> int:
    return run(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    raise SystemExit(main())
