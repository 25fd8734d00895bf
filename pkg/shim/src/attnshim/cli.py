"""Command line entry points.

Exit codes: 0 success, 1 per-prompt failures (batch still ran), 2 usage or
configuration errors.
"""

import argparse
import json
import sys

from attnsep.corpus import CorpusError, read_corpus_jsonl

from .extract import (DEFAULT_GUIDANCE, DEFAULT_STEPS, list_hookable_layers,
                      run_extract)
from .hooks import HookError
from .model import DEFAULT_MODEL_ID, ModelError


def _parse_layers(arg: str) -> list[str] | None:
    if arg == "all":
        return None
    paths = [p.strip() for p in arg.split(",") if p.strip()]
    if not paths:
        raise ValueError("empty layer selection; use 'all' or a "
                         "comma-separated list of layer paths")
    return paths


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attnshim",
        description="instrumented toy diffusion runs that emit "
                    "manifest/dump pairs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="generate images and record "
                                       "cross-attention dumps")
    p.add_argument("--corpus", required=True,
                   help="prompt corpus (JSONL of prompt specs)")
    p.add_argument("--model", default=DEFAULT_MODEL_ID)
    p.add_argument("--steps", type=int, default=DEFAULT_STEPS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers", default="all",
                   help="'all' or comma-separated layer paths")
    p.add_argument("--guidance", type=float, default=DEFAULT_GUIDANCE)
    p.add_argument("--limit", type=int, default=None,
                   help="only extract the first N prompts")
    p.add_argument("--out", required=True)

    p = sub.add_parser("layers", help="list hookable cross-attention layers")
    p.add_argument("--model", default=DEFAULT_MODEL_ID)
    return parser


def cmd_extract(args) -> int:
    layer_paths = _parse_layers(args.layers)
    try:
        with open(args.corpus, "r", encoding="utf-8") as fh:
            prompts = read_corpus_jsonl(fh)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.limit is not None:
        prompts = prompts[:args.limit]
    if not prompts:
        print("error: corpus is empty", file=sys.stderr)
        return 2
    batch = run_extract(prompts, args.out, model_id=args.model,
                        steps=args.steps, seed=args.seed,
                        layer_paths=layer_paths, guidance=args.guidance)
    for name, diag in batch.failures:
        print(f"FAIL {name}: {diag}", file=sys.stderr)
    print(f"extracted {len(batch.results)} of "
          f"{len(batch.results) + len(batch.failures)} prompts -> {args.out}")
    return batch.exit_code


def cmd_layers(args) -> int:
    print(json.dumps(list_hookable_layers(args.model), indent=2))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "extract":
            return cmd_extract(args)
        return cmd_layers(args)
    except (ModelError, HookError, CorpusError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
