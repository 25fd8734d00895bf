"""Command-line entry points.

Exit codes: 0 success, 1 partial failure (some inputs failed or validation
found problems), 2 invalid configuration or arguments.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import corpus as _corpus
from . import masks as _masks
from . import pipeline as _pipeline
from . import synth as _synth
from .dump import DumpFormatError, read_dump_file
from .heatmap import AttributionMap, UpsampleSpec, fused_map, token_map
from .manifest import ManifestError, load_manifest, validate_pair
from .overlay import load_image_rgb, save_overlay_png
from .pipeline import ConfigError


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: {text!r}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated int list: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attnsep",
        description="Measure how sharply content and style prompt tokens "
                    "separate in cross-attention space.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_corpus = sub.add_parser("corpus", help="prompt corpus operations")
    corpus_sub = p_corpus.add_subparsers(dest="corpus_command", required=True)
    p_gen = corpus_sub.add_parser("gen", help="generate the templated corpus")
    p_gen.add_argument("--contents", help="content labels file (one per line)")
    p_gen.add_argument("--styles", help="style file (label<TAB>kind per line)")
    p_gen.add_argument("--templates", type=_int_list,
                       default=list(_corpus.TEMPLATE_IDS),
                       help="comma-separated template ids (default all)")
    p_gen.add_argument("--fix-articles", action="store_true",
                       help="write 'an' before vowel-initial labels")
    p_gen.add_argument("--out", required=True, help="output JSONL path")
    p_gen.add_argument("--stats", action="store_true",
                       help="print per-template/per-label counts")

    p_val = sub.add_parser("validate", help="check (manifest, dump) pairs")
    p_val.add_argument("--in", dest="input_dir", required=True)

    p_an = sub.add_parser("analyze", help="compute separation records")
    p_an.add_argument("--in", dest="input_dir")
    p_an.add_argument("--out", dest="output_dir")
    p_an.add_argument("--config", help="JSON config file; flags override it")
    p_an.add_argument("--tau", type=_float_list, dest="fixed_taus",
                      help="comma-separated fixed thresholds")
    p_an.add_argument("--percentile", type=_float_list, dest="percentiles",
                      help="comma-separated percentile thresholds")
    p_an.add_argument("--kernel-a", type=float, dest="kernel_a")
    p_an.add_argument("--no-clamp", action="store_true",
                      help="keep bicubic undershoot instead of clamping to 0")
    p_an.add_argument("--no-fuse", action="store_true",
                      help="use only the first token of each span")
    p_an.add_argument("--jobs", type=int)

    p_sw = sub.add_parser("sweep", help="aggregate records per threshold policy")
    p_sw.add_argument("--records", required=True, help="records.jsonl from analyze")
    p_sw.add_argument("--out", required=True)
    p_sw.add_argument("--tau", type=_float_list, dest="fixed_taus", default=None,
                      help="fixed grid to report (default: grid found in records)")
    p_sw.add_argument("--percentile", type=_float_list, dest="percentiles",
                      default=None)

    p_su = sub.add_parser("summarize", help="per-label delta summaries")
    p_su.add_argument("--records", required=True)
    p_su.add_argument("--out", required=True)
    p_su.add_argument("--group", choices=("content", "style", "both"),
                      default="both")
    p_su.add_argument("--policy-kind", choices=("fixed", "percentile"))
    p_su.add_argument("--policy-value", type=float)

    p_ov = sub.add_parser("overlay", help="render a heat overlay PNG")
    p_ov.add_argument("--dump", required=True)
    p_ov.add_argument("--manifest", required=True)
    p_ov.add_argument("--image", help="base image (defaults to gray canvas)")
    group = p_ov.add_mutually_exclusive_group()
    group.add_argument("--component", choices=("content", "style"),
                       default="content")
    group.add_argument("--token", type=int, help="single token index instead")
    p_ov.add_argument("--opacity", type=float, default=0.6)
    p_ov.add_argument("--kernel-a", type=float, default=-0.75)
    p_ov.add_argument("--out", required=True)

    p_sy = sub.add_parser("synth", help="write synthetic fixture pairs")
    p_sy.add_argument("--out", required=True)
    p_sy.add_argument("--pairs", type=int, default=1)
    p_sy.add_argument("--scene", default="random",
                      choices=("disjoint", "entangled", "overlap", "random"))
    p_sy.add_argument("--seed", type=int, default=0)
    p_sy.add_argument("--noise", type=float, default=0.0)
    p_sy.add_argument("--latent-scale", type=int, default=1,
                      help="store attention at image_size/scale (random scenes)")

    return parser


def _cmd_corpus_gen(args) -> int:
    contents = (_corpus.load_contents_file(args.contents) if args.contents
                else _corpus.load_bundled_contents())
    styles = (_corpus.load_styles_file(args.styles) if args.styles
              else _corpus.load_bundled_styles())
    specs = _corpus.generate_corpus(contents, styles, args.templates,
                                    fix_articles=args.fix_articles)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        _corpus.write_corpus_jsonl(specs, fh)
    if args.stats:
        per_template: dict[int, int] = {}
        for s in specs:
            per_template[s.template_id] = per_template.get(s.template_id, 0) + 1
        print(f"prompts: {len(specs)}")
        for tid in sorted(per_template):
            print(f"template {tid}: {per_template[tid]}")
        print(f"contents: {len(contents)}  styles: {len(styles)}")
    else:
        print(f"wrote {len(specs)} prompts to {out}")
    return 0


def _cmd_validate(args) -> int:
    manifests = _pipeline.discover_pairs(args.input_dir)
    if not manifests:
        print(f"no manifest.json found under {args.input_dir}", file=sys.stderr)
        return 2
    n_bad = 0
    for mpath in manifests:
        label = str(mpath.parent)
        try:
            manifest = load_manifest(mpath)
            dump = read_dump_file(mpath.parent / manifest.dump_path)
        except (ManifestError, DumpFormatError, OSError) as exc:
            print(f"{label}: ERROR {exc}")
            n_bad += 1
            continue
        report = validate_pair(dump, manifest)
        if report.ok:
            print(f"{label}: ok")
        else:
            n_bad += 1
            for f in report.findings:
                print(f"{label}: {f.code}: {f.message}")
    print(f"checked {len(manifests)} pairs, {n_bad} with findings")
    return 0 if n_bad == 0 else 1


def _cmd_analyze(args) -> int:
    file_obj: dict = {}
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                file_obj = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"cannot read config {args.config}: {exc}", file=sys.stderr)
            return 2
    overrides = {
        "input_dir": args.input_dir,
        "output_dir": args.output_dir,
        "fixed_taus": tuple(args.fixed_taus) if args.fixed_taus else None,
        "percentiles": tuple(args.percentiles) if args.percentiles else None,
        "kernel_a": args.kernel_a,
        "clamp_negative": False if args.no_clamp else None,
        "fuse_spans": False if args.no_fuse else None,
        "jobs": args.jobs,
    }
    config = _pipeline.config_from_obj(file_obj, overrides)
    result = _pipeline.run_analyze(config)
    print(f"analyzed {result.n_pairs} pairs "
          f"({result.report['n_ok']} ok, {result.report['n_failed']} failed), "
          f"{len(result.records)} records -> {config.output_dir}")
    for err in result.errors:
        print(f"  {err['pair']}: {err['error']}", file=sys.stderr)
    return result.exit_code


def _read_records(path):
    with open(path, "r", encoding="utf-8") as fh:
        return _masks.read_records_jsonl(fh)


def _cmd_sweep(args) -> int:
    records = _read_records(args.records)
    policies = None
    if args.fixed_taus is not None or args.percentiles is not None:
        policies = ([_masks.ThresholdPolicy("fixed", t)
                     for t in (args.fixed_taus or [])]
                    + [_masks.ThresholdPolicy("percentile", p)
                       for p in (args.percentiles or [])])
    points = _pipeline.write_sweep_outputs(records, args.out, policies)
    absent = sum(1 for p in points if p.absent)
    print(f"swept {len(points)} policies over {len(records)} records "
          f"({absent} absent) -> {args.out}")
    return 0 if absent == 0 else 1


def _cmd_summarize(args) -> int:
    records = _read_records(args.records)
    if (args.policy_kind is None) != (args.policy_value is None):
        print("give both --policy-kind and --policy-value, or neither",
              file=sys.stderr)
        return 2
    if args.policy_kind is not None:
        policy = _masks.ThresholdPolicy(args.policy_kind, args.policy_value)
        records = [r for r in records if r.policy == policy]
        if not records:
            print(f"no records under policy {policy.describe()}", file=sys.stderr)
            return 2
    else:
        kinds = {r.policy for r in records}
        if len(kinds) > 1:
            print("records mix several policies; pick one with "
                  "--policy-kind/--policy-value", file=sys.stderr)
            return 2
    groups = ("content", "style") if args.group == "both" else (args.group,)
    for g in groups:
        summaries = _pipeline.write_summary_outputs(records, args.out, g)
        print(f"{g}: {len(summaries)} groups -> {args.out}")
    return 0


def _cmd_overlay(args) -> int:
    if not (0.0 <= args.opacity <= 1.0):
        print(f"opacity must lie in [0, 1], got {args.opacity}", file=sys.stderr)
        return 2
    try:
        manifest = load_manifest(args.manifest)
        dump = read_dump_file(args.dump)
    except (ManifestError, DumpFormatError, OSError) as exc:
        print(f"cannot load pair: {exc}", file=sys.stderr)
        return 1
    report = validate_pair(dump, manifest)
    if not report.ok:
        print("pair fails validation: " + "; ".join(report.codes()),
              file=sys.stderr)
        return 1

    spec = UpsampleSpec(kernel_a=args.kernel_a)
    flags = [t.special for t in manifest.tokens]
    if args.token is not None:
        if not (0 <= args.token < dump.n_tokens):
            print(f"token {args.token} outside [0, {dump.n_tokens})",
                  file=sys.stderr)
            return 2
        amap = token_map(dump, args.token, spec)
    else:
        span = (manifest.content_span if args.component == "content"
                else manifest.style_span)
        amap = fused_map(dump, span, spec, flags)

    image = load_image_rgb(args.image) if args.image else None
    try:
        save_overlay_png(amap, args.out, image, args.opacity)
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    if amap.degenerate:
        print(f"note: map is identically zero; wrote base image to {args.out}")
    else:
        print(f"wrote {args.out}")
    return 0


def _cmd_synth(args) -> int:
    if args.pairs < 1:
        print("--pairs must be >= 1", file=sys.stderr)
        return 2
    if args.latent_scale < 1:
        print("--latent-scale must be >= 1", file=sys.stderr)
        return 2
    dirs = _synth.synth_corpus(args.out, args.pairs, args.scene,
                               seed=args.seed, noise_amplitude=args.noise,
                               latent_scale=args.latent_scale)
    print(f"wrote {len(dirs)} fixture pairs under {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "corpus":
            return _cmd_corpus_gen(args)
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "analyze":
            return _cmd_analyze(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "summarize":
            return _cmd_summarize(args)
        if args.command == "overlay":
            return _cmd_overlay(args)
        if args.command == "synth":
            return _cmd_synth(args)
    except (ConfigError, _corpus.CorpusError, _masks.PolicyError,
            ValueError) as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except OSError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
