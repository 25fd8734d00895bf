"""End-to-end analysis: dump directories in, metric tables out.

A run scans an input tree for (manifest.json, dump) pairs, computes fused
content/style maps and per-word maps once per image, thresholds them under
every configured policy, and writes records plus aggregate reports.

Outputs are byte-deterministic: pairs are processed in sorted path order,
workers return results in submission order, accumulation is float64, and
nothing time- or host-dependent is written.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

from . import masks as _masks
from . import stats as _stats
from .dump import DumpFormatError, read_dump_file
from .heatmap import UpsampleSpec, fused_map, token_map
from .manifest import Manifest, ManifestError, load_manifest, validate_pair
from .masks import (SeparationRecord, ThresholdPolicy, eligible_baseline_tokens,
                    separation_record, threshold_mask, write_records_csv,
                    write_records_jsonl)

FUSION_SUM = "sum_raw_maps_then_normalize_once"
FUSION_FIRST_TOKEN = "first_span_token_only"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    input_dir: str
    output_dir: str
    fixed_taus: tuple[float, ...] = (_masks.DEFAULT_FIXED_TAU,)
    percentiles: tuple[float, ...] = ()
    kernel_a: float = -0.75
    clamp_negative: bool = True
    fuse_spans: bool = True
    jobs: int = 1

    def __post_init__(self):
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if not self.fixed_taus and not self.percentiles:
            raise ConfigError("at least one threshold policy is required")
        if not (self.kernel_a < 0):
            raise ConfigError(f"kernel_a must be negative, got {self.kernel_a}")
        try:
            for t in self.fixed_taus:
                ThresholdPolicy("fixed", t)
            for p in self.percentiles:
                ThresholdPolicy("percentile", p)
        except _masks.PolicyError as exc:
            raise ConfigError(str(exc)) from exc

    def policies(self) -> list[ThresholdPolicy]:
        return ([ThresholdPolicy("fixed", t) for t in self.fixed_taus]
                + [ThresholdPolicy("percentile", p) for p in self.percentiles])

    def upsample_spec(self) -> UpsampleSpec:
        return UpsampleSpec(kernel_a=self.kernel_a,
                            clamp_negative=self.clamp_negative)


_CONFIG_FIELDS = {f: None for f in (
    "input_dir", "output_dir", "fixed_taus", "percentiles", "kernel_a",
    "clamp_negative", "fuse_spans", "jobs")}


def config_from_obj(obj: dict, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from a parsed JSON object plus CLI overrides."""
    if not isinstance(obj, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(obj) - set(_CONFIG_FIELDS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    merged = dict(obj)
    for k, v in (overrides or {}).items():
        if v is not None:
            merged[k] = v
    for k in ("fixed_taus", "percentiles"):
        if k in merged and merged[k] is not None:
            merged[k] = tuple(float(v) for v in merged[k])
    if "input_dir" not in merged or "output_dir" not in merged:
        raise ConfigError("config needs input_dir and output_dir")
    try:
        return RunConfig(**merged)
    except TypeError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc


def meta_block(config: RunConfig) -> dict:
    """Conventions that shape the numbers; recorded next to every table."""
    return {
        "kernel": "cubic",
        "kernel_a": config.kernel_a,
        "alignment": "half_pixel_centers",
        "clamp_negative": config.clamp_negative,
        "fusion": FUSION_SUM if config.fuse_spans else FUSION_FIRST_TOKEN,
        "threshold_comparator": ">=",
        "percentile_method": _masks.PERCENTILE_METHOD,
        "baseline": "fused_component_masks_vs_each_background_word_token",
        "missing_metric_rule": "empty_union_pairs_excluded_and_counted",
        "effect_size_convention": _stats.EFFECT_SIZE_CONVENTION,
        "sd_convention": _stats.SD_CONVENTION,
        "mean_support": "mean_over_images_of_component_support_average",
    }


def discover_pairs(input_dir) -> list[Path]:
    """Sorted manifest paths under input_dir (each names its dump file)."""
    root = Path(input_dir)
    if not root.is_dir():
        raise ConfigError(f"input directory {root} does not exist")
    return sorted(root.rglob("manifest.json"))


@dataclass
class PairOutcome:
    manifest_path: str
    records: list[SeparationRecord] = field(default_factory=list)
    error: str | None = None


def analyze_pair(manifest_path: Path, config: RunConfig) -> PairOutcome:
    """All separation records for one (manifest, dump) pair; never raises."""
    outcome = PairOutcome(manifest_path=str(manifest_path))
    try:
        manifest = load_manifest(manifest_path)
    except ManifestError as exc:
        outcome.error = f"manifest: {exc}"
        return outcome
    dump_path = Path(manifest_path).parent / manifest.dump_path
    try:
        dump = read_dump_file(dump_path)
    except DumpFormatError as exc:
        outcome.error = f"dump: {exc}"
        return outcome
    except OSError as exc:
        outcome.error = f"dump: cannot read {dump_path}: {exc}"
        return outcome

    report = validate_pair(dump, manifest)
    if not report.ok:
        outcome.error = "validation: " + "; ".join(
            f.code for f in report.findings)
        return outcome

    spec = config.upsample_spec()
    flags = [t.special for t in manifest.tokens]
    eligible = eligible_baseline_tokens(
        dump.n_tokens, manifest.content_span, manifest.style_span, flags)

    try:
        if config.fuse_spans:
            c_map = fused_map(dump, manifest.content_span, spec, flags)
            s_map = fused_map(dump, manifest.style_span, spec, flags)
        else:
            c_map = token_map(dump, manifest.content_span[0], spec)
            s_map = token_map(dump, manifest.style_span[0], spec)
        word_maps = {w: token_map(dump, w, spec) for w in eligible}
    except (ValueError, IndexError) as exc:
        outcome.error = f"maps: {exc}"
        return outcome

    for policy in config.policies():
        c_mask = threshold_mask(c_map, policy)
        s_mask = threshold_mask(s_map, policy)
        word_masks = {w: threshold_mask(m, policy) for w, m in word_maps.items()}
        outcome.records.append(separation_record(
            c_mask, s_mask, word_masks, eligible,
            content=manifest.content_label, style=manifest.style_label,
            style_kind=manifest.style_kind, template=manifest.template_id))
    return outcome


def _worker(args: tuple[str, RunConfig]) -> PairOutcome:
    path, config = args
    return analyze_pair(Path(path), config)


@dataclass
class AnalyzeResult:
    records: list[SeparationRecord]
    errors: list[dict]
    n_pairs: int
    report: dict

    @property
    def exit_code(self) -> int:
        return 1 if self.errors else 0


def _policy_tests(records: Sequence[SeparationRecord],
                  policies: Sequence[ThresholdPolicy]) -> list[dict]:
    tests = []
    for policy in policies:
        rows = [r for r in records if r.policy == policy]
        complete = [r for r in rows if r.delta is not None]
        entry: dict = {
            "policy_kind": policy.kind,
            "policy_value": policy.value,
            "n_records": len(rows),
            "n_complete": len(complete),
        }
        sample = _stats.paired_sample_from_records(complete)
        if sample is None:
            entry.update(t=None, df=None, p_two_sided=None, degenerate=None,
                         effect_size=None, mean_iou_cs=None, mean_miou_b=None,
                         mean_delta=None)
        else:
            tt = _stats.paired_t_test(sample)
            eff = _stats.effect_size(sample)
            n = sample.n
            entry.update(
                t=None if math.isinf(tt.t) else tt.t,
                df=tt.df,
                p_two_sided=tt.p_two_sided,
                degenerate=tt.degenerate,
                effect_size=eff.value,
                mean_iou_cs=math.fsum(p[0] for p in sample.pairs) / n,
                mean_miou_b=math.fsum(p[1] for p in sample.pairs) / n,
                mean_delta=math.fsum(p[1] - p[0] for p in sample.pairs) / n,
            )
        tests.append(entry)
    return tests


def run_analyze(config: RunConfig) -> AnalyzeResult:
    manifests = discover_pairs(config.input_dir)
    jobs = [(str(p), config) for p in manifests]
    if config.jobs == 1:
        outcomes = [_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            outcomes = list(pool.map(_worker, jobs, chunksize=1))

    records: list[SeparationRecord] = []
    errors: list[dict] = []
    root = Path(config.input_dir)
    for outcome in outcomes:
        rel = str(Path(outcome.manifest_path).parent.relative_to(root))
        if outcome.error is not None:
            errors.append({"pair": rel, "error": outcome.error})
        else:
            records.extend(outcome.records)

    report = {
        "n_pairs": len(manifests),
        "n_ok": len(manifests) - len(errors),
        "n_failed": len(errors),
        "errors": errors,
        "tests": _policy_tests(records, config.policies()),
        "meta": meta_block(config),
        # paths and job count are deliberately not echoed: runs over the same
        # inputs must produce byte-identical reports wherever/however they run
        "config": {
            "fixed_taus": list(config.fixed_taus),
            "percentiles": list(config.percentiles),
            "kernel_a": config.kernel_a,
            "clamp_negative": config.clamp_negative,
            "fuse_spans": config.fuse_spans,
        },
    }

    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "records.csv", "w", encoding="utf-8", newline="") as fh:
        write_records_csv(records, fh)
    with open(out / "records.jsonl", "w", encoding="utf-8") as fh:
        write_records_jsonl(records, fh)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")

    return AnalyzeResult(records=records, errors=errors,
                         n_pairs=len(manifests), report=report)


# --- sweep / summary emission ------------------------------------------------

SWEEP_COLUMNS = ("policy_kind", "policy_value", "mean_iou_cs", "mean_miou_b",
                 "mean_delta", "mean_support", "effect_size", "n_images",
                 "n_missing", "absent")

SUMMARY_COLUMNS = ("label", "kind", "mean_delta", "sd_delta", "n")


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_sweep_outputs(records: Sequence[SeparationRecord], out_dir,
                        policies: Sequence[ThresholdPolicy] | None = None) -> list:
    import csv

    points = _stats.threshold_sweep(records, policies)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for p in points:
            writer.writerow([_csv_cell(v) for v in (
                p.policy.kind, p.policy.value, p.mean_iou_cs, p.mean_miou_b,
                p.mean_delta, p.mean_support, p.effect, p.n_images,
                p.n_missing, p.absent)])
    obj = {
        "points": [{
            "policy_kind": p.policy.kind,
            "policy_value": p.policy.value,
            "mean_iou_cs": p.mean_iou_cs,
            "mean_miou_b": p.mean_miou_b,
            "mean_delta": p.mean_delta,
            "mean_support": p.mean_support,
            "effect_size": p.effect,
            "n_images": p.n_images,
            "n_missing": p.n_missing,
            "absent": p.absent,
        } for p in points],
        "mean_effect_size": _stats.mean_effect_size(points),
    }
    with open(out / "sweep.json", "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")
    return points


def write_summary_outputs(records: Sequence[SeparationRecord], out_dir,
                          group_by: str) -> list:
    import csv

    summaries = _stats.component_summaries(records, group_by)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"summary_{group_by}"
    with open(out / f"{stem}.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            writer.writerow([_csv_cell(v) for v in (
                s.label, s.kind, s.mean_delta, s.sd_delta, s.n)])
    obj = [{"label": s.label, "kind": s.kind, "mean_delta": s.mean_delta,
            "sd_delta": s.sd_delta, "n": s.n} for s in summaries]
    with open(out / f"{stem}.json", "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")
    return summaries
