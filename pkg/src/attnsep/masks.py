"""Binary masks from attribution maps, and the separation metrics over them.

A mask keeps the pixels whose heat survives a threshold: either a fixed
cut tau in [0, 1], or a percentile cut at p in (0, 1). The percentile cut
guarantees the mask keeps at least (1 - p) * width * height pixels; with a
plain linear-interpolated percentile that floor can be violated when ties
or interpolation push tau above the k-th largest value, so tau is capped at
the k-th largest value with k = ceil((1 - p) * N).

Metrics:
    iou(C, S)           |C & S| / |C | S|, undefined (None) on empty union
    baseline_miou       mean IoU of each component mask against every
                        non-special prompt token outside both spans
    delta               baseline_miou - iou_cs
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from .heatmap import AttributionMap

PERCENTILE_METHOD = "linear_capped_at_kth_largest"

DEFAULT_FIXED_TAU = 0.4
FIXED_TAU_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
PERCENTILE_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class ThresholdPolicy:
    kind: str  # "fixed" | "percentile"
    value: float

    def __post_init__(self):
        if self.kind == "fixed":
            if not (0.0 <= self.value <= 1.0):
                raise PolicyError(f"fixed tau must lie in [0, 1], got {self.value}")
        elif self.kind == "percentile":
            if not (0.0 < self.value < 1.0):
                raise PolicyError(
                    f"percentile p must lie in (0, 1), got {self.value}")
        else:
            raise PolicyError(f"unknown policy kind {self.kind!r}")

    def describe(self) -> str:
        return f"{self.kind}={self.value!r}"


@dataclass
class BinaryMask:
    bits: np.ndarray  # bool, shape (height, width)
    policy: ThresholdPolicy
    effective_tau: float
    degenerate_source: bool = False  # map was identically zero

    @property
    def support(self) -> int:
        return int(self.bits.sum())

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape


def support_floor(p: float, n: int) -> int:
    """Minimum pixels a percentile-p cut must keep: ceil((1 - p) * n).

    Computed over exact rationals on the decimal reading of p, so p = 0.7
    yields 30 of 100 rather than 31 (1 - 0.7 overshoots in binary floats).
    """
    from fractions import Fraction

    return math.ceil((1 - Fraction(repr(float(p)))) * n)


def percentile_tau(values: np.ndarray, p: float) -> float:
    """Threshold for the percentile policy over a flat value population.

    Linear-interpolated percentile, capped at the k-th largest value
    (k the support floor) so that at least (1 - p) * N values always
    survive a `>= tau` cut, ties or not.
    """
    flat = np.asarray(values, dtype=np.float64).ravel()
    n = flat.size
    if n == 0:
        raise PolicyError("cannot take a percentile of an empty map")
    tau = float(np.percentile(flat, p * 100.0, method="linear"))
    k = support_floor(p, n)
    kth_largest = float(np.partition(flat, n - k)[n - k])
    return min(tau, kth_largest)


def threshold_mask(amap: AttributionMap, policy: ThresholdPolicy) -> BinaryMask:
    """Pixels with heat >= tau. Boundary values are kept.

    An all-zero input map is not an error: a fixed tau > 0 yields an empty
    mask, a percentile cut keeps everything (every value ties at zero).
    Either way the mask carries a flag naming the degenerate source.
    """
    if policy.kind == "fixed":
        tau = policy.value
    else:
        tau = percentile_tau(amap.values, policy.value)
    return BinaryMask(bits=amap.values >= tau, policy=policy,
                      effective_tau=tau, degenerate_source=amap.degenerate)


def iou(a: BinaryMask | np.ndarray, b: BinaryMask | np.ndarray) -> float | None:
    """Intersection over union; None when both masks are empty."""
    abits = a.bits if isinstance(a, BinaryMask) else np.asarray(a, dtype=bool)
    bbits = b.bits if isinstance(b, BinaryMask) else np.asarray(b, dtype=bool)
    if abits.shape != bbits.shape:
        raise ValueError(f"mask shapes differ: {abits.shape} vs {bbits.shape}")
    union = int((abits | bbits).sum())
    if union == 0:
        return None
    inter = int((abits & bbits).sum())
    return inter / union


def eligible_baseline_tokens(n_tokens: int, content_span: tuple[int, int],
                             style_span: tuple[int, int],
                             special_flags: Sequence[bool]) -> list[int]:
    """Token indices usable as baseline words: non-special, outside both spans."""
    if len(special_flags) != n_tokens:
        raise ValueError("special_flags length must equal n_tokens")
    spans = (content_span, style_span)
    out = []
    for i in range(n_tokens):
        if special_flags[i]:
            continue
        if any(s0 <= i <= s1 for s0, s1 in spans):
            continue
        out.append(i)
    return out


def baseline_miou(c_mask: BinaryMask, s_mask: BinaryMask,
                  word_masks: Mapping[int, BinaryMask],
                  eligible: Sequence[int]) -> tuple[float | None, int, int]:
    """Mean IoU of the fused component masks against each eligible word token.

    Every (component, word) pairing counts once per component, per word.
    Returns (mean or None, n_pairs, n_missing): pairs with an empty union
    are excluded from the mean and counted as missing.
    """
    values: list[float] = []
    n_pairs = 0
    n_missing = 0
    for comp in (c_mask, s_mask):
        for w in eligible:
            if w not in word_masks:
                raise KeyError(f"no mask for baseline token {w}")
            n_pairs += 1
            v = iou(comp, word_masks[w])
            if v is None:
                n_missing += 1
            else:
                values.append(v)
    if not values:
        return None, n_pairs, n_missing
    return math.fsum(values) / len(values), n_pairs, n_missing


@dataclass
class SeparationRecord:
    """Per-image, per-policy separation measurements, ready for CSV/JSONL."""

    content: str
    style: str
    style_kind: str
    template: int
    policy: ThresholdPolicy
    iou_cs: float | None
    miou_b: float | None
    delta: float | None
    support_c: int
    support_s: int
    n_pairs: int
    degenerate: bool = False

    def __post_init__(self):
        both = self.iou_cs is not None and self.miou_b is not None
        if (self.delta is not None) != both:
            raise ValueError("delta must be present exactly when both metrics are")


def separation_record(c_mask: BinaryMask, s_mask: BinaryMask,
                      word_masks: Mapping[int, BinaryMask],
                      eligible: Sequence[int],
                      content: str, style: str, style_kind: str,
                      template: int) -> SeparationRecord:
    policy = c_mask.policy
    if s_mask.policy != policy:
        raise PolicyError("component masks built under different policies")

    support_c, support_s = c_mask.support, s_mask.support
    if support_c == 0 and support_s == 0:
        # nothing survived the threshold on either side: no metric is meaningful
        return SeparationRecord(
            content=content, style=style, style_kind=style_kind,
            template=template, policy=policy, iou_cs=None, miou_b=None,
            delta=None, support_c=0, support_s=0, n_pairs=0, degenerate=True)

    iou_cs = iou(c_mask, s_mask)
    miou_b, n_pairs, _ = baseline_miou(c_mask, s_mask, word_masks, eligible)
    delta = None
    if iou_cs is not None and miou_b is not None:
        delta = miou_b - iou_cs
    return SeparationRecord(
        content=content, style=style, style_kind=style_kind, template=template,
        policy=policy, iou_cs=iou_cs, miou_b=miou_b, delta=delta,
        support_c=support_c, support_s=support_s, n_pairs=n_pairs,
        degenerate=iou_cs is None or miou_b is None)


CSV_COLUMNS = ("content", "style", "style_kind", "template", "policy_kind",
               "policy_value", "iou_cs", "miou_b", "delta", "support_c",
               "support_s", "n_pairs", "degenerate")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def record_to_row(rec: SeparationRecord) -> list[str]:
    return [_fmt(v) for v in (
        rec.content, rec.style, rec.style_kind, rec.template,
        rec.policy.kind, rec.policy.value, rec.iou_cs, rec.miou_b,
        rec.delta, rec.support_c, rec.support_s, rec.n_pairs, rec.degenerate)]


def write_records_csv(records: Iterable[SeparationRecord], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in records:
        writer.writerow(record_to_row(rec))


def record_to_obj(rec: SeparationRecord) -> dict:
    return {
        "content": rec.content,
        "style": rec.style,
        "style_kind": rec.style_kind,
        "template": rec.template,
        "policy_kind": rec.policy.kind,
        "policy_value": rec.policy.value,
        "iou_cs": rec.iou_cs,
        "miou_b": rec.miou_b,
        "delta": rec.delta,
        "support_c": rec.support_c,
        "support_s": rec.support_s,
        "n_pairs": rec.n_pairs,
        "degenerate": rec.degenerate,
    }


def record_from_obj(obj: dict) -> SeparationRecord:
    return SeparationRecord(
        content=obj["content"], style=obj["style"],
        style_kind=obj["style_kind"], template=int(obj["template"]),
        policy=ThresholdPolicy(obj["policy_kind"], float(obj["policy_value"])),
        iou_cs=obj["iou_cs"], miou_b=obj["miou_b"], delta=obj["delta"],
        support_c=int(obj["support_c"]), support_s=int(obj["support_s"]),
        n_pairs=int(obj["n_pairs"]), degenerate=bool(obj["degenerate"]))


def write_records_jsonl(records: Iterable[SeparationRecord], stream: TextIO) -> None:
    for rec in records:
        stream.write(json.dumps(record_to_obj(rec)))
        stream.write("\n")


def read_records_jsonl(stream: TextIO) -> list[SeparationRecord]:
    out = []
    for line in stream:
        line = line.strip()
        if line:
            out.append(record_from_obj(json.loads(line)))
    return out
