"""Paired statistics over separation records.

The paired t-test compares, image by image, the background-baseline mIoU
against the content/style IoU: d_i = miou_b_i - iou_cs_i, t = mean(d) /
(sd(d) / sqrt(n)) with df = n - 1, sd the sample (n - 1) standard deviation.

The two-sided p-value comes straight from the regularized incomplete beta:
p = I_x(df/2, 1/2) with x = df / (df + t^2). The beta function is evaluated
here with a modified Lentz continued fraction; no statistics package is
involved anywhere in the pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .masks import SeparationRecord, ThresholdPolicy

EFFECT_SIZE_CONVENTION = "abs_mean_diff_over_pooled_sd"
SD_CONVENTION = "sample_n_minus_1"

_BETACF_MAX_ITER = 400
_BETACF_EPS = 1e-14
_TINY = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    raise ArithmeticError(
        f"incomplete beta continued fraction failed to converge "
        f"(a={a}, b={b}, x={x})")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise ValueError(f"shape parameters must be positive, got a={a}, b={b}")
    if not (0.0 <= x <= 1.0):
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    # x^a (1-x)^b / B(a, b); the same prefactor serves the mirrored fraction
    front = math.exp(math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                     + a * math.log(x) + b * math.log1p(-x))
    # the continued fraction converges fast only below the distribution mean
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: int) -> float:
    """P(|T_df| >= |t|) for Student's t with df degrees of freedom."""
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


def sample_sd(values: Sequence[float]) -> float:
    """Sample standard deviation (n - 1 denominator); 0.0 for a single value."""
    n = len(values)
    if n == 0:
        raise ValueError("sd of an empty sample")
    if n == 1:
        return 0.0
    mean = math.fsum(values) / n
    ss = math.fsum((v - mean) ** 2 for v in values)
    return math.sqrt(ss / (n - 1))


@dataclass(frozen=True)
class PairedSample:
    """Per-image (iou_cs, miou_b) pairs; both entries must lie in [0, 1]."""

    pairs: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.pairs) < 2:
            raise ValueError(f"need >= 2 pairs, got {len(self.pairs)}")
        for i, (a, b) in enumerate(self.pairs):
            if not (0.0 <= a <= 1.0 and 0.0 <= b <= 1.0):
                raise ValueError(f"pair {i} = ({a}, {b}) outside [0, 1]^2")

    @property
    def n(self) -> int:
        return len(self.pairs)

    def diffs(self) -> list[float]:
        return [b - a for a, b in self.pairs]


@dataclass(frozen=True)
class TTestResult:
    t: float
    p_two_sided: float
    df: int
    degenerate: bool = False  # sd(d) was exactly zero


def paired_t_test(sample: PairedSample) -> TTestResult:
    d = sample.diffs()
    n = sample.n
    mean = math.fsum(d) / n
    sd = sample_sd(d)
    df = n - 1
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(t=0.0, p_two_sided=1.0, df=df, degenerate=True)
        t = math.copysign(math.inf, mean)
        return TTestResult(t=t, p_two_sided=0.0, df=df, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t=t, p_two_sided=t_two_sided_p(t, df), df=df)


@dataclass(frozen=True)
class EffectSizeResult:
    value: float | None
    convention: str = EFFECT_SIZE_CONVENTION
    degenerate: bool = False  # pooled sd was zero


def effect_size(sample: PairedSample) -> EffectSizeResult:
    """|mean(miou_b) - mean(iou_cs)| over the pooled sample sd of the two sides."""
    a = [p[0] for p in sample.pairs]
    b = [p[1] for p in sample.pairs]
    pooled = math.sqrt((sample_sd(a) ** 2 + sample_sd(b) ** 2) / 2.0)
    if pooled == 0.0:
        return EffectSizeResult(value=None, degenerate=True)
    mean_a = math.fsum(a) / len(a)
    mean_b = math.fsum(b) / len(b)
    return EffectSizeResult(value=abs(mean_b - mean_a) / pooled)


def paired_sample_from_records(
        records: Iterable[SeparationRecord]) -> PairedSample | None:
    """Collect complete (iou_cs, miou_b) pairs; None if fewer than 2 exist."""
    pairs = [(r.iou_cs, r.miou_b) for r in records
             if r.iou_cs is not None and r.miou_b is not None]
    if len(pairs) < 2:
        return None
    return PairedSample(pairs=tuple(pairs))


# --- per-label summaries ----------------------------------------------------

@dataclass(frozen=True)
class ComponentSummary:
    label: str
    kind: str  # "content" | "artist" | "movement"
    mean_delta: float
    sd_delta: float
    n: int


def _require_single_policy(records: Sequence[SeparationRecord]) -> ThresholdPolicy:
    policies = {r.policy for r in records}
    if len(policies) != 1:
        raise ValueError(
            f"records mix {len(policies)} threshold policies; summarize one at a time")
    return next(iter(policies))


def component_summaries(records: Sequence[SeparationRecord],
                        group_by: str) -> list[ComponentSummary]:
    """Group deltas by content label or by style label.

    Only records with a defined delta contribute. Output is sorted by
    mean delta descending, label ascending on ties.
    """
    if group_by not in ("content", "style"):
        raise ValueError(f"group_by must be 'content' or 'style', got {group_by!r}")
    usable = [r for r in records if r.delta is not None]
    if not usable:
        return []
    _require_single_policy(usable)

    groups: dict[tuple[str, str], list[float]] = {}
    for r in usable:
        if group_by == "content":
            key = (r.content, "content")
        else:
            key = (r.style, r.style_kind)
        groups.setdefault(key, []).append(r.delta)

    out = [ComponentSummary(label=label, kind=kind,
                            mean_delta=math.fsum(ds) / len(ds),
                            sd_delta=sample_sd(ds), n=len(ds))
           for (label, kind), ds in groups.items()]
    out.sort(key=lambda s: (-s.mean_delta, s.label))
    return out


# --- threshold sweep --------------------------------------------------------

@dataclass(frozen=True)
class SweepPoint:
    policy: ThresholdPolicy
    mean_iou_cs: float | None
    mean_miou_b: float | None
    mean_delta: float | None
    mean_support: float | None  # mean over images of (support_c + support_s) / 2
    effect: float | None
    n_images: int      # records seen for this policy
    n_missing: int     # records excluded for missing metrics
    absent: bool = False  # requested policy had no records at all


def _sweep_point(policy: ThresholdPolicy,
                 rows: Sequence[SeparationRecord]) -> SweepPoint:
    if not rows:
        return SweepPoint(policy=policy, mean_iou_cs=None, mean_miou_b=None,
                          mean_delta=None, mean_support=None, effect=None,
                          n_images=0, n_missing=0, absent=True)
    complete = [r for r in rows if r.delta is not None]
    n_missing = len(rows) - len(complete)
    if not complete:
        return SweepPoint(policy=policy, mean_iou_cs=None, mean_miou_b=None,
                          mean_delta=None, mean_support=None, effect=None,
                          n_images=len(rows), n_missing=n_missing)
    n = len(complete)
    mean_iou = math.fsum(r.iou_cs for r in complete) / n
    mean_miou = math.fsum(r.miou_b for r in complete) / n
    mean_delta = math.fsum(r.delta for r in complete) / n
    mean_support = math.fsum((r.support_c + r.support_s) / 2.0
                             for r in complete) / n
    eff = None
    sample = paired_sample_from_records(complete)
    if sample is not None:
        eff = effect_size(sample).value
    return SweepPoint(policy=policy, mean_iou_cs=mean_iou, mean_miou_b=mean_miou,
                      mean_delta=mean_delta, mean_support=mean_support,
                      effect=eff, n_images=len(rows), n_missing=n_missing)


def threshold_sweep(records: Sequence[SeparationRecord],
                    policies: Sequence[ThresholdPolicy] | None = None
                    ) -> list[SweepPoint]:
    """One aggregate point per threshold policy.

    When ``policies`` is given, every requested policy yields a point; one
    with no records is flagged absent rather than silently dropped. Without
    it, the policies found in the records are swept in sorted order.
    """
    by_policy: dict[ThresholdPolicy, list[SeparationRecord]] = {}
    for r in records:
        by_policy.setdefault(r.policy, []).append(r)
    if policies is None:
        policies = sorted(by_policy, key=lambda p: (p.kind, p.value))
    return [_sweep_point(p, by_policy.get(p, [])) for p in policies]


def mean_effect_size(points: Sequence[SweepPoint]) -> float | None:
    """Mean of the per-policy effect sizes that exist; None if none do."""
    vals = [p.effect for p in points if p.effect is not None]
    if not vals:
        return None
    return math.fsum(vals) / len(vals)
