import math

import numpy as np
import pytest

from _oracles import betainc_oracle, t_two_sided_p_oracle
from attnsep.masks import SeparationRecord, ThresholdPolicy
from attnsep.stats import (ComponentSummary, EffectSizeResult, PairedSample,
                           component_summaries, effect_size, mean_effect_size,
                           paired_sample_from_records, paired_t_test,
                           regularized_incomplete_beta, sample_sd,
                           t_two_sided_p, threshold_sweep)


def test_incomplete_beta_against_high_precision():
    mpmath = pytest.importorskip("mpmath")  # noqa: F841  oracle dependency
    rng = np.random.default_rng(0)
    cases = [(0.5, 0.5, 0.5), (2.0, 0.5, 0.9), (10.0, 0.5, 0.01),
             (0.5, 3.0, 0.2), (25.0, 0.5, 0.999), (1.0, 1.0, 0.42)]
    cases += [(float(rng.uniform(0.2, 30)), float(rng.uniform(0.2, 30)),
               float(rng.uniform(1e-6, 1 - 1e-6))) for _ in range(60)]
    for a, b, x in cases:
        want = betainc_oracle(a, b, x)
        got = regularized_incomplete_beta(a, b, x)
        assert got == pytest.approx(want, rel=1e-10, abs=1e-300), (a, b, x)


def test_incomplete_beta_edges():
    assert regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0
    assert regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0
    with pytest.raises(ValueError):
        regularized_incomplete_beta(-1.0, 2.0, 0.5)
    with pytest.raises(ValueError):
        regularized_incomplete_beta(1.0, 2.0, 1.5)


def test_t_p_known_example():
    # d = (1, 2, 3, 4, 5): mean 3, sd sqrt(2.5), t = 3 / sqrt(2.5/5)
    pairs = tuple((0.0, d / 10.0) for d in (1, 2, 3, 4, 5))
    res = paired_t_test(PairedSample(pairs))
    assert res.t == pytest.approx(4.242640687119285, abs=1e-12)
    assert res.df == 4
    assert res.p_two_sided == pytest.approx(
        t_two_sided_p_oracle(res.t, 4), abs=1e-10)
    assert not res.degenerate


def test_t_p_matches_oracle_broadly():
    pytest.importorskip("mpmath")
    for t in (0.0, 0.3, 1.0, 2.5, 7.0, 30.0):
        for df in (1, 2, 4, 9, 30, 200):
            assert t_two_sided_p(t, df) == pytest.approx(
                t_two_sided_p_oracle(t, df), rel=1e-9, abs=1e-15)


def test_p_symmetric_and_monotone():
    assert t_two_sided_p(2.0, 5) == t_two_sided_p(-2.0, 5)
    ps = [t_two_sided_p(t, 7) for t in (0.0, 0.5, 1.0, 2.0, 4.0, 8.0)]
    assert ps[0] == 1.0
    assert all(a > b for a, b in zip(ps, ps[1:]))


def test_degenerate_zero_sd():
    same = PairedSample(tuple((0.2, 0.5) for _ in range(4)))
    res = paired_t_test(same)
    assert res.degenerate and math.isinf(res.t) and res.p_two_sided == 0.0
    flat = PairedSample(tuple((0.3, 0.3) for _ in range(4)))
    res = paired_t_test(flat)
    assert res.degenerate and res.t == 0.0 and res.p_two_sided == 1.0


def test_paired_sample_validation():
    with pytest.raises(ValueError):
        PairedSample(pairs=((0.1, 0.2),))
    with pytest.raises(ValueError):
        PairedSample(pairs=((0.1, 1.2), (0.1, 0.2)))
    with pytest.raises(ValueError):
        PairedSample(pairs=((-0.1, 0.2), (0.1, 0.2)))


def test_sample_sd():
    assert sample_sd([3.0]) == 0.0
    assert sample_sd([1.0, 2.0, 3.0, 4.0, 5.0]) == pytest.approx(
        math.sqrt(2.5), abs=1e-15)
    with pytest.raises(ValueError):
        sample_sd([])


def test_effect_size_hand_example():
    # sides a = (0, .2), b = (.4, .8): sd_a = .1414..., sd_b = .2828...
    sample = PairedSample(pairs=((0.0, 0.4), (0.2, 0.8)))
    res = effect_size(sample)
    sd_a = sample_sd([0.0, 0.2])
    sd_b = sample_sd([0.4, 0.8])
    pooled = math.sqrt((sd_a ** 2 + sd_b ** 2) / 2)
    assert res.value == pytest.approx(abs(0.6 - 0.1) / pooled, abs=1e-12)
    assert res.convention == "abs_mean_diff_over_pooled_sd"


def test_effect_size_degenerate():
    sample = PairedSample(pairs=((0.2, 0.5), (0.2, 0.5)))
    res = effect_size(sample)
    assert res.degenerate and res.value is None


def _rec(content="giraffe", style="cubism", kind="movement", template=1,
         policy=ThresholdPolicy("fixed", 0.4), iou_cs=0.1, miou_b=0.3,
         support=(10, 12), n_pairs=14):
    delta = None
    if iou_cs is not None and miou_b is not None:
        delta = miou_b - iou_cs
    return SeparationRecord(
        content=content, style=style, style_kind=kind, template=template,
        policy=policy, iou_cs=iou_cs, miou_b=miou_b, delta=delta,
        support_c=support[0], support_s=support[1], n_pairs=n_pairs,
        degenerate=delta is None)


def test_paired_sample_from_records_skips_missing():
    recs = [_rec(), _rec(iou_cs=None, miou_b=None), _rec(iou_cs=0.2)]
    sample = paired_sample_from_records(recs)
    assert sample.n == 2
    assert paired_sample_from_records([_rec()]) is None


def test_component_summaries_grouping_and_order():
    recs = [_rec(content="giraffe", iou_cs=0.1, miou_b=0.5),
            _rec(content="giraffe", iou_cs=0.2, miou_b=0.4),
            _rec(content="bench", iou_cs=0.1, miou_b=0.8),
            _rec(content="bench", iou_cs=None, miou_b=None),
            _rec(content="apple", iou_cs=0.3, miou_b=0.3)]
    out = component_summaries(recs, "content")
    assert [s.label for s in out] == ["bench", "giraffe", "apple"]
    bench = out[0]
    assert bench.n == 1 and bench.mean_delta == pytest.approx(0.7)
    assert bench.sd_delta == 0.0
    giraffe = out[1]
    assert giraffe.mean_delta == pytest.approx(0.3)
    assert giraffe.sd_delta == pytest.approx(sample_sd([0.4, 0.2]), abs=1e-15)
    # group sizes add up to the records that actually carried a delta
    assert sum(s.n for s in out) == 4


def test_component_summaries_style_kind_carried():
    recs = [_rec(style="rembrandt", kind="artist"),
            _rec(style="cubism", kind="movement")]
    out = component_summaries(recs, "style")
    kinds = {s.label: s.kind for s in out}
    assert kinds == {"rembrandt": "artist", "cubism": "movement"}


def test_component_summaries_rejects_mixed_policies():
    recs = [_rec(), _rec(policy=ThresholdPolicy("fixed", 0.5))]
    with pytest.raises(ValueError):
        component_summaries(recs, "content")
    assert component_summaries([], "content") == []
    with pytest.raises(ValueError):
        component_summaries(recs, "template")


def test_sweep_means_match_single_pass_oracle():
    rng = np.random.default_rng(1)
    policies = [ThresholdPolicy("fixed", t) for t in (0.3, 0.4)]
    recs = []
    for policy in policies:
        for _ in range(15):
            a, b = rng.uniform(0, 0.5), rng.uniform(0, 1)
            recs.append(_rec(policy=policy, iou_cs=float(a), miou_b=float(b),
                             support=(int(rng.integers(0, 99)),
                                      int(rng.integers(0, 99)))))
    points = threshold_sweep(recs)
    assert [p.policy for p in points] == policies
    for point in points:
        rows = [r for r in recs if r.policy == point.policy]
        # independent single-pass accumulation
        tot_i = tot_m = tot_s = 0.0
        for r in rows:
            tot_i += r.iou_cs
            tot_m += r.miou_b
            tot_s += (r.support_c + r.support_s) / 2
        n = len(rows)
        assert point.n_images == n and point.n_missing == 0
        assert point.mean_iou_cs == pytest.approx(tot_i / n, abs=1e-9)
        assert point.mean_miou_b == pytest.approx(tot_m / n, abs=1e-9)
        assert point.mean_delta == pytest.approx((tot_m - tot_i) / n, abs=1e-9)
        assert point.mean_support == pytest.approx(tot_s / n, abs=1e-9)
        assert point.effect is not None


def test_sweep_flags_absent_policy_and_missing_rows():
    recs = [_rec(), _rec(iou_cs=None, miou_b=None)]
    requested = [ThresholdPolicy("fixed", 0.4), ThresholdPolicy("fixed", 0.9)]
    points = threshold_sweep(recs, requested)
    assert not points[0].absent
    assert points[0].n_images == 2 and points[0].n_missing == 1
    assert points[1].absent and points[1].n_images == 0
    assert points[1].mean_delta is None
    assert mean_effect_size(points) is None  # single pair -> no effect size


def test_sweep_defaults_sort_policies():
    recs = [_rec(policy=ThresholdPolicy("percentile", 0.7)),
            _rec(policy=ThresholdPolicy("fixed", 0.5)),
            _rec(policy=ThresholdPolicy("fixed", 0.2))]
    points = threshold_sweep(recs)
    assert [(p.policy.kind, p.policy.value) for p in points] == [
        ("fixed", 0.2), ("fixed", 0.5), ("percentile", 0.7)]
