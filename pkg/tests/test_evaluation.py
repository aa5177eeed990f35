"""Policy scoring: routed error, gap above tolerance, saved-token share."""

import numpy as np
import pytest

from pac_route.calibration import (
    GROUP_ALL,
    GroupThreshold,
    LabelAssigner,
    RoutingPolicy,
    TrivialAssigner,
)
from pac_route.evaluation import error_gap, evaluate, group_sizes, stp, trial_error
from pac_route.records import ResolvedRecord


def rec(i, u, loss, label=None, tt=None, tc=None):
    return ResolvedRecord(id=f"r{i}", uncertainty=u, loss=loss, group_label=label,
                          tokens_thinking=tt, tokens_cheap=tc)


def label_policy(thresholds, epsilon=0.05):
    return RoutingPolicy(
        mode="gpac", epsilon=epsilon, alpha=0.05, seed=0,
        assigner=LabelAssigner(labels=tuple(k for k, _ in thresholds)),
        thresholds=tuple(
            GroupThreshold(k, v, 0.0 if v is not None else None, 10)
            for k, v in thresholds
        ),
    )


def marginal_policy(threshold, epsilon=0.05):
    return RoutingPolicy(
        mode="marginal", epsilon=epsilon, alpha=0.05, seed=0,
        assigner=TrivialAssigner(),
        thresholds=(GroupThreshold(GROUP_ALL, threshold, 0.0, 10),),
    )


# ------------------------------------------------------------ trial error


def test_trial_error_counts_only_cheap_losses():
    policy = label_policy([("g", 0.5)])
    records = [
        rec(0, 0.2, 1.0, "g"),   # cheap, lost
        rec(1, 0.4, 0.0, "g"),   # cheap, fine
        rec(2, 0.9, 1.0, "g"),   # thinks, loss forgiven
        rec(3, 0.5, 1.0, "g"),   # boundary goes cheap
    ]
    err, per_group = trial_error(records, policy)
    assert err == pytest.approx(0.5)
    assert per_group == {"g": pytest.approx(0.5)}


def test_unresolved_records_think_but_still_count():
    policy = label_policy([("g", 1.0)])
    records = [rec(0, 0.1, 1.0, "g"), rec(1, 0.1, 1.0, None)]
    err, per_group = trial_error(records, policy)
    assert err == pytest.approx(0.5)  # unlabeled record thinks, dilutes the mean
    assert per_group == {"g": pytest.approx(1.0)}
    counts, unresolved = group_sizes(records, policy)
    assert counts == {"g": 1}
    assert unresolved == 1


def test_error_decomposes_over_groups():
    rng = np.random.default_rng(60)
    for _ in range(25):
        n = int(rng.integers(3, 80))
        labels = rng.choice(["a", "b", "c"], size=n)
        records = [
            rec(i, float(rng.uniform()), float(rng.choice([0.0, 0.5, 1.0])), labels[i])
            for i in range(n)
        ]
        policy = label_policy([("a", 0.3), ("b", None), ("c", 0.9)])
        err, per_group = trial_error(records, policy)
        counts, _ = group_sizes(records, policy)
        recombined = sum(per_group[g] * counts[g] for g in per_group) / n
        assert abs(err - recombined) < 1e-12


def test_trial_error_rejects_empty():
    with pytest.raises(ValueError):
        trial_error([], marginal_policy(0.5))


# ---------------------------------------------------------------- the gap


def test_error_gap_frozen_example():
    trials = [{"a": 0.03, "b": 0.07, "c": 0.10}]
    assert error_gap(trials, 0.05) == pytest.approx(0.07, abs=1e-15)


def test_error_gap_zero_when_under_tolerance():
    assert error_gap([{"a": 0.01, "b": 0.05}], 0.05) == 0.0


def test_error_gap_averages_before_clipping():
    # one bad trial is absorbed when the average stays under epsilon
    trials = [{"a": 0.09}, {"a": 0.01}]
    assert error_gap(trials, 0.05) == 0.0
    # a group present in only one trial is averaged over that one trial
    trials = [{"a": 0.02}, {"a": 0.02, "b": 0.08}]
    assert error_gap(trials, 0.05) == pytest.approx(0.03)


# ------------------------------------------------------------------- stp


def test_stp_frozen_cases():
    cheap = [rec(0, 0.1, 0.0, "g", tt=100, tc=10)]
    think = [rec(0, 0.9, 0.0, "g", tt=100, tc=10)]
    policy = label_policy([("g", 0.5)])
    assert stp(cheap, policy, "cascade") == pytest.approx(0.9)
    assert stp(cheap, policy, "router") == pytest.approx(0.9)
    assert stp(think, policy, "cascade") == pytest.approx(-0.1)
    assert stp(think, policy, "router") == pytest.approx(0.0)


def test_stp_router_never_below_cascade():
    rng = np.random.default_rng(123)
    policy = label_policy([("g", 0.5)])
    for _ in range(100):
        n = int(rng.integers(1, 30))
        records = [
            rec(i, float(rng.uniform()), 0.0, "g",
                tt=int(rng.integers(50, 800)), tc=int(rng.integers(1, 50)))
            for i in range(n)
        ]
        assert stp(records, policy, "router") >= stp(records, policy, "cascade") - 1e-12


def test_stp_requires_token_counts():
    policy = label_policy([("g", 0.5)])
    with pytest.raises(ValueError) as info:
        stp([rec(0, 0.1, 0.0, "g", tt=100, tc=None)], policy, "cascade")
    assert "tokens" in str(info.value)
    with pytest.raises(ValueError):
        stp([rec(0, 0.1, 0.0, "g", tt=0, tc=5)], policy, "router")


def test_stp_rejects_unknown_variant():
    with pytest.raises(ValueError):
        stp([rec(0, 0.1, 0.0, "g", tt=10, tc=1)], label_policy([("g", 0.5)]), "both")


# -------------------------------------------------------------- evaluate


def test_evaluate_single_trial_is_plain_scoring():
    records = [rec(i, u, l, "g") for i, (u, l) in
               enumerate([(0.2, 1.0), (0.4, 0.0), (0.9, 1.0)])]
    policy = label_policy([("g", 0.5)], epsilon=0.05)
    report = evaluate(records, policy)
    assert report.trials == 1
    assert report.error == pytest.approx(1 / 3)
    assert report.per_group_error == {"g": pytest.approx(1 / 3)}
    assert report.error_gap == pytest.approx(1 / 3 - 0.05)
    assert report.stp is None
    assert report.flagged_groups == ()


def test_evaluate_bootstrap_is_deterministic():
    rng = np.random.default_rng(71)
    records = [rec(i, float(rng.uniform()), float(rng.choice([0, 1], p=[0.8, 0.2])), "g")
               for i in range(50)]
    policy = label_policy([("g", 0.6)])
    a = evaluate(records, policy, trials=20, seed=5)
    b = evaluate(records, policy, trials=20, seed=5)
    assert a.to_dict() == b.to_dict()
    c = evaluate(records, policy, trials=20, seed=6)
    assert c.error != a.error  # different resamples almost surely differ


def test_evaluate_flags_groups_missing_from_some_trial():
    # one lonely record of group b: bootstrap resamples will drop it sometimes
    records = [rec(i, 0.3, 0.0, "a") for i in range(30)] + [rec(99, 0.3, 0.0, "b")]
    policy = label_policy([("a", 0.5), ("b", 0.5)])
    report = evaluate(records, policy, trials=50, seed=9)
    assert "b" in report.flagged_groups
    assert "a" not in report.flagged_groups


def test_evaluate_carries_stp():
    records = [rec(i, 0.2, 0.0, "g", tt=100, tc=10) for i in range(5)]
    policy = label_policy([("g", 0.5)])
    report = evaluate(records, policy, stp_variant="router")
    assert report.stp == pytest.approx(0.9)
    assert report.stp_variant == "router"


def test_evaluate_rejects_bad_trials():
    with pytest.raises(ValueError):
        evaluate([rec(0, 0.2, 0.0, "g")], label_policy([("g", 0.5)]), trials=0)
