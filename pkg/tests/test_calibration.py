"""Threshold selection, routing policies, and their serialized form."""

import json

import numpy as np
import pytest

from pac_route.calibration import (
    CHEAP,
    DEFAULT_N_MIN,
    GROUP_ALL,
    POLICY_VERSION,
    THINK,
    GroupThreshold,
    LabelAssigner,
    PolicyVersionError,
    RoutingPolicy,
    TrivialAssigner,
    assigner_from_dict,
    calibrate_gpac,
    calibrate_group,
    config_hash,
    load_policy,
    route,
    save_policy,
)
from pac_route.clustering import Partition
from pac_route.estimator import EstimatorConfig
from pac_route.records import ResolvedRecord


def pool(losses, uncertainties, label=None):
    return [
        ResolvedRecord(id=f"r{i}", uncertainty=u, loss=l, group_label=label)
        for i, (l, u) in enumerate(zip(losses, uncertainties))
    ]


def labeled(label, losses, uncertainties, start=0):
    return [
        ResolvedRecord(id=f"{label}{start + i}", uncertainty=u, loss=l, group_label=label)
        for i, (l, u) in enumerate(zip(losses, uncertainties))
    ]


# ------------------------------------------------------------- assigners


def test_trivial_assigner_pools_everything():
    a = TrivialAssigner()
    assert a.resolve("x", 0.2) == GROUP_ALL
    assert a.resolve(None, 0.9) == GROUP_ALL
    assert a.known_keys() == (GROUP_ALL,)


def test_label_assigner_open_and_closed():
    open_a = LabelAssigner()
    assert open_a.resolve("math", 0.5) == "math"
    assert open_a.resolve(None, 0.5) is None
    closed = LabelAssigner(labels=("math", "code"))
    assert closed.resolve("math", 0.5) == "math"
    assert closed.resolve("poetry", 0.5) is None
    assert closed.known_keys() == ("math", "code")


def test_assigner_round_trip_through_dict():
    for a in (TrivialAssigner(), LabelAssigner(labels=("a", "b")),
              Partition.from_centroids([0.2, 0.8])):
        back = assigner_from_dict(a.to_dict())
        assert type(back) is type(a)
        assert back.to_dict() == a.to_dict()


def test_assigner_from_dict_rejects_unknown_kind():
    with pytest.raises(ValueError):
        assigner_from_dict({"kind": "mystery"})


# ------------------------------------------------------- group calibration


def test_small_group_falls_back_to_always_think():
    recs = pool([0.0] * 5, np.linspace(0.1, 0.5, 5))
    t, curve = calibrate_group(recs, 0.05, EstimatorConfig(seed=1),
                               np.random.default_rng(1))
    assert t.always_think
    assert t.n_calibration == 5
    assert curve is None


def test_n_min_boundary_is_inclusive():
    recs = pool([0.0] * DEFAULT_N_MIN, np.linspace(0.05, 0.95, DEFAULT_N_MIN))
    t, curve = calibrate_group(recs, 0.5, EstimatorConfig(seed=2),
                               np.random.default_rng(2))
    assert not t.always_think
    assert curve is not None


def test_zero_loss_group_selects_top_candidate():
    recs = pool([0.0] * 40, np.linspace(0.02, 0.98, 40))
    t, _ = calibrate_group(recs, 0.05, EstimatorConfig(seed=3),
                           np.random.default_rng(3))
    assert t.threshold == pytest.approx(0.98)
    assert t.ucb_at_threshold == 0.0


def test_hopeless_group_admits_almost_nothing():
    # every record certain to be lost; only candidates whose prefix went
    # unsampled (or 0.0 itself) can look feasible, so the admitted share of
    # the pool stays tiny even though the selection is noisy
    recs = pool([1.0] * 60, np.linspace(0.01, 0.99, 60))
    t, curve = calibrate_group(recs, 0.05, EstimatorConfig(seed=4),
                               np.random.default_rng(4))
    assert curve is not None
    assert curve.ucb[-1] > 0.5  # the full pool is plainly infeasible
    if t.threshold is not None:
        admitted = np.mean([r.uncertainty <= t.threshold for r in recs])
        assert admitted <= 0.1


def test_selection_takes_largest_feasible_candidate():
    rng_outer = np.random.default_rng(31)
    for trial in range(10):
        losses = rng_outer.choice([0.0, 1.0], size=80, p=[0.9, 0.1])
        us = rng_outer.uniform(0, 1, 80)
        recs = pool(losses, us)
        cfg = EstimatorConfig(seed=trial)
        t, curve = calibrate_group(recs, 0.08, cfg, np.random.default_rng(trial))
        feasible = curve.candidates[curve.ucb <= 0.08]
        if len(feasible) == 0:
            assert t.always_think
        else:
            assert t.threshold == pytest.approx(feasible.max())


def test_ucb_offset_only_shrinks_the_selection():
    recs = pool(np.random.default_rng(8).choice([0, 1], 100, p=[0.93, 0.07]),
                np.random.default_rng(9).uniform(0, 1, 100))
    cfg = EstimatorConfig(seed=5)
    plain, _ = calibrate_group(recs, 0.1, cfg, np.random.default_rng(5))
    offset, _ = calibrate_group(recs, 0.1, cfg, np.random.default_rng(5),
                                ucb_offset=0.04)
    lo = -1.0 if offset.threshold is None else offset.threshold
    hi = -1.0 if plain.threshold is None else plain.threshold
    assert lo <= hi


def test_monotone_in_epsilon():
    # a looser tolerance can never pick a smaller threshold from the same draws
    recs = pool(np.random.default_rng(21).choice([0, 1], 120, p=[0.9, 0.1]),
                np.random.default_rng(22).uniform(0, 1, 120))
    cfg = EstimatorConfig(seed=6)
    picks = []
    for eps in (0.02, 0.05, 0.1, 0.2, 0.5):
        t, _ = calibrate_group(recs, eps, cfg, np.random.default_rng(6))
        picks.append(-1.0 if t.threshold is None else t.threshold)
    assert picks == sorted(picks)


def test_rejects_nonpositive_epsilon():
    recs = pool([0.0] * 20, np.linspace(0, 1, 20))
    with pytest.raises(ValueError):
        calibrate_group(recs, 0.0, EstimatorConfig(), np.random.default_rng(0))


# ------------------------------------------------------------ full runs


def test_gpac_calibrates_each_label_separately():
    recs = labeled("good", [0.0] * 50, np.linspace(0.01, 0.99, 50)) + \
        labeled("bad", [1.0] * 50, np.linspace(0.01, 0.99, 50))
    policy, report = calibrate_gpac(recs, LabelAssigner(), 0.05,
                                    EstimatorConfig(seed=10), mode="gpac")
    good = policy.threshold_for("good")
    bad = policy.threshold_for("bad")
    assert good.threshold == pytest.approx(0.99)
    bad_admitted = 0.0 if bad.always_think else np.mean(
        [r.uncertainty <= bad.threshold for r in recs if r.group_label == "bad"])
    assert bad_admitted <= 0.1
    assert report.n_total == 100
    assert report.n_unresolved == 0


def test_marginal_mode_pools_labels():
    recs = labeled("a", [0.0] * 30, np.linspace(0, 1, 30)) + \
        labeled("b", [0.0] * 30, np.linspace(0, 1, 30))
    policy, report = calibrate_gpac(recs, TrivialAssigner(), 0.05,
                                    EstimatorConfig(seed=11), mode="marginal")
    assert [t.group_key for t in policy.thresholds] == [GROUP_ALL]
    assert policy.thresholds[0].n_calibration == 60


def test_unlabeled_records_are_dropped_and_counted():
    recs = labeled("a", [0.0] * 20, np.linspace(0, 1, 20)) + \
        pool([0.0] * 7, np.linspace(0.1, 0.7, 7))
    policy, report = calibrate_gpac(recs, LabelAssigner(), 0.05,
                                    EstimatorConfig(seed=12))
    assert report.n_unresolved == 7
    assert policy.threshold_for("a").n_calibration == 20


def test_no_resolvable_records_is_an_error():
    recs = pool([0.0] * 5, np.linspace(0.1, 0.5, 5))
    with pytest.raises(ValueError):
        calibrate_gpac(recs, LabelAssigner(), 0.05, EstimatorConfig(seed=13))


def test_open_label_assigner_closes_over_seen_groups():
    recs = labeled("x", [0.0] * 15, np.linspace(0, 1, 15))
    policy, _ = calibrate_gpac(recs, LabelAssigner(), 0.05,
                               EstimatorConfig(seed=14))
    assert policy.assigner.known_keys() == ("x",)
    # an unseen label at routing time goes to the thinking model
    assert route(policy, "y", 0.01).action == THINK


def test_gpac_group_order_is_first_seen_for_open_assigners():
    recs = labeled("zeta", [0.0] * 12, np.linspace(0, 1, 12)) + \
        labeled("alpha", [0.0] * 12, np.linspace(0, 1, 12))
    policy, _ = calibrate_gpac(recs, LabelAssigner(), 0.05,
                               EstimatorConfig(seed=15))
    assert [t.group_key for t in policy.thresholds] == ["zeta", "alpha"]


def test_calibration_is_deterministic_in_seed():
    recs = labeled("a", np.random.default_rng(1).choice([0, 1], 40, p=[0.9, 0.1]),
                   np.random.default_rng(2).uniform(0, 1, 40))
    p1, _ = calibrate_gpac(recs, LabelAssigner(), 0.1, EstimatorConfig(seed=99))
    p2, _ = calibrate_gpac(recs, LabelAssigner(), 0.1, EstimatorConfig(seed=99))
    assert p1.to_dict() == p2.to_dict()
    p3, _ = calibrate_gpac(recs, LabelAssigner(), 0.1, EstimatorConfig(seed=100))
    assert p3.config_hash != p1.config_hash


def test_group_streams_do_not_bleed_into_each_other():
    # adding a second group must not change the first group's threshold
    a = labeled("a", np.random.default_rng(3).choice([0, 1], 60, p=[0.85, 0.15]),
                np.random.default_rng(4).uniform(0, 1, 60))
    b = labeled("b", [1.0] * 60, np.linspace(0, 1, 60))
    alone, _ = calibrate_gpac(a, LabelAssigner(), 0.1, EstimatorConfig(seed=55))
    both, _ = calibrate_gpac(a + b, LabelAssigner(), 0.1, EstimatorConfig(seed=55))
    assert alone.threshold_for("a").to_dict() == both.threshold_for("a").to_dict()


def test_report_curves_cover_each_calibrated_group():
    recs = labeled("a", [0.0] * 20, np.linspace(0, 1, 20)) + \
        labeled("b", [0.0] * 4, np.linspace(0.2, 0.8, 4))
    _, report = calibrate_gpac(recs, LabelAssigner(), 0.05,
                               EstimatorConfig(seed=16))
    by_key = {g["group_key"]: g for g in report.groups}
    assert "curve" in by_key["a"]
    assert "curve" not in by_key["b"]  # below n_min, never sampled


# --------------------------------------------------------------- routing


def test_route_boundary_goes_cheap():
    policy = RoutingPolicy(
        mode="gpac", epsilon=0.05, alpha=0.05, seed=0,
        assigner=LabelAssigner(labels=("g",)),
        thresholds=(GroupThreshold("g", 0.4, 0.01, 50),),
    )
    assert route(policy, "g", 0.4).action == CHEAP
    assert route(policy, "g", 0.400001).action == THINK
    assert route(policy, "g", 0.39).action == CHEAP


def test_route_always_think_and_unresolved():
    policy = RoutingPolicy(
        mode="gpac", epsilon=0.05, alpha=0.05, seed=0,
        assigner=LabelAssigner(labels=("g", "h")),
        thresholds=(GroupThreshold("g", None, None, 3),),
    )
    assert route(policy, "g", 0.0).action == THINK  # always-think sentinel
    assert route(policy, "h", 0.0).action == THINK  # no threshold recorded
    assert route(policy, "unknown", 0.0).action == THINK
    assert route(policy, "unknown", 0.0).group_key is None


def test_route_validates_uncertainty():
    policy = RoutingPolicy(
        mode="marginal", epsilon=0.05, alpha=0.05, seed=0,
        assigner=TrivialAssigner(),
        thresholds=(GroupThreshold(GROUP_ALL, 0.5, 0.01, 20),),
    )
    with pytest.raises(ValueError):
        route(policy, None, 1.2)


# ----------------------------------------------------------- persistence


def test_policy_json_round_trip(tmp_path):
    recs = labeled("a", [0.0] * 20, np.linspace(0, 1, 20)) + \
        labeled("b", [1.0] * 20, np.linspace(0, 1, 20))
    policy, _ = calibrate_gpac(recs, LabelAssigner(), 0.05,
                               EstimatorConfig(seed=17))
    path = tmp_path / "policy.json"
    save_policy(policy, path)
    back = load_policy(path)
    assert back.to_dict() == policy.to_dict()
    # routing decisions survive the round trip
    for u in np.linspace(0, 1, 17):
        assert route(back, "a", float(u)).action == route(policy, "a", float(u)).action


def test_policy_file_shape(tmp_path):
    recs = labeled("a", [0.0] * 20, np.linspace(0, 1, 20))
    policy, _ = calibrate_gpac(recs, LabelAssigner(), 0.05,
                               EstimatorConfig(seed=18))
    path = tmp_path / "policy.json"
    save_policy(policy, path)
    data = json.loads(path.read_text())
    assert data["version"] == POLICY_VERSION == "pac-route/1"
    assert data["provenance"]["config_hash"] == policy.config_hash
    assert data["thresholds"][0]["group_key"] == "a"


def test_always_think_serializes_as_string():
    t = GroupThreshold("g", None, None, 2)
    d = t.to_dict()
    assert d["threshold"] == "always_think"
    assert GroupThreshold.from_dict(d).always_think


def test_version_mismatch_is_rejected(tmp_path):
    recs = labeled("a", [0.0] * 20, np.linspace(0, 1, 20))
    policy, _ = calibrate_gpac(recs, LabelAssigner(), 0.05,
                               EstimatorConfig(seed=19))
    data = policy.to_dict()
    data["version"] = "pac-route/2"
    path = tmp_path / "policy.json"
    path.write_text(json.dumps(data))
    with pytest.raises(PolicyVersionError):
        load_policy(path)


def test_config_hash_tracks_inputs():
    a = config_hash(EstimatorConfig(seed=1), epsilon=0.05)
    b = config_hash(EstimatorConfig(seed=1), epsilon=0.05)
    c = config_hash(EstimatorConfig(seed=1), epsilon=0.06)
    assert a == b
    assert a != c
    assert len(a) == 16
