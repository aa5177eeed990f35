"""Deployment metrics for a routing policy on held-out records.

Error charges each record its loss when routed to the cheap model and zero
when routed to the thinking model, averaged over the whole set; per-group
errors are the same mean restricted to one group's records.  The tolerance
gap sums, over groups, how far the trial-averaged group error sits above the
tolerance.  Saved thinking percentage (STP) compares spent tokens against
always thinking, in two accounting styles:

    cascade: the cheap model always runs, thinking runs on routed-think inputs;
    router:  exactly one model runs per input.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

from .calibration import CHEAP, GroupKey, RouteDecision, RoutingPolicy, route
from .records import ResolvedRecord
from .seeding import substream

STP_VARIANTS = ("cascade", "router")


@dataclass(frozen=True)
class MetricsReport:
    error: float
    per_group_error: dict[GroupKey, float]
    error_gap: float
    n_per_group: dict[GroupKey, int]
    n_unresolved: int
    trials: int
    stp: float | None = None
    stp_variant: str | None = None
    flagged_groups: tuple[GroupKey, ...] = ()

    def to_dict(self) -> dict:
        return {
            "error": self.error,
            "per_group_error": dict(self.per_group_error),
            "error_gap": self.error_gap,
            "n_per_group": dict(self.n_per_group),
            "n_unresolved": self.n_unresolved,
            "trials": self.trials,
            "stp": self.stp,
            "stp_variant": self.stp_variant,
            "flagged_groups": list(self.flagged_groups),
        }


def _decide(records: Sequence[ResolvedRecord], policy: RoutingPolicy) -> list[RouteDecision]:
    return [
        route(policy, r.group_label, r.uncertainty, record_id=r.id) for r in records
    ]


def trial_error(
    records: Sequence[ResolvedRecord], policy: RoutingPolicy
) -> tuple[float, dict[GroupKey, float]]:
    """Mean routed loss over all records, and the same restricted per group.

    Records whose group does not resolve are routed to the thinking model;
    they count toward the overall mean but belong to no group bucket, so the
    overall error stays the group-size weighted mean of the group errors.
    """
    if not records:
        raise ValueError("cannot score an empty record set")
    total = 0.0
    sums: dict[GroupKey, float] = {}
    counts: dict[GroupKey, int] = {}
    for r, d in zip(records, _decide(records, policy)):
        contribution = r.loss if d.action == CHEAP else 0.0
        total += contribution
        if d.group_key is not None:
            sums[d.group_key] = sums.get(d.group_key, 0.0) + contribution
            counts[d.group_key] = counts.get(d.group_key, 0) + 1
    per_group = {key: sums[key] / counts[key] for key in sums}
    return total / len(records), per_group


def group_sizes(
    records: Sequence[ResolvedRecord], policy: RoutingPolicy
) -> tuple[dict[GroupKey, int], int]:
    """Resolved-group record counts and the number of unresolvable records."""
    counts: dict[GroupKey, int] = {}
    unresolved = 0
    for r in records:
        key = policy.assigner.resolve(r.group_label, r.uncertainty)
        if key is None:
            unresolved += 1
        else:
            counts[key] = counts.get(key, 0) + 1
    return counts, unresolved


def error_gap(trial_group_errors: Sequence[Mapping[GroupKey, float]], epsilon: float) -> float:
    """Sum over groups of the excess of the trial-averaged error above epsilon.

    A group missing from some trial (no records drawn) is averaged over the
    trials where it appears.
    """
    sums: dict[GroupKey, float] = {}
    counts: dict[GroupKey, int] = {}
    for per_trial in trial_group_errors:
        for key, value in per_trial.items():
            sums[key] = sums.get(key, 0.0) + value
            counts[key] = counts.get(key, 0) + 1
    return sum(max(sums[key] / counts[key] - epsilon, 0.0) for key in sums)


def stp(records: Sequence[ResolvedRecord], policy: RoutingPolicy, variant: str) -> float:
    """Mean saved-thinking fraction under the chosen accounting (<= 1, may be < 0)."""
    if variant not in STP_VARIANTS:
        raise ValueError(f"stp variant must be one of {STP_VARIANTS}, got {variant!r}")
    if not records:
        raise ValueError("cannot score an empty record set")
    saved = 0.0
    for r, d in zip(records, _decide(records, policy)):
        if r.tokens_thinking is None or r.tokens_cheap is None:
            raise ValueError(f"record {r.id}: STP needs tokens_thinking and tokens_cheap")
        if r.tokens_thinking <= 0:
            raise ValueError(f"record {r.id}: tokens_thinking must be positive")
        cheap = d.action == CHEAP
        if variant == "cascade":
            spent = r.tokens_cheap + (0 if cheap else r.tokens_thinking)
        else:
            spent = r.tokens_cheap if cheap else r.tokens_thinking
        saved += 1.0 - spent / r.tokens_thinking
    return saved / len(records)


def evaluate(
    records: Sequence[ResolvedRecord],
    policy: RoutingPolicy,
    *,
    trials: int = 1,
    seed: int = 0,
    stp_variant: str | None = None,
) -> MetricsReport:
    """Score a policy on held-out records.

    With trials > 1 each trial rescores a bootstrap resample of the records
    (drawn from substream (seed, trial index)) and per-group errors are
    averaged across trials before the gap is taken; groups that miss at least
    one trial are flagged in the report.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    n_per_group, n_unresolved = group_sizes(records, policy)
    trial_errors = []
    trial_groups: list[dict[GroupKey, float]] = []
    stp_values = []
    for t in range(trials):
        if trials == 1:
            sample = list(records)
        else:
            idx = substream(seed, "evaluate", t).integers(0, len(records), len(records))
            sample = [records[i] for i in idx]
        err, per_group = trial_error(sample, policy)
        trial_errors.append(err)
        trial_groups.append(per_group)
        if stp_variant is not None:
            stp_values.append(stp(sample, policy, stp_variant))
    averaged: dict[GroupKey, float] = {}
    appearances: dict[GroupKey, int] = {}
    for per_trial in trial_groups:
        for key, value in per_trial.items():
            averaged[key] = averaged.get(key, 0.0) + value
            appearances[key] = appearances.get(key, 0) + 1
    per_group_error = {key: averaged[key] / appearances[key] for key in averaged}
    flagged = tuple(key for key in per_group_error if appearances[key] < trials)
    return MetricsReport(
        error=sum(trial_errors) / trials,
        per_group_error=per_group_error,
        error_gap=error_gap(trial_groups, policy.epsilon),
        n_per_group=n_per_group,
        n_unresolved=n_unresolved,
        trials=trials,
        stp=sum(stp_values) / trials if stp_values else None,
        stp_variant=stp_variant if stp_values else None,
        flagged_groups=flagged,
    )


__all__ = [
    "STP_VARIANTS",
    "MetricsReport",
    "trial_error",
    "group_sizes",
    "error_gap",
    "stp",
    "evaluate",
]
