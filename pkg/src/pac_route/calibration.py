"""Per-group threshold calibration and the routing policy it produces.

For each group the selected threshold is the largest candidate whose upper
confidence bound on the routed loss stays at or below the tolerance epsilon:

    u_hat = max { u in grid : UCB_u(alpha) <= epsilon }.

When no candidate qualifies, or the group has fewer than n_min calibration
records, the group falls back to the always-think sentinel: every input of
that group goes to the thinking model, which trivially satisfies the
tolerance.  At routing time a score equal to the threshold goes to the cheap
model, and any input whose group cannot be resolved goes to the thinking
model.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .estimator import (
    EstimatorConfig,
    UcbCurve,
    candidate_grid,
    draw_z_samples,
    pi_weights,
    ucb_clt,
    ucb_hoeffding,
)
from .records import ResolvedRecord
from .seeding import substream

POLICY_VERSION = "pac-route/1"
MODES = ("marginal", "gpac", "cpac")
GROUP_ALL = "all"
CHEAP = "cheap"
THINK = "think"
DEFAULT_N_MIN = 10

GroupKey = str | int


class PolicyVersionError(ValueError):
    """Raised when a policy file declares a schema version we do not speak."""


@dataclass(frozen=True)
class TrivialAssigner:
    """Puts every record into the single group "all" (marginal calibration)."""

    def resolve(self, group_label: str | None, uncertainty: float) -> GroupKey | None:
        return GROUP_ALL

    def known_keys(self) -> tuple[GroupKey, ...] | None:
        return (GROUP_ALL,)

    def to_dict(self) -> dict:
        return {"kind": "trivial"}


@dataclass(frozen=True)
class LabelAssigner:
    """Groups records by their group_label.

    With an empty label tuple the assigner is open: any present label resolves
    to itself, which is how calibration discovers the groups.  A policy stores
    the closed form, where labels outside the tuple are unresolvable and the
    record routes to the thinking model.
    """

    labels: tuple[str, ...] = ()

    def resolve(self, group_label: str | None, uncertainty: float) -> GroupKey | None:
        if group_label is None:
            return None
        if self.labels and group_label not in self.labels:
            return None
        return group_label

    def known_keys(self) -> tuple[GroupKey, ...] | None:
        return self.labels if self.labels else None

    def to_dict(self) -> dict:
        return {"kind": "labels", "labels": list(self.labels)}


@dataclass(frozen=True)
class GroupThreshold:
    """Calibration outcome for one group."""

    group_key: GroupKey
    threshold: float | None          # None is the always-think sentinel
    ucb_at_threshold: float | None
    n_calibration: int

    @property
    def always_think(self) -> bool:
        return self.threshold is None

    def to_dict(self) -> dict:
        return {
            "group_key": self.group_key,
            "threshold": "always_think" if self.always_think else self.threshold,
            "ucb": self.ucb_at_threshold,
            "n": self.n_calibration,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GroupThreshold":
        raw = data["threshold"]
        threshold = None if raw == "always_think" else float(raw)
        ucb = data.get("ucb")
        return cls(
            group_key=data["group_key"],
            threshold=threshold,
            ucb_at_threshold=None if ucb is None else float(ucb),
            n_calibration=int(data["n"]),
        )


@dataclass(frozen=True)
class RoutingPolicy:
    """Everything needed to route new inputs: assigner plus per-group thresholds."""

    mode: str
    epsilon: float
    alpha: float
    seed: int
    assigner: Any
    thresholds: tuple[GroupThreshold, ...]
    config_hash: str = ""

    def threshold_for(self, group_key: GroupKey) -> GroupThreshold | None:
        for t in self.thresholds:
            if t.group_key == group_key:
                return t
        return None

    def to_dict(self) -> dict:
        return {
            "version": POLICY_VERSION,
            "mode": self.mode,
            "epsilon": self.epsilon,
            "alpha": self.alpha,
            "seed": self.seed,
            "assigner": self.assigner.to_dict(),
            "thresholds": [t.to_dict() for t in self.thresholds],
            "provenance": {"config_hash": self.config_hash},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RoutingPolicy":
        version = data.get("version")
        if version != POLICY_VERSION:
            raise PolicyVersionError(
                f"unsupported policy version {version!r}; this build speaks {POLICY_VERSION}"
            )
        return cls(
            mode=data["mode"],
            epsilon=float(data["epsilon"]),
            alpha=float(data["alpha"]),
            seed=int(data["seed"]),
            assigner=assigner_from_dict(data["assigner"]),
            thresholds=tuple(GroupThreshold.from_dict(t) for t in data["thresholds"]),
            config_hash=data.get("provenance", {}).get("config_hash", ""),
        )


@dataclass(frozen=True)
class RouteDecision:
    record_id: str
    group_key: GroupKey | None
    action: str

    def to_dict(self) -> dict:
        return {"id": self.record_id, "group_key": self.group_key, "action": self.action}


@dataclass(frozen=True)
class CalibrationReport:
    """Per-group diagnostics from a calibration run, for humans and plots."""

    groups: tuple[dict, ...]
    n_total: int
    n_unresolved: int

    def to_dict(self) -> dict:
        return {
            "groups": list(self.groups),
            "n_total": self.n_total,
            "n_unresolved": self.n_unresolved,
        }


def assigner_from_dict(data: dict):
    kind = data.get("kind")
    if kind == "trivial":
        return TrivialAssigner()
    if kind == "labels":
        return LabelAssigner(labels=tuple(data["labels"]))
    if kind == "centroids":
        from .clustering import Partition

        return Partition.from_centroids(data["centroids"])
    raise ValueError(f"unknown assigner kind {kind!r}")


def calibrate_group(
    records_j: Sequence[ResolvedRecord],
    epsilon: float,
    config: EstimatorConfig,
    rng: np.random.Generator,
    *,
    group_key: GroupKey = GROUP_ALL,
    n_min: int = DEFAULT_N_MIN,
    ucb_offset: float = 0.0,
) -> tuple[GroupThreshold, UcbCurve | None]:
    """Select one group's threshold; returns the bound curve for reporting.

    ucb_offset is added to every bound value before selection (used by joint
    clustered calibration to budget for the data reuse).
    """
    if not epsilon > 0:
        raise ValueError("tolerance epsilon must be positive")
    n = len(records_j)
    if n < n_min:
        return GroupThreshold(group_key, None, None, n), None
    samples = draw_z_samples(records_j, config, rng)
    grid = candidate_grid(records_j)
    if config.method == "clt":
        curve = ucb_clt(samples, grid, config.alpha)
    else:
        pi_min = float(pi_weights(config, records_j).min())
        curve = ucb_hoeffding(samples, grid, config.alpha, config.bound_B, pi_min)
    if ucb_offset:
        curve = UcbCurve(curve.candidates, curve.mean, curve.ucb + ucb_offset)
    feasible = np.flatnonzero(curve.ucb <= epsilon)
    if len(feasible) == 0:
        return GroupThreshold(group_key, None, None, n), curve
    pick = int(feasible[-1])
    return (
        GroupThreshold(group_key, float(curve.candidates[pick]), float(curve.ucb[pick]), n),
        curve,
    )


def calibrate_gpac(
    records: Sequence[ResolvedRecord],
    assigner,
    epsilon: float,
    config: EstimatorConfig,
    *,
    mode: str = "gpac",
    n_min: int = DEFAULT_N_MIN,
    ucb_offset: float = 0.0,
) -> tuple[RoutingPolicy, CalibrationReport]:
    """Calibrate one threshold per assigner group over `records`.

    Records whose group cannot be resolved are excluded from calibration and
    only counted in the report.  Each group draws from its own substream of
    config.seed, so adding a group never changes another group's result.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    buckets: dict[GroupKey, list[ResolvedRecord]] = {}
    n_unresolved = 0
    for r in records:
        key = assigner.resolve(r.group_label, r.uncertainty)
        if key is None:
            n_unresolved += 1
            continue
        buckets.setdefault(key, []).append(r)
    if not buckets:
        raise ValueError("no record resolves to any group; nothing to calibrate")

    known = assigner.known_keys()
    keys = list(known) if known is not None else list(buckets)
    thresholds = []
    group_entries = []
    for key in keys:
        group_records = buckets.get(key, [])
        rng = substream(config.seed, "calibrate", key)
        threshold, curve = calibrate_group(
            group_records, epsilon, config, rng,
            group_key=key, n_min=n_min, ucb_offset=ucb_offset,
        )
        thresholds.append(threshold)
        entry = threshold.to_dict()
        if curve is not None:
            entry["curve"] = {
                "candidates": [float(c) for c in curve.candidates],
                "mean": [float(v) for v in curve.mean],
                "ucb": [float(v) for v in curve.ucb],
            }
        group_entries.append(entry)

    if isinstance(assigner, LabelAssigner) and not assigner.labels:
        assigner = LabelAssigner(labels=tuple(keys))
    policy = RoutingPolicy(
        mode=mode,
        epsilon=epsilon,
        alpha=config.alpha,
        seed=config.seed,
        assigner=assigner,
        thresholds=tuple(thresholds),
        config_hash=config_hash(config, mode=mode, epsilon=epsilon, n_min=n_min, ucb_offset=ucb_offset),
    )
    report = CalibrationReport(
        groups=tuple(group_entries), n_total=len(records), n_unresolved=n_unresolved
    )
    return policy, report


def route(
    policy: RoutingPolicy,
    group_hint: str | None,
    uncertainty: float,
    *,
    record_id: str = "",
) -> RouteDecision:
    """Route one input: cheap iff its group resolves and U <= that group's threshold."""
    if not 0.0 <= uncertainty <= 1.0:
        raise ValueError(f"uncertainty {uncertainty} outside [0, 1]")
    key = policy.assigner.resolve(group_hint, uncertainty)
    if key is None:
        return RouteDecision(record_id, None, THINK)
    threshold = policy.threshold_for(key)
    if threshold is None or threshold.always_think:
        return RouteDecision(record_id, key, THINK)
    action = CHEAP if uncertainty <= threshold.threshold else THINK
    return RouteDecision(record_id, key, action)


def config_hash(config: EstimatorConfig, **extras) -> str:
    """Short stable digest of the calibration configuration."""
    payload = {
        "method": config.method,
        "alpha": config.alpha,
        "pi": config.pi if isinstance(config.pi, (int, float)) else dict(config.pi),
        "m": config.m,
        "seed": config.seed,
        "bound_B": config.bound_B,
    }
    payload.update(extras)
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_policy(policy: RoutingPolicy, path) -> None:
    """Write the policy JSON atomically (write-then-rename)."""
    from .io import atomic_write_json

    atomic_write_json(policy.to_dict(), path)


def load_policy(path) -> RoutingPolicy:
    with open(path, encoding="utf-8") as fh:
        return RoutingPolicy.from_dict(json.load(fh))


__all__ = [
    "POLICY_VERSION",
    "MODES",
    "GROUP_ALL",
    "CHEAP",
    "THINK",
    "DEFAULT_N_MIN",
    "PolicyVersionError",
    "TrivialAssigner",
    "LabelAssigner",
    "GroupThreshold",
    "RoutingPolicy",
    "RouteDecision",
    "CalibrationReport",
    "assigner_from_dict",
    "calibrate_group",
    "calibrate_gpac",
    "route",
    "config_hash",
    "save_policy",
    "load_policy",
]
