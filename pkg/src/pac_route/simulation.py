"""Synthetic populations with known risk, for verifying the guarantees.

A synthetic spec is a mixture of groups.  Within every group the uncertainty
score is uniform on [0, 1] and the loss is Bernoulli with a piecewise-
constant success probability over score bins, so the true risk of any
threshold rule has a closed form.  The coverage experiment repeatedly draws a
calibration set, fits a policy, and judges each group's TRUE risk against the
tolerance; reported coverage is the fraction of trials where the guarantee
held.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .calibration import (
    GroupKey,
    LabelAssigner,
    RoutingPolicy,
    TrivialAssigner,
    calibrate_gpac,
    GROUP_ALL,
)
from .clustering import ClusterConfig, Partition, calibrate_cpac
from .estimator import EstimatorConfig
from .records import ResolvedRecord
from .seeding import derive_seed, substream

SIM_METHODS = ("marginal", "gpac", "cpac")


@dataclass(frozen=True)
class GroupSpec:
    """One mixture component: bin edges over [0, 1] and a loss probability per bin."""

    name: str
    weight: float
    bin_edges: tuple[float, ...]
    loss_prob: tuple[float, ...]
    tokens_thinking: int = 400
    tokens_cheap: int = 50

    def __post_init__(self):
        edges = tuple(float(e) for e in self.bin_edges)
        probs = tuple(float(p) for p in self.loss_prob)
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "loss_prob", probs)
        if not self.weight > 0:
            raise ValueError(f"group {self.name}: weight must be positive")
        if len(edges) < 2 or len(probs) != len(edges) - 1:
            raise ValueError(f"group {self.name}: need one loss probability per bin")
        if edges[0] != 0.0 or edges[-1] != 1.0:
            raise ValueError(f"group {self.name}: bin edges must start at 0 and end at 1")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError(f"group {self.name}: bin edges must be strictly ascending")
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError(f"group {self.name}: loss probabilities must lie in [0, 1]")
        if self.tokens_thinking <= 0 or self.tokens_cheap < 0:
            raise ValueError(f"group {self.name}: bad token counts")


@dataclass(frozen=True)
class SyntheticSpec:
    groups: tuple[GroupSpec, ...]
    name: str = ""
    notes: str = ""

    def __post_init__(self):
        if not self.groups:
            raise ValueError("a synthetic spec needs at least one group")
        names = [g.name for g in self.groups]
        if len(set(names)) != len(names):
            raise ValueError("group names must be distinct")
        total = sum(g.weight for g in self.groups)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"group weights must sum to 1, got {total}")

    @property
    def weights(self) -> np.ndarray:
        return np.array([g.weight for g in self.groups])

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "notes": self.notes,
            "groups": [
                {
                    "name": g.name,
                    "weight": g.weight,
                    "bins": list(g.bin_edges),
                    "loss_prob": list(g.loss_prob),
                    "tokens_thinking": g.tokens_thinking,
                    "tokens_cheap": g.tokens_cheap,
                }
                for g in self.groups
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticSpec":
        groups = tuple(
            GroupSpec(
                name=str(g.get("name", f"g{i}")),
                weight=float(g["weight"]),
                bin_edges=tuple(g["bins"]),
                loss_prob=tuple(g["loss_prob"]),
                tokens_thinking=int(g.get("tokens_thinking", 400)),
                tokens_cheap=int(g.get("tokens_cheap", 50)),
            )
            for i, g in enumerate(data["groups"])
        )
        return cls(groups=groups, name=str(data.get("name", "")), notes=str(data.get("notes", "")))


def load_spec(path) -> SyntheticSpec:
    with open(path, encoding="utf-8") as fh:
        return SyntheticSpec.from_dict(json.load(fh))


def _prob_at(group: GroupSpec, u: np.ndarray) -> np.ndarray:
    edges = np.asarray(group.bin_edges)
    idx = np.clip(np.searchsorted(edges, u, side="right") - 1, 0, len(group.loss_prob) - 1)
    return np.asarray(group.loss_prob)[idx]


def sample_group(
    spec: SyntheticSpec, group_index: int, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """n (uncertainty, loss) draws from one group's conditional distribution."""
    group = spec.groups[group_index]
    u = rng.random(n)
    loss = (rng.random(n) < _prob_at(group, u)).astype(float)
    return u, loss


def generate(spec: SyntheticSpec, n: int, rng: np.random.Generator) -> list[ResolvedRecord]:
    """Draw n labeled records from the mixture.

    Draw order is fixed (group indices, then scores, then loss coins), so a
    given generator state always yields the same records.
    """
    group_idx = rng.choice(len(spec.groups), size=n, p=spec.weights)
    u = rng.random(n)
    coins = rng.random(n)
    probs = np.empty(n)
    for j, group in enumerate(spec.groups):
        mask = group_idx == j
        if mask.any():
            probs[mask] = _prob_at(group, u[mask])
    losses = (coins < probs).astype(float)
    return [
        ResolvedRecord(
            id=f"s{i}",
            uncertainty=float(u[i]),
            group_label=spec.groups[group_idx[i]].name,
            loss=float(losses[i]),
            tokens_thinking=spec.groups[group_idx[i]].tokens_thinking,
            tokens_cheap=spec.groups[group_idx[i]].tokens_cheap,
        )
        for i in range(n)
    ]


def true_risk(spec: SyntheticSpec, group_index: int, u: float) -> float:
    """Exact E[loss * 1{U <= u}] within one group: sum of covered bin mass times bin probability."""
    group = spec.groups[group_index]
    lo = np.asarray(group.bin_edges[:-1])
    hi = np.asarray(group.bin_edges[1:])
    covered = np.clip(np.minimum(hi, u) - lo, 0.0, None)
    return float(np.sum(covered * np.asarray(group.loss_prob)))


def mixture_profile(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """Merged bin edges and the group-weighted loss probability in each cell."""
    edges = np.unique(np.concatenate([g.bin_edges for g in spec.groups]))
    mids = (edges[:-1] + edges[1:]) / 2.0
    probs = np.zeros(len(mids))
    for g in spec.groups:
        probs += g.weight * _prob_at(g, mids)
    return edges, probs


def _mixture_integral(edges: np.ndarray, probs: np.ndarray, lo: float, hi: float) -> float:
    """Integral of the piecewise-constant mixture probability over [lo, hi]."""
    if hi <= lo:
        return 0.0
    covered = np.clip(np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo), 0.0, None)
    return float(np.sum(covered * probs))


def policy_true_metrics(
    spec: SyntheticSpec, policy: RoutingPolicy
) -> tuple[dict[GroupKey, float], float]:
    """True per-group risk and true cheap-routing probability of a fitted policy.

    For marginal policies the risks are reported against the spec's real
    groups (the single learned threshold applies to each); for label policies
    against the labeled groups; for partition policies against the learned
    score intervals, whose records are a mixture of the real groups.
    """

    def threshold_value(key) -> float | None:
        t = policy.threshold_for(key)
        if t is None or t.always_think:
            return None
        return t.threshold

    assigner = policy.assigner
    if isinstance(assigner, Partition):
        edges, probs = mixture_profile(spec)
        risks: dict[GroupKey, float] = {}
        efficiency = 0.0
        for j, (lo, hi) in enumerate(assigner.intervals()):
            u = threshold_value(j)
            top = lo if u is None else min(max(u, lo), hi)
            risks[j] = _mixture_integral(edges, probs, lo, top) / (hi - lo)
            efficiency += top - lo
        return risks, efficiency
    if isinstance(assigner, TrivialAssigner):
        u = threshold_value(GROUP_ALL)
        cut = 0.0 if u is None else u
        risks = {g.name: true_risk(spec, j, cut) for j, g in enumerate(spec.groups)}
        return risks, cut
    risks = {}
    efficiency = 0.0
    for j, g in enumerate(spec.groups):
        u = threshold_value(g.name)
        cut = 0.0 if u is None else u
        risks[g.name] = true_risk(spec, j, cut)
        efficiency += g.weight * cut
    return risks, efficiency


@dataclass(frozen=True)
class CoverageReport:
    """Aggregate of a coverage experiment; coverage counts trials with true risk <= epsilon."""

    per_group_coverage: dict[GroupKey, float]
    per_group_mean_risk: dict[GroupKey, float]
    efficiency: float
    trials: int
    method: str
    epsilon: float
    alpha: float
    n_cal: int

    def to_dict(self) -> dict:
        return {
            "per_group_coverage": {str(k): v for k, v in self.per_group_coverage.items()},
            "per_group_mean_risk": {str(k): v for k, v in self.per_group_mean_risk.items()},
            "efficiency": self.efficiency,
            "trials": self.trials,
            "method": self.method,
            "epsilon": self.epsilon,
            "alpha": self.alpha,
            "n_cal": self.n_cal,
        }


def binomial_slack(level: float, trials: int, n_se: float = 3.0) -> float:
    """n_se standard errors of a trials-sized binomial at rate `level`."""
    return n_se * math.sqrt(level * (1.0 - level) / trials)


def coverage_experiment(
    spec: SyntheticSpec,
    n_cal: int,
    trials: int,
    epsilon: float,
    alpha: float,
    method: str,
    est_config: EstimatorConfig,
    cluster_config: ClusterConfig | None = None,
) -> CoverageReport:
    """Fit `trials` policies on fresh draws and score their true risks.

    Every trial derives its data and estimator streams from (seed, trial
    index), so runs are reproducible and trials are mutually independent.
    alpha overrides the estimator config's level so the two cannot drift
    apart.
    """
    if method not in SIM_METHODS:
        raise ValueError(f"method must be one of {SIM_METHODS}, got {method!r}")
    if method == "cpac" and cluster_config is None:
        raise ValueError("cpac needs a cluster config")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    master = est_config.seed
    covered: dict[GroupKey, int] = {}
    risk_sums: dict[GroupKey, float] = {}
    efficiency_sum = 0.0
    for t in range(trials):
        records = generate(spec, n_cal, substream(master, "trial", t, "data"))
        cfg = replace(est_config, alpha=alpha, seed=derive_seed(master, "trial", t, "calibrate"))
        if method == "marginal":
            policy, _ = calibrate_gpac(records, TrivialAssigner(), epsilon, cfg, mode="marginal")
        elif method == "gpac":
            policy, _ = calibrate_gpac(records, LabelAssigner(), epsilon, cfg, mode="gpac")
        else:
            cc = replace(cluster_config, seed=derive_seed(master, "trial", t, "cluster"))
            policy, _ = calibrate_cpac(records, cc, epsilon, cfg)
        risks, efficiency = policy_true_metrics(spec, policy)
        efficiency_sum += efficiency
        for key, risk in risks.items():
            covered[key] = covered.get(key, 0) + (risk <= epsilon + 1e-12)
            risk_sums[key] = risk_sums.get(key, 0.0) + risk
    return CoverageReport(
        per_group_coverage={k: covered[k] / trials for k in covered},
        per_group_mean_risk={k: risk_sums[k] / trials for k in risk_sums},
        efficiency=efficiency_sum / trials,
        trials=trials,
        method=method,
        epsilon=epsilon,
        alpha=alpha,
        n_cal=n_cal,
    )


__all__ = [
    "SIM_METHODS",
    "GroupSpec",
    "SyntheticSpec",
    "load_spec",
    "sample_group",
    "generate",
    "true_risk",
    "mixture_profile",
    "policy_true_metrics",
    "CoverageReport",
    "binomial_slack",
    "coverage_experiment",
]
