"""Learning the groups themselves by clustering uncertainty scores.

In one dimension the optimal k-means clusters are contiguous runs of the
sorted values, so the exact optimum is found by dynamic programming over
prefix sums; no Lloyd iterations and no restarts, hence fully deterministic.
A fitted partition is stored as ascending centroids with midpoint boundaries
and doubles as a group assigner for calibration and routing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .calibration import CalibrationReport, RoutingPolicy, calibrate_gpac
from .estimator import EstimatorConfig
from .records import ResolvedRecord
from .seeding import substream

CLUSTER_MODES = ("split", "joint")


@dataclass(frozen=True)
class Partition:
    """k ascending centroids; inputs go to the nearest one (ties downward)."""

    centroids: tuple[float, ...]
    boundaries: tuple[float, ...]

    def __post_init__(self):
        c = np.asarray(self.centroids)
        if len(c) == 0 or (len(c) > 1 and not np.all(np.diff(c) > 0)):
            raise ValueError("centroids must be non-empty and strictly ascending")
        mids = tuple((c[i] + c[i + 1]) / 2.0 for i in range(len(c) - 1))
        if tuple(self.boundaries) != mids:
            raise ValueError("boundaries must be the centroid midpoints")

    @classmethod
    def from_centroids(cls, centroids) -> "Partition":
        c = tuple(float(x) for x in centroids)
        b = tuple((c[i] + c[i + 1]) / 2.0 for i in range(len(c) - 1))
        return cls(centroids=c, boundaries=b)

    @property
    def k(self) -> int:
        return len(self.centroids)

    def resolve(self, group_label: str | None, uncertainty: float) -> int:
        return assign_group(self, uncertainty)

    def known_keys(self) -> tuple[int, ...]:
        return tuple(range(self.k))

    def intervals(self) -> tuple[tuple[float, float], ...]:
        """The score interval owned by each cluster, covering [0, 1]."""
        edges = (0.0,) + self.boundaries + (1.0,)
        return tuple((edges[i], edges[i + 1]) for i in range(self.k))

    def to_dict(self) -> dict:
        return {"kind": "centroids", "centroids": list(self.centroids)}


@dataclass(frozen=True)
class ClusterConfig:
    k: int
    mode: str = "split"
    split_fraction: float = 0.5
    joint_slack: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.mode not in CLUSTER_MODES:
            raise ValueError(f"mode must be one of {CLUSTER_MODES}, got {self.mode!r}")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must lie strictly inside (0, 1)")
        if self.joint_slack < 0.0:
            raise ValueError("joint_slack must be non-negative")


def kmeans_1d(values, k: int) -> Partition:
    """Globally optimal k-means of scalar values, by DP over the sorted order.

    Requires 1 <= k <= number of distinct values.  Cluster costs come from
    prefix sums; ties in the DP break toward the earliest split, so the result
    is deterministic.
    """
    xs = np.sort(np.asarray(values, dtype=float))
    n = len(xs)
    n_distinct = len(np.unique(xs))
    if not 1 <= k <= n_distinct:
        raise ValueError(f"k must lie in [1, {n_distinct}] for {n_distinct} distinct values")
    p1 = np.concatenate([[0.0], np.cumsum(xs)])
    p2 = np.concatenate([[0.0], np.cumsum(xs * xs)])

    def seg_cost(i, j):
        # within-cluster sum of squares of xs[i:j]; i may be an array
        s = p1[j] - p1[i]
        q = p2[j] - p2[i]
        return q - s * s / (j - i)

    # best[j] = optimal cost of the first j points with the current cluster count
    best = seg_cost(0, np.arange(n + 1).clip(1))
    best[0] = 0.0
    splits = np.zeros((k, n + 1), dtype=int)
    for c in range(2, k + 1):
        nxt = np.full(n + 1, np.inf)
        for j in range(c, n + 1):
            i = np.arange(c - 1, j)
            total = best[i] + seg_cost(i, j)
            pick = int(np.argmin(total))
            nxt[j] = total[pick]
            splits[c - 1, j] = pick + c - 1
        best = nxt

    cuts = [n]
    for c in range(k, 1, -1):
        cuts.append(int(splits[c - 1, cuts[-1]]))
    cuts.append(0)
    cuts.reverse()
    centroids = tuple(
        float((p1[cuts[i + 1]] - p1[cuts[i]]) / (cuts[i + 1] - cuts[i])) for i in range(k)
    )
    return Partition.from_centroids(centroids)


def assign_group(partition: Partition, uncertainty: float) -> int:
    """Index of the nearest centroid; a score on a boundary takes the lower index."""
    return int(np.searchsorted(partition.boundaries, uncertainty, side="left"))


def partition_gap(assignments_a, assignments_b, k: int) -> float:
    """Smallest disagreement fraction between two k-labelings over any relabeling.

    Minimizes over all label permutations via min-cost matching on the k x k
    agreement counts, so it is exact for any k.
    """
    a = np.asarray(assignments_a, dtype=int)
    b = np.asarray(assignments_b, dtype=int)
    if a.shape != b.shape or a.ndim != 1 or len(a) == 0:
        raise ValueError("assignment vectors must be 1-d, non-empty, and equal length")
    for v in (a, b):
        if v.min() < 0 or v.max() >= k:
            raise ValueError(f"assignments must lie in [0, {k})")
    counts = np.zeros((k, k), dtype=int)
    np.add.at(counts, (a, b), 1)
    rows, cols = linear_sum_assignment(-counts)
    return 1.0 - counts[rows, cols].sum() / len(a)


def calibrate_cpac(
    records: list[ResolvedRecord],
    cluster_config: ClusterConfig,
    epsilon: float,
    est_config: EstimatorConfig,
    *,
    n_min: int = 10,
) -> tuple[RoutingPolicy, CalibrationReport]:
    """Learn a k-group partition of the uncertainty axis, then calibrate it.

    split mode shuffles the records by the cluster seed, fits the partition on
    the first split_fraction of them, and calibrates thresholds on the
    remainder only, keeping the two stages statistically independent.  joint
    mode reuses all records for both stages and adds joint_slack to every
    bound before threshold selection to pay for the reuse.
    """
    if cluster_config.mode == "split":
        order = substream(cluster_config.seed, "split").permutation(len(records))
        n_cluster = int(len(records) * cluster_config.split_fraction)
        if n_cluster < 1 or n_cluster >= len(records):
            raise ValueError("split leaves an empty clustering or calibration side")
        cluster_side = [records[i] for i in order[:n_cluster]]
        cal_side = [records[i] for i in order[n_cluster:]]
        offset = 0.0
    else:
        cluster_side = list(records)
        cal_side = list(records)
        offset = cluster_config.joint_slack
    partition = kmeans_1d([r.uncertainty for r in cluster_side], cluster_config.k)
    return calibrate_gpac(
        cal_side, partition, epsilon, est_config,
        mode="cpac", n_min=n_min, ucb_offset=offset,
    )


__all__ = [
    "CLUSTER_MODES",
    "Partition",
    "ClusterConfig",
    "kmeans_1d",
    "assign_group",
    "partition_gap",
    "calibrate_cpac",
]
