"""Match-quality metrics, clustering comparison, the pairwise ratio-test
baseline, and precision/recall machinery."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .core import Clustering, FeatureId, FeatureSet, InputError
from .partition import Partition

__all__ = [
    "SplitReport",
    "ClusterComparison",
    "PRCurve",
    "split_quality",
    "compare_clusterings",
    "baseline_ratio_match",
    "match_counts_vs_reference",
    "pr_curve",
]


@dataclass(frozen=True)
class SplitReport:
    """How a partition cuts across a clustering.

    ``q`` holds each cluster's largest single-agent fraction (aligned with
    ``clustering.clusters``); a cluster is contested when its q is below 1.
    ``p_split`` is the raw detected-to-truly-split count ratio (may exceed 1,
    reported uncapped); ``contested_recall`` is the fraction of truly split
    features that were actually detected. Both are None without a detected
    contested set, or when nothing is split.
    """

    q: tuple[float, ...]
    p_contested: float
    contested_cluster_count: int
    split_feature_count: int
    detected_contested_count: int | None
    p_split: float | None
    contested_recall: float | None

    def to_dict(self) -> dict:
        return {
            "q": list(self.q),
            "p_contested": self.p_contested,
            "contested_cluster_count": self.contested_cluster_count,
            "split_feature_count": self.split_feature_count,
            "detected_contested_count": self.detected_contested_count,
            "p_split": self.p_split,
            "contested_recall": self.contested_recall,
        }


def split_quality(
    clustering: Clustering,
    part: Partition,
    contested: Iterable[FeatureId] | None = None,
) -> SplitReport:
    """Split quality per cluster plus the contested-cluster fraction.

    For each cluster, q is the count of its largest single-agent group over
    the cluster size. With a detected contested set the report also carries
    the raw ratio |detected| / |features in split clusters| and the recall of
    detected among truly split features.
    """
    agent_of = part.label_map()
    q_values: list[float] = []
    split_features: set[FeatureId] = set()
    for members in clustering.clusters:
        counts: dict[int, int] = {}
        for fid in members:
            if fid not in agent_of:
                raise InputError(f"feature {tuple(fid)} not covered by the partition")
            a = agent_of[fid]
            counts[a] = counts.get(a, 0) + 1
        q = max(counts.values()) / len(members)
        q_values.append(q)
        if q < 1.0:
            split_features.update(members)
    contested_clusters = sum(1 for q in q_values if q < 1.0)
    p_contested = contested_clusters / len(q_values) if q_values else 0.0

    detected_count = p_split = recall = None
    if contested is not None:
        detected = {FeatureId(*fid) for fid in contested}
        detected_count = len(detected)
        if split_features:
            p_split = detected_count / len(split_features)
            recall = len(detected & split_features) / len(split_features)
    return SplitReport(
        tuple(q_values),
        p_contested,
        contested_clusters,
        len(split_features),
        detected_count,
        p_split,
        recall,
    )


@dataclass(frozen=True)
class ClusterComparison:
    exact_equal: bool
    pairwise_f1: float
    pair_tp: int
    pairs_a: int
    pairs_b: int
    only_in_a: tuple[tuple[FeatureId, ...], ...]
    only_in_b: tuple[tuple[FeatureId, ...], ...]

    def to_dict(self) -> dict:
        return {
            "exact_equal": self.exact_equal,
            "pairwise_f1": self.pairwise_f1,
            "pair_tp": self.pair_tp,
            "pairs_a": self.pairs_a,
            "pairs_b": self.pairs_b,
            "only_in_a": [[list(f) for f in c] for c in self.only_in_a],
            "only_in_b": [[list(f) for f in c] for c in self.only_in_b],
        }


def _pairs(n: int) -> int:
    return n * (n - 1) // 2


def compare_clusterings(a: Clustering, b: Clustering) -> ClusterComparison:
    """Exact equality up to relabeling plus pairwise F1 of the induced
    same-cluster relation. Two clusterings with no co-clustered pairs at all
    agree perfectly, so their F1 is 1."""
    ids_a, ids_b = set(a.feature_ids()), set(b.feature_ids())
    if ids_a != ids_b:
        raise InputError("clusterings cover different feature sets")
    label_b = b.labels()
    tp = 0
    pairs_a = 0
    for members in a.clusters:
        pairs_a += _pairs(len(members))
        counts: dict[int, int] = {}
        for fid in members:
            lb = label_b[fid]
            counts[lb] = counts.get(lb, 0) + 1
        tp += sum(_pairs(c) for c in counts.values())
    pairs_b = sum(_pairs(len(members)) for members in b.clusters)
    denom = pairs_a + pairs_b
    f1 = 2.0 * tp / denom if denom else 1.0

    set_a = set(a.clusters)
    set_b = set(b.clusters)
    only_a = tuple(c for c in a.clusters if c not in set_b)
    only_b = tuple(c for c in b.clusters if c not in set_a)
    return ClusterComparison(not only_a and not only_b, f1, tp, pairs_a, pairs_b, only_a, only_b)


def baseline_ratio_match(
    fs_query: FeatureSet, fs_train: FeatureSet, ratio: float = 0.75
) -> list[tuple[FeatureId, FeatureId]]:
    """Pairwise nearest-neighbor matching with the classic ratio test.

    Exhaustive search: each query feature matches its nearest train feature
    iff d1 < ratio * d2, with d2 the second-nearest distance. A query feature
    exactly tied between two train features is rejected. Degenerate mode:
    with fewer than two train features there is no second neighbor, and
    ``ratio`` is reused as an absolute distance threshold (d1 < ratio).
    """
    if fs_query.dim != fs_train.dim:
        raise InputError(f"dimension mismatch: {fs_query.dim} vs {fs_train.dim}")
    if not (0 < ratio):
        raise InputError("ratio must be positive")
    if len(fs_query) == 0 or len(fs_train) == 0:
        return []
    d = cdist(fs_query.vectors, fs_train.vectors)
    matches: list[tuple[FeatureId, FeatureId]] = []
    if len(fs_train) < 2:
        for qi in range(len(fs_query)):
            if d[qi, 0] < ratio:
                matches.append((fs_query.ids[qi], fs_train.ids[0]))
        return matches
    idx = np.argsort(d, axis=1, kind="stable")
    for qi in range(len(fs_query)):
        j1, j2 = int(idx[qi, 0]), int(idx[qi, 1])
        if d[qi, j1] < ratio * d[qi, j2]:
            matches.append((fs_query.ids[qi], fs_train.ids[j1]))
    return matches


def match_counts_vs_reference(clustering: Clustering, reference_image: int) -> dict[int, int]:
    """Per-image count of clusters joining that image with the reference one.

    Under the one-feature-per-image rule each such cluster contributes
    exactly one matched feature pair, so this is the matched-feature count
    the threshold detector consumes.
    """
    counts: dict[int, int] = {}
    for members in clustering.clusters:
        images = {fid.image for fid in members}
        if reference_image not in images:
            continue
        for img in images:
            if img != reference_image:
                counts[img] = counts.get(img, 0) + 1
    return counts


@dataclass(frozen=True)
class PRCurve:
    """Precision/recall points of a count-threshold detector, plus the
    trapezoidal area under the curve over the recall axis."""

    points: tuple[tuple[float, float, float], ...]  # (threshold, precision, recall)
    auc: float

    def to_dict(self) -> dict:
        return {
            "points": [list(p) for p in self.points],
            "auc": self.auc,
        }


def pr_curve(
    counts: Sequence[float] | Mapping[int, float],
    truth: Sequence[bool] | Mapping[int, bool],
    thresholds: Sequence[float] | None = None,
) -> PRCurve:
    """Precision and recall of the detector "match exists iff count > t".

    ``counts`` and ``truth`` are aligned per image (mappings are joined on
    their keys). Default thresholds sweep every distinct count plus -1, so
    the curve spans everything-detected through nothing-detected. Precision
    at zero detections is taken as 1.
    """
    if isinstance(counts, Mapping) or isinstance(truth, Mapping):
        if not (isinstance(counts, Mapping) and isinstance(truth, Mapping)):
            raise InputError("counts and truth must both be mappings or both sequences")
        keys = sorted(truth.keys())
        count_arr = np.array([counts.get(k, 0) for k in keys], dtype=np.float64)
        truth_arr = np.array([bool(truth[k]) for k in keys])
    else:
        if len(counts) != len(truth):
            raise InputError("counts and truth must have equal length")
        count_arr = np.asarray(counts, dtype=np.float64)
        truth_arr = np.asarray(truth, dtype=bool)
    positives = int(truth_arr.sum())
    if positives == 0:
        raise InputError("no positive ground truth; recall is undefined")
    if thresholds is None:
        thresholds = sorted(set(float(c) for c in count_arr) | {-1.0})
    else:
        thresholds = sorted(float(t) for t in thresholds)

    points: list[tuple[float, float, float]] = []
    for t in sorted(thresholds, reverse=True):
        detected = count_arr > t
        tp = int((detected & truth_arr).sum())
        n_det = int(detected.sum())
        precision = tp / n_det if n_det else 1.0
        recall = tp / positives
        points.append((t, precision, recall))

    auc = 0.0
    for (_, p0, r0), (_, p1, r1) in zip(points, points[1:]):
        auc += (r1 - r0) * (p1 + p0) / 2.0
    return PRCurve(tuple(points), auc)
