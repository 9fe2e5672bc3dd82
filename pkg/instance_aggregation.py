"""
Instance recovery from point-wise predictions inside one category's SNCS.
Visibility filtering, flat-kernel mean-shift over predicted translations and
a pose vote per cluster.
"""

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.neighbors import NearestNeighbors

from errors import ConfigError, DataError
from geometry import RigidPose, as_points
from pose_evaluation import pose_distances

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AggregationConfig:
    T_v: float = 0.5
    bandwidth: float = 0.05
    mean_shift_max_iters: int = 100
    mean_shift_tol: float = 1e-5
    min_cluster_size: int = 20
    symmetry_k: int = 64
    vote_max_candidates: int = 256

    def __post_init__(self):
        if not 0 <= self.T_v <= 1:
            raise ConfigError("aggregation.T_v must be in [0, 1]")
        if not self.bandwidth > 0:
            raise ConfigError("aggregation.bandwidth must be > 0")
        if self.mean_shift_max_iters < 1:
            raise ConfigError("aggregation.mean_shift_max_iters must be >= 1")
        if self.min_cluster_size < 1:
            raise ConfigError("aggregation.min_cluster_size must be >= 1")
        if self.vote_max_candidates < 1:
            raise ConfigError("aggregation.vote_max_candidates must be >= 1")


@dataclass(frozen=True)
class InstanceEstimate:
    pose: RigidPose
    confidence: float
    support: int
    category: int = -1
    cluster: int = -1

    def to_dict(self):
        return {
            'category': self.category,
            'cluster': self.cluster,
            'confidence': self.confidence,
            'support': self.support,
            'pose': self.pose.to_dict(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(RigidPose.from_dict(data['pose']), float(data['confidence']), int(data['support']),
                   int(data.get('category', -1)), int(data.get('cluster', -1)))


def filter_by_visibility(visibility, T_v):
    """Indices of points whose predicted visibility is at least T_v."""
    return np.flatnonzero(np.asarray(visibility, dtype=np.float64) >= T_v)


def mean_shift(points, config=None):
    """
    Flat-kernel mean-shift with radius = bandwidth.

    Returns:
        labels: cluster id per point, -1 for points in discarded clusters
        centers: (K, 3) array, one row per kept cluster
    """
    config = config or AggregationConfig()
    X = as_points(points)
    if len(X) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 3))

    nn = NearestNeighbors(radius=config.bandwidth).fit(X)
    modes = X.copy()
    active = np.arange(len(X))
    for _ in range(config.mean_shift_max_iters):
        if len(active) == 0:
            break
        A = nn.radius_neighbors_graph(modes[active], mode='connectivity')
        counts = np.asarray(A.sum(axis=1)).ravel()
        sums = A @ X
        shifted = modes[active].copy()
        has = counts > 0
        shifted[has] = sums[has] / counts[has, None]
        shift = np.linalg.norm(shifted - modes[active], axis=1)
        modes[active] = shifted
        active = active[shift >= config.mean_shift_tol]

    # merge modes in point-index order
    group = np.full(len(X), -1, dtype=np.int64)
    merge_radius = config.bandwidth / 2.0
    n_groups = 0
    for i in range(len(X)):
        if group[i] >= 0:
            continue
        close = (group < 0) & (np.linalg.norm(modes - modes[i], axis=1) <= merge_radius)
        group[close] = n_groups
        n_groups += 1

    sizes = np.bincount(group, minlength=n_groups)
    kept = np.flatnonzero(sizes >= config.min_cluster_size)
    remap = np.full(n_groups, -1, dtype=np.int64)
    remap[kept] = np.arange(len(kept))
    labels = remap[group]
    centers = np.array([modes[group == g].mean(axis=0) for g in kept]).reshape(-1, 3)
    return labels, centers


def _distance_block(rows, ia, ib, model, config):
    """Pose distances between rows[ia] and rows[ib]; rows hold [quaternion | translation]."""
    a, b = np.meshgrid(ia, ib, indexing='ij')
    a, b = a.ravel(), b.ravel()
    return pose_distances(rows[a, :4], rows[a, 4:], rows[b, :4], rows[b, 4:],
                          model, config.symmetry_k).reshape(len(ia), len(ib))


def _medoid_rotation(quats, translations, weights, model, config):
    """
    Member rotation whose pose minimizes the weighted distance sum to all members.

    Above vote_max_candidates distinct poses, every pose is first screened
    against an even sample of them; the cheapest vote_max_candidates are then
    scored exactly against all members.
    """
    rows, inverse = np.unique(np.hstack([quats, translations]), axis=0, return_inverse=True)
    inverse = inverse.ravel()
    if len(rows) == 1:
        return rows[0, :4]
    mass = np.bincount(inverse, weights=weights, minlength=len(rows))
    everyone = np.arange(len(rows))
    cand = everyone
    cap = config.vote_max_candidates
    if len(rows) > cap:
        sample = np.unique(np.linspace(0, len(rows) - 1, cap).round().astype(np.int64))
        screen = _distance_block(rows, everyone, sample, model, config) @ mass[sample]
        cand = np.sort(np.argsort(screen, kind='stable')[:cap])
    cost = _distance_block(rows, cand, everyone, model, config) @ mass
    return rows[cand[int(np.argmin(cost))], :4]


def vote_pose(members, model, config=None, category=-1, cluster=-1):
    """
    Pose of one cluster.

    Translation is the visibility-weighted mean of member translations and
    rotation is the medoid under the symmetry-aware pose distance.
    """
    config = config or AggregationConfig()
    if len(members) == 0:
        raise DataError("empty cluster")
    w = members.visibility
    if w.sum() > 0:
        translation = (w @ members.translations) / w.sum()
    else:
        translation = members.translations.mean(axis=0)
    q = _medoid_rotation(members.quats, members.translations, np.ones(len(members)), model, config)
    pose = RigidPose(q / np.linalg.norm(q), translation)
    confidence = float(np.clip(w.mean(), 0.0, 1.0))
    return InstanceEstimate(pose, confidence, len(members), category, cluster)


def estimate_instances(predictions, model, config=None, category=-1):
    """
    Filter, cluster and vote; estimates come back sorted by confidence,
    then support, then cluster index.
    """
    config = config or AggregationConfig()
    keep = filter_by_visibility(predictions.visibility, config.T_v)
    if len(keep) == 0:
        return []
    visible = predictions.subset(keep)
    labels, centers = mean_shift(visible.translations, config)
    estimates = [
        vote_pose(visible.subset(np.flatnonzero(labels == k)), model, config, category, k)
        for k in range(len(centers))
    ]
    logger.debug("clustered category",
                 extra={'category': category, 'visible': len(keep), 'clusters': len(estimates)})
    return sorted(estimates, key=lambda e: (-e.confidence, -e.support, e.cluster))
