"""
Scale Normalized Coordinate Space.
Splits a scene by predicted class, resamples every single-category scene to a
fixed size and maps it into a space where each object has the target scale D.
"""

import logging
from dataclasses import dataclass

import numpy as np

from errors import ConfigError, DataError
from geometry import as_points

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SncsConfig:
    D: float = 0.20
    N_s: int = 4096
    min_points_per_category: int = 32

    def __post_init__(self):
        if not self.D > 0:
            raise ConfigError(f"sncs.D must be > 0, got {self.D}")
        if self.N_s < 64:
            raise ConfigError(f"sncs.N_s must be >= 64, got {self.N_s}")
        if self.min_points_per_category < 1:
            raise ConfigError("sncs.min_points_per_category must be >= 1")


@dataclass(frozen=True, eq=False)
class NormalizationRecord:
    """Centre and ratio needed to map SNCS translations back to camera space."""

    p_c: np.ndarray
    d: float
    ratio: float

    def __post_init__(self):
        if not self.d > 0:
            raise DataError("nonpositive scale")
        object.__setattr__(self, 'p_c', np.asarray(self.p_c, dtype=np.float64).reshape(3))

    @classmethod
    def create(cls, p_c, d, D):
        if not d > 0:
            raise DataError("nonpositive scale")
        return cls(p_c, float(d), D / float(d))

    @classmethod
    def identity(cls, D):
        """Record that leaves coordinates untouched (normalization switched off)."""
        return cls(np.zeros(3), float(D), 1.0)

    @property
    def D(self):
        return self.ratio * self.d

    def to_dict(self):
        return {'p_c': self.p_c.tolist(), 'd': self.d, 'ratio': self.ratio}

    @classmethod
    def from_dict(cls, data):
        return cls(data['p_c'], float(data['d']), float(data['ratio']))


@dataclass(eq=False)
class CategoryCloud:
    """Points of one predicted category, with indices into the source cloud."""

    category: int
    points: np.ndarray
    source_indices: np.ndarray

    def __len__(self):
        return len(self.points)


def assign_categories(semantic_probs):
    """Argmax class per point; np.argmax already returns the lowest index on ties."""
    probs = np.asarray(semantic_probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] == 0:
        raise DataError("no classes")
    return np.argmax(probs, axis=1)


def split_by_semantics(cloud, semantic_probs, config=None, seed=0):
    """
    Partition a scene into single-category clouds of exactly N_s points.

    Categories with fewer than min_points_per_category points are dropped.
    Resampling draws without replacement when a category has at least N_s
    points and with replacement otherwise.
    """
    config = config or SncsConfig()
    cloud = as_points(cloud)
    probs = np.asarray(semantic_probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] == 0:
        raise DataError("no classes")
    if len(probs) != len(cloud):
        raise DataError(f"length mismatch: {len(cloud)} points, {len(probs)} semantic rows")
    if len(probs) and np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise DataError("semantic probabilities must sum to 1")

    labels = assign_categories(probs)
    rng = np.random.default_rng(seed)
    result = []
    for category in range(probs.shape[1]):
        members = np.flatnonzero(labels == category)
        if len(members) == 0:
            continue
        if len(members) < config.min_points_per_category:
            logger.info("dropping sparse category",
                        extra={'category': category, 'points': len(members)})
            continue
        replace = len(members) < config.N_s
        chosen = np.sort(rng.choice(members, size=config.N_s, replace=replace))
        result.append(CategoryCloud(category, cloud[chosen], chosen))
    return result


def estimate_scene_scale(point_scales):
    """Mean of the point-wise predicted scales."""
    scales = np.asarray(point_scales, dtype=np.float64).ravel()
    if scales.size == 0:
        raise DataError("cannot estimate scale from no points")
    if np.any(scales <= 0):
        raise DataError("nonpositive scale")
    return float(scales.mean())


def to_sncs(cloud, d, config=None):
    """
    Map a single-category cloud into SNCS: (D/d)·(p − p_c), p_c the centroid.

    Returns:
        (CategoryCloud, NormalizationRecord)
    """
    config = config or SncsConfig()
    if not d > 0:
        raise DataError("nonpositive scale")
    points = as_points(cloud.points)
    if len(points) == 0:
        raise DataError("empty category cloud")
    record = NormalizationRecord.create(points.mean(axis=0), d, config.D)
    normalized = CategoryCloud(cloud.category, normalize_points(points, record), cloud.source_indices)
    return normalized, record


def normalize_points(points, record):
    return (as_points(points) - record.p_c) * record.ratio


def translation_to_ocs(t_sncs, record):
    """(d/D)·t + p_c; rotations are unchanged by the similarity transform."""
    t = np.asarray(t_sncs, dtype=np.float64)
    return t / record.ratio + record.p_c
