"""
Core geometry shared by every stage of the pipeline.
Rigid poses, object models, camera intrinsics, depth images and the exact
minimum enclosing sphere that defines an object's scale.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.transform import Rotation

from errors import DataError

logger = logging.getLogger(__name__)

DEPTH_SENTINEL = 0.0
MIN_MODEL_POINTS = 32
SYMMETRY_KINDS = ('none', 'cyclic', 'revolution', 'revolution_with_flip')


def as_points(points):
    """Return points as a finite float64 array of shape (N, 3)."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr.reshape(1, 3)
    if arr.size == 0:
        return np.zeros((0, 3))
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DataError(f"expected points of shape (N, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError("non-finite point coordinates")
    return arr


# ---------------------------------------------------------------------------
# Rigid poses
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RigidPose:
    """
    Rotation as a unit quaternion [w, x, y, z] plus a translation in meters.
    q and -q are the same rotation; the sign is only fixed when serializing.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise DataError("non-finite pose")
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise DataError(f"quaternion is not unit length (norm={np.linalg.norm(q):.12f})")
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, 'rotation', q)
        object.__setattr__(self, 'translation', t)

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_rotation(cls, rotation, translation=(0.0, 0.0, 0.0)):
        """Build from a scipy Rotation."""
        return cls(rotation.as_quat(scalar_first=True), translation)

    @classmethod
    def from_matrix(cls, matrix, translation=(0.0, 0.0, 0.0)):
        return cls.from_rotation(Rotation.from_matrix(matrix), translation)

    def as_rotation(self):
        return Rotation.from_quat(self.rotation, scalar_first=True)

    @cached_property
    def matrix(self):
        """3x3 rotation matrix."""
        return self.as_rotation().as_matrix()

    def to_dict(self):
        """JSON form with the quaternion sign canonicalized."""
        return {
            'quaternion': canonical_quaternion(self.rotation).tolist(),
            'translation': self.translation.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        q = np.asarray(data['quaternion'], dtype=np.float64)
        return cls(q / np.linalg.norm(q), data['translation'])

    def __repr__(self):
        q = np.round(self.rotation, 6).tolist()
        t = np.round(self.translation, 6).tolist()
        return f"RigidPose(rotation={q}, translation={t})"


def canonical_quaternion(q):
    """Flip the quaternion sign so the scalar part is non-negative."""
    q = np.asarray(q, dtype=np.float64)
    if q.ndim == 1:
        return -q if q[0] < 0 else q.copy()
    return np.where(q[:, :1] < 0, -q, q)


def apply_pose(pose, p):
    """R·p + t for a single point or an (N, 3) array."""
    p = np.asarray(p, dtype=np.float64)
    return p @ pose.matrix.T + pose.translation


def compose(a, b):
    """Pose equivalent to applying b first, then a."""
    rotation = a.as_rotation() * b.as_rotation()
    translation = a.matrix @ b.translation + a.translation
    return RigidPose.from_rotation(rotation, translation)


def invert(a):
    rotation = a.as_rotation().inv()
    return RigidPose.from_rotation(rotation, -(a.matrix.T @ a.translation))


def pose_arrays(poses):
    """Stack poses into (N, 4) quaternions and (N, 3) translations."""
    if len(poses) == 0:
        return np.zeros((0, 4)), np.zeros((0, 3))
    quats = np.stack([p.rotation for p in poses])
    trans = np.stack([p.translation for p in poses])
    return quats, trans


# ---------------------------------------------------------------------------
# Symmetry and object models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SymmetryClass:
    """Proper symmetry group of an object: kind plus the axis in model frame."""

    kind: str = 'none'
    order: int = 1
    axis: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.kind not in SYMMETRY_KINDS:
            raise DataError(f"unknown symmetry kind '{self.kind}'")
        if self.kind == 'cyclic' and self.order < 2:
            raise DataError("cyclic symmetry needs order n >= 2")
        axis = np.asarray(self.axis, dtype=np.float64)
        norm = np.linalg.norm(axis)
        if axis.shape != (3,) or not np.isfinite(norm) or norm == 0:
            raise DataError(f"invalid symmetry axis {self.axis}")
        object.__setattr__(self, 'axis', tuple(float(v) for v in axis / norm))

    def to_dict(self):
        return {'kind': self.kind, 'order': self.order, 'axis': list(self.axis)}

    @classmethod
    def from_dict(cls, data):
        return cls(data.get('kind', 'none'), int(data.get('order', 1)), tuple(data.get('axis', (0, 0, 1))))


@dataclass(eq=False)
class ObjectModel:
    """
    Surface samples of a rigid object in its model frame.
    The frame origin is the bounding-sphere centre and scale is the
    bounding-sphere diameter.
    """

    id: int
    points: np.ndarray
    symmetry: SymmetryClass = field(default_factory=SymmetryClass)
    scale: float = 0.0
    name: str = ''

    def __post_init__(self):
        self.points = as_points(self.points)
        if len(self.points) < MIN_MODEL_POINTS:
            raise DataError(f"object model {self.id} needs at least {MIN_MODEL_POINTS} points")
        if self.scale <= 0:
            self.scale = bounding_sphere_diameter(self.points)
        if self.scale <= 0:
            raise DataError(f"object model {self.id} has zero scale")

    @classmethod
    def from_points(cls, model_id, points, symmetry=None, name='', target_scale=None):
        """Centre raw samples on their bounding sphere and optionally rescale."""
        points = as_points(points)
        center, radius = bounding_sphere(points)
        centered = points - center
        scale = 2.0 * radius
        if target_scale is not None:
            centered = centered * (target_scale / scale)
            scale = float(target_scale)
        return cls(model_id, centered, symmetry or SymmetryClass(), scale, name)

    def rescaled(self, factor):
        """Uniformly scaled copy; the bounding sphere scales with it."""
        if factor <= 0:
            raise DataError("nonpositive scale")
        return ObjectModel(self.id, self.points * factor, self.symmetry, self.scale * factor, self.name)

    @cached_property
    def first_moment(self):
        """Mean of the model points."""
        return self.points.mean(axis=0)

    @cached_property
    def second_moment(self):
        """Mean of x xᵀ over the model points."""
        return self.points.T @ self.points / len(self.points)

    def to_dict(self):
        return {
            'id': self.id,
            'name': self.name,
            'scale': self.scale,
            'symmetry': self.symmetry.to_dict(),
            'points': self.points.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(int(data['id']), data['points'], SymmetryClass.from_dict(data.get('symmetry', {})),
                   float(data.get('scale', 0.0)), data.get('name', ''))


# ---------------------------------------------------------------------------
# Camera and depth
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise DataError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise DataError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DataError("principal point outside the image")

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self):
        return {'fx': self.fx, 'fy': self.fy, 'cx': self.cx, 'cy': self.cy,
                'width': self.width, 'height': self.height}

    @classmethod
    def from_dict(cls, data):
        return cls(float(data['fx']), float(data['fy']), float(data['cx']), float(data['cy']),
                   int(data['width']), int(data['height']))


@dataclass(eq=False)
class DepthImage:
    """Row-major depth in meters; DEPTH_SENTINEL marks missing pixels."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError(f"depth image must be 2-D, got shape {values.shape}")
        present = values != DEPTH_SENTINEL
        if not np.all(np.isfinite(values[present])) or np.any(values[present] < 0):
            raise DataError("depth values must be finite and positive")
        self.values = values

    @classmethod
    def empty(cls, width, height):
        return cls(np.full((height, width), DEPTH_SENTINEL))

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def valid(self):
        """Boolean map of pixels that carry depth."""
        return self.values != DEPTH_SENTINEL


# ---------------------------------------------------------------------------
# Minimum enclosing sphere
# ---------------------------------------------------------------------------

def _circumsphere(boundary):
    """Smallest sphere with every boundary point on its surface."""
    p0 = boundary[0]
    if len(boundary) == 1:
        return p0.copy(), 0.0
    U = boundary[1:] - p0
    B = 0.5 * np.sum(U ** 2, axis=1)
    lam = np.linalg.lstsq(U @ U.T, B, rcond=None)[0]
    offset = lam @ U
    return p0 + offset, float(math.sqrt(offset @ offset))


def _spans_space(boundary, rank_tol):
    """True once the support points fix a unique sphere (affine rank 3)."""
    if len(boundary) < 4:
        return False
    U = np.array(boundary[1:]) - boundary[0]
    return np.linalg.matrix_rank(U, tol=rank_tol) == 3


def _welzl(points, boundary, tol):
    """
    Move-to-front Welzl. Cocircular support points (box corners, for one)
    only pin a circle, so recursion stops when the support spans 3-D.
    """
    if boundary:
        center, radius = _circumsphere(np.array(boundary))
    else:
        center, radius = None, -1.0
    if _spans_space(boundary, tol * 1e3):
        return center, radius
    for i in range(len(points)):
        p = points[i]
        if center is None or math.dist(p, center) > radius + tol:
            center, radius = _welzl(points[:i], boundary + [p], tol)
    return center, radius


def bounding_sphere(points):
    """
    Exact minimum enclosing sphere of a point set.

    Returns:
        (center, radius)
    """
    points = as_points(points)
    if len(points) == 0:
        raise DataError("empty point set")

    candidates = points
    if len(points) > 4:
        # only hull vertices can touch the sphere
        try:
            candidates = points[ConvexHull(points).vertices]
        except (QhullError, ValueError):
            candidates = points

    order = np.random.default_rng(0).permutation(len(candidates))
    candidates = candidates[order]
    extent = float(np.max(np.abs(candidates - candidates[0]))) if len(candidates) > 1 else 0.0
    tol = 1e-12 * max(extent, 1e-12)
    center, radius = _welzl(candidates, [], tol)

    # hull tolerance may drop near-boundary points; grow to cover them
    radius = max(radius, float(np.max(np.linalg.norm(points - center, axis=1))))
    return np.asarray(center, dtype=np.float64), radius


def bounding_sphere_diameter(points):
    """Diameter of the smallest bounding sphere, the scale of an object."""
    return 2.0 * bounding_sphere(points)[1]
