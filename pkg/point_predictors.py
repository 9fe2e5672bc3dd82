"""
Point-wise predictions and the predictors that produce them.
A predictor maps a scene cloud to per-point scale, class distribution, pose
and visibility. The noisy oracle derives them from ground-truth labels; the
file predictor loads externally computed predictions from JSON lines.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from data_io import read_jsonl, write_jsonl
from errors import ConfigError, DataError
from geometry import RigidPose
from scale_normalization import normalize_points

logger = logging.getLogger(__name__)

LABEL_QUAT_COLUMNS = ['qw', 'qx', 'qy', 'qz']
LABEL_TRANS_COLUMNS = ['tx', 'ty', 'tz']


@dataclass(frozen=True)
class PointPrediction:
    scale: float
    semantic_probs: np.ndarray
    pose: RigidPose
    visibility: float


@dataclass(eq=False)
class PointPredictions:
    """Columnar per-point predictions; quaternions are [w, x, y, z]."""

    scale: np.ndarray
    semantic_probs: np.ndarray
    quats: np.ndarray
    translations: np.ndarray
    visibility: np.ndarray

    def __post_init__(self):
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(-1)
        n = len(self.scale)
        probs = np.asarray(self.semantic_probs, dtype=np.float64)
        # an empty (0, C) block cannot infer C from reshape(n, -1)
        self.semantic_probs = probs if probs.ndim == 2 else probs.reshape(n, -1)
        if len(self.semantic_probs) != n:
            raise DataError(f"{len(self.semantic_probs)} semantic rows for {n} points")
        self.quats = np.asarray(self.quats, dtype=np.float64).reshape(n, 4)
        self.translations = np.asarray(self.translations, dtype=np.float64).reshape(n, 3)
        self.visibility = np.asarray(self.visibility, dtype=np.float64).reshape(n)

    def __len__(self):
        return len(self.scale)

    def __getitem__(self, i):
        return PointPrediction(float(self.scale[i]), self.semantic_probs[i],
                               RigidPose(self.quats[i], self.translations[i]), float(self.visibility[i]))

    @property
    def num_classes(self):
        return self.semantic_probs.shape[1]

    @property
    def categories(self):
        return np.argmax(self.semantic_probs, axis=1)

    def subset(self, indices):
        return PointPredictions(self.scale[indices], self.semantic_probs[indices], self.quats[indices],
                                self.translations[indices], self.visibility[indices])

    def validate(self):
        """Raise DataError unless every row satisfies the prediction contract."""
        if len(self) and np.any(np.abs(self.semantic_probs.sum(axis=1) - 1.0) > 1e-6):
            raise DataError("semantic probabilities must sum to 1")
        if np.any(self.scale <= 0):
            raise DataError("predicted scales must be positive")
        if np.any((self.visibility < 0) | (self.visibility > 1)):
            raise DataError("predicted visibility outside [0, 1]")
        if np.any(np.abs(np.linalg.norm(self.quats, axis=1) - 1.0) > 1e-6):
            raise DataError("predicted quaternions must be unit length")
        return self

    def to_sncs(self, record):
        """Translations mapped into a category's SNCS; rotations unchanged."""
        return PointPredictions(self.scale, self.semantic_probs, self.quats,
                                normalize_points(self.translations, record), self.visibility)

    @classmethod
    def from_labels(cls, labels, num_classes):
        """Ground-truth labels as a perfect (one-hot) prediction."""
        semantic = labels['semantic'].to_numpy(dtype=np.int64)
        if len(semantic) and (semantic.min() < 0 or semantic.max() >= num_classes):
            raise DataError("semantic label outside catalog")
        return cls(labels['scale'].to_numpy(dtype=np.float64),
                   np.eye(num_classes)[semantic],
                   labels[LABEL_QUAT_COLUMNS].to_numpy(dtype=np.float64),
                   labels[LABEL_TRANS_COLUMNS].to_numpy(dtype=np.float64),
                   labels['visibility'].to_numpy(dtype=np.float64))

    def to_records(self):
        return [
            {
                'scale': float(self.scale[i]),
                'semantic_probs': self.semantic_probs[i].tolist(),
                'quaternion': self.quats[i].tolist(),
                'translation': self.translations[i].tolist(),
                'visibility': float(self.visibility[i]),
            }
            for i in range(len(self))
        ]

    @classmethod
    def from_records(cls, records):
        if not records:
            return cls(np.zeros(0), np.zeros((0, 1)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0))
        try:
            return cls([r['scale'] for r in records],
                       [r['semantic_probs'] for r in records],
                       [r['quaternion'] for r in records],
                       [r['translation'] for r in records],
                       [r['visibility'] for r in records])
        except (KeyError, ValueError) as e:
            raise DataError(f"malformed prediction record ({e})") from e


def write_predictions(path, predictions):
    write_jsonl(path, predictions.to_records())


def read_predictions(path):
    return PointPredictions.from_records(read_jsonl(path)).validate()


# ---------------------------------------------------------------------------
# Noisy oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OracleNoise:
    """
    Perturbation applied to ground-truth labels.
    sigma_translation_rel adds translation noise proportional to the point's scale label.
    """

    sigma_translation: float = 0.0
    sigma_translation_rel: float = 0.0
    sigma_rotation: float = 0.0
    sigma_scale: float = 0.0
    semantic_flip_prob: float = 0.0
    sigma_visibility: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ('sigma_translation', 'sigma_translation_rel', 'sigma_rotation',
                     'sigma_scale', 'semantic_flip_prob', 'sigma_visibility'):
            if getattr(self, name) < 0:
                raise ConfigError(f"oracle.{name} must be >= 0")
        if self.semantic_flip_prob > 1:
            raise ConfigError("oracle.semantic_flip_prob must be <= 1")


def oracle_from_labels(labels, num_classes, noise=None, stream=None):
    """
    Perturb label columns into predictions.

    Draws happen in a fixed order (translation, rotation axis, rotation
    angle, scale, semantic flip, flip target, visibility) so every stream is
    reproducible for a given seed and stream id.
    """
    noise = noise or OracleNoise()
    rng = np.random.default_rng(noise.seed if stream is None else [noise.seed, stream])
    target = PointPredictions.from_labels(labels, num_classes)
    n = len(target)

    std = np.sqrt(noise.sigma_translation ** 2 + (noise.sigma_translation_rel * target.scale) ** 2)
    translations = target.translations + rng.normal(size=(n, 3)) * std[:, None]

    axis = rng.normal(size=(n, 3))
    norms = np.linalg.norm(axis, axis=1, keepdims=True)
    axis = np.where(norms > 0, axis / np.where(norms > 0, norms, 1.0), [0.0, 0.0, 1.0])
    angle = np.abs(rng.normal(0.0, noise.sigma_rotation, size=n))
    quats = target.quats
    if n:
        delta = Rotation.from_rotvec(axis * angle[:, None])
        perturbed = (delta * Rotation.from_quat(quats, scalar_first=True)).as_quat(scalar_first=True)
        quats = np.where(angle[:, None] > 0, perturbed, quats)

    scale = target.scale * (1.0 + rng.normal(0.0, noise.sigma_scale, size=n))
    scale = np.maximum(scale, 1e-3 * target.scale)

    labels_sem = target.categories
    flip = rng.random(n) < noise.semantic_flip_prob
    offset = rng.integers(1, max(num_classes, 2), size=n)
    if num_classes > 1:
        labels_sem = np.where(flip, (labels_sem + offset) % num_classes, labels_sem)
    semantic_probs = np.eye(num_classes)[labels_sem]

    visibility = np.clip(target.visibility + rng.normal(0.0, noise.sigma_visibility, size=n), 0.0, 1.0)
    return PointPredictions(scale, semantic_probs, quats, translations, visibility)


def noisy_oracle(scene, noise=None):
    """Camera-frame predictions for every point of a labeled scene."""
    return oracle_from_labels(scene.labels, scene.num_classes, noise, stream=scene.seed)


class PointPredictor:
    """Base predictor: predict(scene) -> PointPredictions for scene.cloud."""

    name = 'base'

    def predict(self, scene):
        raise NotImplementedError


class OraclePredictor(PointPredictor):
    name = 'oracle'

    def __init__(self, noise=None):
        self.noise = noise or OracleNoise()

    def predict(self, scene):
        return noisy_oracle(scene, self.noise)


class FilePredictor(PointPredictor):
    """Reads <directory>/<scene_id>.jsonl, one record per cloud point."""

    name = 'file'

    def __init__(self, directory):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise DataError(f"predictions directory not found: {self.directory}")

    def path_for(self, scene_id):
        return self.directory / f"{scene_id}.jsonl"

    def predict(self, scene):
        path = self.path_for(scene.scene_id)
        if not path.exists():
            raise DataError(f"missing predictions file: {path}")
        preds = read_predictions(path)
        if len(preds) != len(scene.cloud):
            raise DataError(f"{path}: {len(preds)} predictions for {len(scene.cloud)} points")
        if len(preds) and preds.num_classes != scene.num_classes:
            raise DataError(f"{path}: {preds.num_classes} classes, catalog has {scene.num_classes}")
        return preds


def make_predictor(source, noise=None):
    """'oracle' or a predictions directory."""
    if source in (None, 'oracle'):
        return OraclePredictor(noise)
    return FilePredictor(source)
