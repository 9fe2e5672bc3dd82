"""
Training losses of the point-wise predictor, used here as evaluation metrics
for any predictor's output against scene labels.
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from errors import ConfigError, DataError
from point_predictors import PointPredictions
from pose_evaluation import pose_distances
from scale_normalization import SncsConfig, estimate_scene_scale, split_by_semantics, to_sncs

logger = logging.getLogger(__name__)

LOG_EPS = 1e-12
COMPONENTS = ('scale', 'semantic', 'pose', 'visibility')


@dataclass(frozen=True)
class LossWeights:
    scale: float = 2.0
    semantic: float = 20.0
    pose: float = 0.2
    visibility: float = 50.0

    def __post_init__(self):
        for name in COMPONENTS:
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be >= 0")


def _same_length(a, b):
    if len(a) != len(b):
        raise DataError(f"length mismatch: {len(a)} predictions vs {len(b)} labels")


def loss_scale(pred, labels):
    """Mean absolute scale error."""
    pred = np.asarray(pred, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    _same_length(pred, labels)
    if len(pred) == 0:
        return 0.0
    return float(np.mean(np.abs(labels - pred)))


def loss_semantic(pred_probs, label_onehots):
    """Mean cross-entropy with log clamped at 1e-12."""
    pred_probs = np.asarray(pred_probs, dtype=np.float64)
    label_onehots = np.asarray(label_onehots, dtype=np.float64)
    _same_length(pred_probs, label_onehots)
    if len(pred_probs) == 0:
        return 0.0
    if pred_probs.shape != label_onehots.shape:
        raise DataError(f"class count mismatch: {pred_probs.shape} vs {label_onehots.shape}")
    log_p = np.log(np.clip(pred_probs, LOG_EPS, None))
    return float(-np.mean(np.sum(label_onehots * log_p, axis=1)))


def _category_mean(groups, per_point):
    """
    (1/N_c) Σ_j (1/N_s) Σ_i value·𝟙(c_i = j) over category groups.
    groups maps category -> (pred, target) PointPredictions.
    """
    if not groups:
        return 0.0
    totals = []
    for category, (pred, target) in sorted(groups.items()):
        _same_length(pred, target)
        if len(pred) == 0:
            totals.append(0.0)
            continue
        keep = target.categories == category
        values = np.zeros(len(pred))
        if keep.any():
            values[keep] = per_point(category, pred.subset(keep), target.subset(keep))
        totals.append(values.mean())
    return float(np.mean(totals))


def loss_pose(groups, models, K=64):
    """Semantic-filtered pose distance, averaged per point then per category."""
    def per_point(category, pred, target):
        if category not in models:
            raise DataError(f"unknown category {category}")
        return pose_distances(pred.quats, pred.translations, target.quats, target.translations,
                              models[category], K)
    return _category_mean(groups, per_point)


def loss_visibility(groups):
    """Semantic-filtered absolute visibility error."""
    return _category_mean(groups, lambda _c, pred, target: np.abs(target.visibility - pred.visibility))


def loss_total(components, weights=None):
    """Weighted sum; components is a mapping or a 4-tuple in (scale, semantic, pose, visibility) order."""
    weights = weights or LossWeights()
    if not isinstance(components, dict):
        components = dict(zip(COMPONENTS, components))
    return float(sum(getattr(weights, name) * components[name] for name in COMPONENTS))


def scene_losses(predictions, scene, catalog, sncs_config=None, weights=None, K=64):
    """
    All four losses plus the total for one scene.

    Pose and visibility terms are computed per predicted category inside its
    SNCS, with category models rescaled by the same ratio.
    """
    sncs_config = sncs_config or SncsConfig()
    target = PointPredictions.from_labels(scene.labels, scene.num_classes)
    _same_length(predictions, target)
    components = {
        'scale': loss_scale(predictions.scale, target.scale),
        'semantic': loss_semantic(predictions.semantic_probs, target.semantic_probs),
    }
    groups, models = {}, {}
    if len(predictions):
        clouds = split_by_semantics(scene.cloud, predictions.semantic_probs, sncs_config, seed=scene.seed)
        for cloud in clouds:
            pred = predictions.subset(cloud.source_indices)
            d = estimate_scene_scale(pred.scale)
            _, record = to_sncs(cloud, d, sncs_config)
            groups[cloud.category] = (pred.to_sncs(record), target.subset(cloud.source_indices).to_sncs(record))
            models[cloud.category] = catalog[cloud.category].rescaled(record.ratio)
    components['pose'] = loss_pose(groups, models, K)
    components['visibility'] = loss_visibility(groups)
    components['total'] = loss_total(components, weights)
    return components


def evaluate_predictor(predictor, scenes, catalog, sncs_config=None, weights=None, K=64):
    """
    Loss table with one row per scene and a mean row.

    Returns:
        pandas DataFrame indexed by scene id (plus 'mean').
    """
    rows = {}
    for scene in scenes:
        preds = predictor.predict(scene)
        rows[scene.scene_id] = scene_losses(preds, scene, catalog, sncs_config, weights, K)
        logger.debug("scene losses", extra={'scene_id': scene.scene_id, **rows[scene.scene_id]})
    table = pd.DataFrame.from_dict(rows, orient='index', columns=list(COMPONENTS) + ['total'])
    if len(table):
        table.loc['mean'] = table.mean()
    return table
