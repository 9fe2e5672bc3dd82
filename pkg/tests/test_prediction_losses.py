import numpy as np
import pytest

from point_predictors import OracleNoise, OraclePredictor, PointPredictions, noisy_oracle
from prediction_losses import (LossWeights, evaluate_predictor, loss_pose, loss_scale, loss_semantic,
                               loss_total, loss_visibility, scene_losses)
from scale_normalization import SncsConfig


def identity_predictions(translations, category=0, num_classes=2, visibility=1.0):
    n = len(translations)
    return PointPredictions(np.full(n, 0.1), np.eye(num_classes)[np.full(n, category)],
                            np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)), translations, np.full(n, visibility))


def test_weighted_total():
    assert loss_total((1, 1, 1, 1)) == pytest.approx(72.2)
    assert loss_total({'scale': 1, 'semantic': 0, 'pose': 0, 'visibility': 0},
                      LossWeights(scale=3.0)) == pytest.approx(3.0)


def test_scale_loss_is_mean_absolute_error():
    assert loss_scale([0.1, 0.2], [0.1, 0.4]) == pytest.approx(0.1)


def test_semantic_loss():
    onehot = np.eye(4)[[0, 1, 2]]
    assert loss_semantic(onehot, onehot) == 0.0
    assert loss_semantic(np.full((3, 4), 0.25), onehot) == pytest.approx(np.log(4))
    # log clamped at 1e-12
    assert loss_semantic(np.eye(4)[[1]], np.eye(4)[[0]]) == pytest.approx(-np.log(1e-12))


class TestCategoryFilteredLosses:
    def test_pose_offset(self, rng, box_model):
        target = identity_predictions(rng.normal(size=(20, 3)))
        pred = identity_predictions(target.translations + [0.1, 0.0, 0.0])
        assert loss_pose({0: (pred, target)}, {0: box_model}) == pytest.approx(0.1, abs=1e-9)

    def test_points_of_other_classes_count_as_zero(self, rng, box_model):
        target = identity_predictions(rng.normal(size=(20, 3)))
        semantic = target.semantic_probs.copy()
        semantic[10:] = [0.0, 1.0]
        target = PointPredictions(target.scale, semantic, target.quats, target.translations, target.visibility)
        pred = identity_predictions(target.translations + [0.1, 0.0, 0.0])
        assert loss_pose({0: (pred, target)}, {0: box_model}) == pytest.approx(0.05, abs=1e-9)

    def test_visibility_averaged_over_categories(self, rng):
        a_target = identity_predictions(rng.normal(size=(8, 3)), category=0, visibility=1.0)
        b_target = identity_predictions(rng.normal(size=(8, 3)), category=1, visibility=1.0)
        a_pred = identity_predictions(a_target.translations, category=0, visibility=0.8)
        b_pred = identity_predictions(b_target.translations, category=1, visibility=0.4)
        groups = {0: (a_pred, a_target), 1: (b_pred, b_target)}
        assert loss_visibility(groups) == pytest.approx((0.2 + 0.6) / 2)

    def test_no_categories(self):
        assert loss_pose({}, {}) == 0.0


class TestSceneLosses:
    def test_perfect_predictions_have_zero_loss(self, scenes, catalog):
        scene = scenes[0]
        losses = scene_losses(noisy_oracle(scene), scene, catalog, SncsConfig(N_s=2048))
        for name in ('scale', 'semantic', 'pose', 'visibility', 'total'):
            assert losses[name] == pytest.approx(0.0, abs=1e-6)

    def test_noise_raises_the_losses(self, scenes, catalog):
        scene = scenes[0]
        noise = OracleNoise(sigma_translation=0.01, sigma_scale=0.1, sigma_visibility=0.1, seed=2)
        losses = scene_losses(noisy_oracle(scene, noise), scene, catalog, SncsConfig(N_s=2048))
        assert losses['scale'] > 0 and losses['pose'] > 0 and losses['visibility'] > 0
        assert losses['semantic'] == 0.0

    def test_table_has_a_mean_row(self, scenes, catalog):
        table = evaluate_predictor(OraclePredictor(), scenes[:2], catalog, SncsConfig(N_s=2048))
        assert list(table.index) == [s.scene_id for s in scenes[:2]] + ['mean']
        assert list(table.columns) == ['scale', 'semantic', 'pose', 'visibility', 'total']
