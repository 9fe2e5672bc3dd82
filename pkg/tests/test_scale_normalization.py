import numpy as np
import pytest

from errors import ConfigError, DataError
from scale_normalization import (CategoryCloud, NormalizationRecord, SncsConfig,
                                 assign_categories, estimate_scene_scale, normalize_points, split_by_semantics,
                                 to_sncs, translation_to_ocs)


def one_hot(labels, num_classes):
    return np.eye(num_classes)[np.asarray(labels)]


class TestSplitBySemantics:
    def test_single_category_exact_size_keeps_every_point(self, rng):
        cloud = rng.normal(size=(64, 3))
        clouds = split_by_semantics(cloud, one_hot(np.zeros(64, int), 3), SncsConfig(N_s=64))
        assert len(clouds) == 1
        assert clouds[0].category == 0
        assert np.array_equal(clouds[0].source_indices, np.arange(64))
        assert np.array_equal(clouds[0].points, cloud)

    def test_two_categories_downsample_without_replacement(self, rng):
        cloud = rng.normal(size=(140, 3))
        labels = np.repeat([0, 2], 70)
        clouds = split_by_semantics(cloud, one_hot(labels, 3), SncsConfig(N_s=64), seed=5)
        assert [c.category for c in clouds] == [0, 2]
        for c in clouds:
            assert len(c) == 64
            assert len(np.unique(c.source_indices)) == 64
            assert np.all(labels[c.source_indices] == c.category)

    def test_small_category_upsampled_with_replacement(self, rng):
        cloud = rng.normal(size=(40, 3))
        clouds = split_by_semantics(cloud, one_hot(np.zeros(40, int), 1), SncsConfig(N_s=128))
        assert len(clouds[0]) == 128
        assert set(clouds[0].source_indices) <= set(range(40))

    def test_sparse_category_dropped(self, rng):
        cloud = rng.normal(size=(110, 3))
        labels = np.array([0] * 100 + [1] * 10)
        clouds = split_by_semantics(cloud, one_hot(labels, 2), SncsConfig(N_s=64, min_points_per_category=32))
        assert [c.category for c in clouds] == [0]

    def test_ties_go_to_the_lowest_class(self):
        assert assign_categories([[0.5, 0.5, 0.0]]).tolist() == [0]

    def test_same_seed_same_split(self, rng):
        cloud = rng.normal(size=(100, 3))
        probs = one_hot(rng.integers(0, 2, 100), 2)
        a = split_by_semantics(cloud, probs, SncsConfig(N_s=64), seed=3)
        b = split_by_semantics(cloud, probs, SncsConfig(N_s=64), seed=3)
        assert all(np.array_equal(x.source_indices, y.source_indices) for x, y in zip(a, b))

    def test_rejects_unnormalized_rows(self, rng):
        with pytest.raises(DataError):
            split_by_semantics(rng.normal(size=(2, 3)), [[0.5, 0.4], [1.0, 0.0]], SncsConfig(N_s=64))

    def test_rejects_length_mismatch(self, rng):
        with pytest.raises(DataError):
            split_by_semantics(rng.normal(size=(3, 3)), one_hot([0, 1], 2), SncsConfig(N_s=64))


class TestToSncs:
    def test_centres_and_rescales(self, rng):
        points = rng.normal(size=(200, 3)) * 0.02 + [0.1, -0.2, 0.8]
        cloud = CategoryCloud(1, points, np.arange(200))
        normalized, record = to_sncs(cloud, 0.05, SncsConfig(D=0.2, N_s=64))
        assert record.ratio == pytest.approx(4.0)
        assert np.allclose(normalized.points.mean(axis=0), 0.0, atol=1e-12)
        assert np.allclose(normalized.points[1] - normalized.points[0], 4.0 * (points[1] - points[0]))
        assert normalized.category == 1

    def test_translation_round_trip(self, rng):
        record = NormalizationRecord.create([0.1, 0.2, 0.9], 0.05, 0.2)
        t = rng.normal(size=(10, 3))
        assert np.allclose(translation_to_ocs(normalize_points(t, record), record), t)

    def test_nonpositive_scale(self, rng):
        cloud = CategoryCloud(0, rng.normal(size=(10, 3)), np.arange(10))
        with pytest.raises(DataError, match='nonpositive scale'):
            to_sncs(cloud, 0.0)

    def test_identity_record(self):
        record = NormalizationRecord.identity(0.2)
        assert record.ratio == 1.0 and np.all(record.p_c == 0)
        assert record.D == pytest.approx(0.2)


def test_scene_scale_is_the_mean():
    assert estimate_scene_scale([0.1, 0.2, 0.3]) == pytest.approx(0.2)
    with pytest.raises(DataError):
        estimate_scene_scale([0.1, -0.1])
    with pytest.raises(DataError):
        estimate_scene_scale([])


@pytest.mark.parametrize('settings', [{'D': 0.0}, {'N_s': 10}, {'min_points_per_category': 0}])
def test_config_validation(settings):
    with pytest.raises(ConfigError):
        SncsConfig(**settings)


@pytest.mark.parametrize('d', [0.01, 0.05, 0.2, 1.0])
def test_scene_points_survive_the_round_trip(rng, d):
    points = rng.uniform(-0.5, 0.5, size=(10_000, 3)) + [0.0, 0.0, 1.0]
    normalized, record = to_sncs(CategoryCloud(0, points, np.arange(len(points))), d, SncsConfig())
    assert np.abs(translation_to_ocs(normalized.points, record) - points).max() <= 1e-9
