import dataclasses
import json

import numpy as np
import pytest
from scipy.spatial import cKDTree

from errors import ConfigError, DataError, InvariantError
from geometry import ObjectModel, RigidPose, SymmetryClass, apply_pose
from object_catalog import sample_box
from scene_generator import (LABEL_COLUMNS, SceneGenConfig, build_scene, compute_visibility, drop_sphere,
                             furthest_point_sampling, generate_close_packed_scene, generate_scene,
                             labels_for_owners, list_scenes, load_scene, place_instances, sample_indices,
                             save_scene, scene_name)


class TestPlacement:
    def test_drop_onto_floor(self):
        assert drop_sphere(0.0, 0.0, 0.1, []) == pytest.approx(0.1)

    def test_drop_onto_another_sphere(self):
        assert drop_sphere(0.0, 0.0, 0.1, [(0.0, 0.0, 0.2, 0.2)]) == pytest.approx(0.5)
        # off to the side the floor is reached first
        assert drop_sphere(1.0, 0.0, 0.1, [(0.0, 0.0, 0.2, 0.2)]) == pytest.approx(0.1)

    def test_spheres_never_intersect(self, catalog, scenegen_config):
        ids = [0, 1, 2, 3, 2, 3, 2, 3]
        placed, failures = place_instances(ids, catalog, scenegen_config, np.random.default_rng(4))
        assert len(placed) + failures == len(ids)
        bin_ = scenegen_config.bin
        centres = [(pose.translation, catalog[mid].scale / 2) for mid, pose in placed]
        for i, (ci, ri) in enumerate(centres):
            assert ci[2] >= ri - 1e-12
            assert ci[2] + ri <= bin_.height + 1e-12
            assert abs(ci[0]) + ri <= bin_.width / 2 + 1e-12
            assert abs(ci[1]) + ri <= bin_.depth / 2 + 1e-12
            for cj, rj in centres[i + 1:]:
                assert np.linalg.norm(ci - cj) >= ri + rj - 1e-9

    def test_oversized_object_is_reported(self, catalog, scenegen_config):
        huge = {0: catalog[0].rescaled(10.0)}
        config = dataclasses.replace(scenegen_config, max_attempts=3)
        placed, failures = place_instances([0, 0], huge, config, np.random.default_rng(0))
        assert placed == [] and failures == 2

    def test_config_validation(self, scenegen_config):
        with pytest.raises(ConfigError):
            dataclasses.replace(scenegen_config, categories_per_scene=(3, 2))
        with pytest.raises(ConfigError):
            dataclasses.replace(scenegen_config, camera_height=0.1)


class TestSampling:
    def test_fps_starts_at_the_highest_point(self, rng):
        points = rng.normal(size=(200, 3))
        chosen = furthest_point_sampling(points, 10)
        assert chosen[0] == np.argmax(points[:, 2])
        assert len(set(chosen.tolist())) == 10

    def test_fps_spreads_out(self):
        points = np.array([[0, 0, 0], [0.01, 0, 0], [1, 0, 0], [0, 1, 0.5]], dtype=float)
        assert furthest_point_sampling(points, 2).tolist() == [3, 2]

    def test_too_few_points_resamples_with_replacement(self, rng):
        idx, replaced = sample_indices(rng.normal(size=(5, 3)), 12, rng)
        assert replaced and len(idx) == 12
        assert set(idx.tolist()) == set(range(5))

    def test_enough_points(self, rng):
        idx, replaced = sample_indices(rng.normal(size=(50, 3)), 20, rng)
        assert not replaced and len(idx) == 20


class TestGeneratedScene:
    def test_same_seed_same_scene(self, catalog, scenegen_config, scenes):
        again = generate_scene(scenegen_config, catalog, seed=0, scene_id=scene_name(0))
        assert np.array_equal(again.cloud, scenes[0].cloud)
        assert again.labels.equals(scenes[0].labels)

    def test_labels(self, scenes, scenegen_config):
        for scene in scenes:
            assert list(scene.labels.columns) == LABEL_COLUMNS
            assert len(scene.labels) == len(scene.cloud) == scenegen_config.N_p
            owners = scene.labels['instance'].to_numpy()
            models = np.array([inst.model_id for inst in scene.instances])
            assert np.array_equal(scene.labels['semantic'].to_numpy(), models[owners])
            assert np.all(scene.labels['qw'] >= 0)
            visibility = np.array([inst.visibility for inst in scene.instances])
            assert np.allclose(scene.labels['visibility'].to_numpy(), visibility[owners])

    def test_camera_frame_ground_truth(self, scenes, scenegen_config):
        h = scenegen_config.camera_height
        for inst in scenes[0].instances:
            wx, wy, wz = inst.world_pose.translation
            assert np.allclose(inst.pose.translation, [wx, -wy, h - wz])

    def test_points_lie_on_their_instance(self, scenes, scenegen_config):
        camera = scenegen_config.camera
        scene = scenes[0]
        owners = scene.labels['instance'].to_numpy()
        for i, inst in enumerate(scene.instances):
            mine = scene.cloud[owners == i]
            if len(mine) == 0:
                continue
            surface = apply_pose(inst.pose, scene.models[inst.model_id].points)
            dist, _ = cKDTree(surface).query(mine)
            # back-projection moves a point by at most the splat radius in the image plane
            assert dist.max() <= 1.5 * mine[:, 2].max() / camera.fx + 1e-9

    def test_visibility_range(self, scenes):
        for scene in scenes:
            for i, inst in enumerate(scene.instances):
                assert 0.0 <= inst.visibility <= 1.0
                if inst.visibility > 0.5:
                    assert (scene.labels['instance'] == i).any()

    def test_every_scene_has_several_categories(self, scenes):
        for scene in scenes:
            placed = {inst.model_id for inst in scene.instances}
            assert len(placed) + scene.flags['placement_failures'] >= 2


def test_close_packed_row(catalog, scenegen_config):
    model = catalog[0].rescaled(0.1 / catalog[0].scale)
    scene = generate_close_packed_scene(model, scenegen_config, count=3, seed=1)
    xs = sorted(inst.world_pose.translation[0] for inst in scene.instances)
    assert np.diff(xs) == pytest.approx([0.06, 0.06])
    assert all(inst.visibility > 0.9 for inst in scene.instances)
    assert scene.num_classes == 1


def test_labels_need_an_owner(scenes):
    with pytest.raises(InvariantError):
        labels_for_owners(scenes[0], [0, -1])


def plate(model_id, width, depth, thickness=0.01):
    return ObjectModel.from_points(model_id, sample_box((width, depth, thickness), 0.004), SymmetryClass('none'))


def flat(x, y, z):
    return RigidPose(np.array([1.0, 0.0, 0.0, 0.0]), [x, y, z])


class TestBuiltScene:
    """Hand-placed plates under the default top-down camera."""

    def test_lone_instance_is_fully_visible(self):
        scene = build_scene([(0, flat(0.0, 0.0, 0.005))], {0: plate(0, 0.2, 0.2)}, SceneGenConfig(N_p=512))
        assert compute_visibility(scene, 0) == 1.0
        assert scene.instances[0].visibility == 1.0

    def test_buried_instance_is_invisible(self):
        catalog = {0: plate(0, 0.04, 0.04), 1: plate(1, 0.2, 0.2)}
        scene = build_scene([(0, flat(0.0, 0.0, 0.005)), (1, flat(0.0, 0.0, 0.015))], catalog,
                            SceneGenConfig(N_p=512))
        assert compute_visibility(scene, 0) == 0.0
        assert compute_visibility(scene, 1) == 1.0
        assert not (scene.labels['instance'] == 0).any()

    def test_half_covered_instance(self):
        catalog = {0: plate(0, 0.3, 0.3)}
        scene = build_scene([(0, flat(0.0, 0.0, 0.005)), (0, flat(0.15, 0.0, 0.015))], catalog,
                            SceneGenConfig(N_p=512))
        assert compute_visibility(scene, 0) == pytest.approx(0.5, abs=0.05)
        assert compute_visibility(scene, 1) == 1.0

    def test_labels_split_like_the_pixels(self):
        catalog = {0: plate(0, 0.2, 0.1), 1: plate(1, 0.1, 0.1)}
        scene = build_scene([(0, flat(-0.12, 0.0, 0.005)), (1, flat(0.1, 0.0, 0.005))], catalog,
                            SceneGenConfig(N_p=2048))
        assert len(scene.labels) == 2048
        assert not scene.flags['sampled_with_replacement']
        covered = np.count_nonzero(scene.owners >= 0)
        for i, inst in enumerate(scene.instances):
            pixel_share = np.count_nonzero(scene.owners == i) / covered
            label_share = np.count_nonzero(scene.labels['instance'] == i) / len(scene.labels)
            assert label_share == pytest.approx(pixel_share, rel=0.1)
            assert (scene.labels.loc[scene.labels['instance'] == i, 'semantic'] == inst.model_id).all()

    def test_lone_instance_rests_on_the_floor(self, catalog):
        model = dataclasses.replace(catalog[3], id=0)
        config = SceneGenConfig(categories_per_scene=(1, 1), instances_per_category=(1, 1), N_p=512)
        scene = generate_scene(config, {model.id: model}, seed=5)
        assert len(scene.instances) == 1
        assert scene.instances[0].world_pose.translation[2] == pytest.approx(model.scale / 2, abs=1e-12)


class TestPersistence:
    def test_save_and_load(self, scenes, catalog, tmp_path):
        scene = scenes[1]
        path = save_scene(scene, tmp_path)
        assert sorted(p.name for p in path.iterdir()) == ['cloud.ply', 'depth.pfm', 'labels.jsonl',
                                                         'owners.pgm', 'scene.json']
        loaded = load_scene(path, catalog)
        assert np.array_equal(loaded.cloud, scene.cloud)
        assert np.allclose(loaded.labels.to_numpy(), scene.labels.to_numpy())
        assert np.array_equal(loaded.owners, scene.owners)
        assert np.allclose(loaded.depth.values, scene.depth.values, atol=1e-6)
        assert [i.visibility for i in loaded.instances] == [i.visibility for i in scene.instances]

    def test_catalog_size_must_match(self, scenes, catalog, tmp_path):
        path = save_scene(scenes[0], tmp_path)
        smaller = {k: v for k, v in catalog.items() if k < 1}
        with pytest.raises(DataError):
            load_scene(path, smaller)

    def test_truncated_labels(self, scenes, catalog, tmp_path):
        path = save_scene(scenes[0], tmp_path)
        lines = (path / 'labels.jsonl').read_text().splitlines()
        (path / 'labels.jsonl').write_text('\n'.join(lines[:-1]) + '\n')
        with pytest.raises(DataError):
            load_scene(path, catalog)

    def test_listing(self, scenes, tmp_path):
        for scene in scenes:
            save_scene(scene, tmp_path)
        (tmp_path / 'notes').mkdir()
        assert [p.name for p in list_scenes(tmp_path)] == [s.scene_id for s in scenes]
        with pytest.raises(DataError):
            list_scenes(tmp_path / 'missing')

    def test_metadata_is_json(self, scenes, tmp_path):
        path = save_scene(scenes[0], tmp_path)
        meta = json.loads((path / 'scene.json').read_text())
        assert meta['scene_id'] == scenes[0].scene_id
        assert len(meta['instances']) == len(scenes[0].instances)
