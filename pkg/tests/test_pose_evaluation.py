import itertools
from types import SimpleNamespace

import numpy as np
import pandas as pd
import pytest
from scipy.spatial.transform import Rotation

from errors import DataError
from geometry import ObjectModel, RigidPose, SymmetryClass, compose
from instance_aggregation import InstanceEstimate
from object_catalog import sample_box, sample_cylinder
from pose_evaluation import (FP, IGNORE, TP, MatchConfig, average_precision, evaluate_dataset,
                             match_predictions, mean_ap, pose_distance, pose_distance_matrix, pose_distances,
                             symmetry_representatives)


def rotz(angle):
    return RigidPose.from_rotation(Rotation.from_euler('z', angle))


def shifted(pose, dx):
    return RigidPose(pose.rotation, pose.translation + [dx, 0.0, 0.0])


def reference_ap(flags, relevant_count):
    """Each TP adds 1/R recall at the best precision reached from its rank on."""
    kept = [f for f in flags if f != IGNORE]
    precisions = [sum(f == TP for f in kept[:k + 1]) / (k + 1) for k in range(len(kept))]
    return sum(max(precisions[k:]) / relevant_count for k, f in enumerate(kept) if f == TP)


class TestPoseDistance:
    def test_identical_poses(self, box_model):
        pose = RigidPose.from_rotation(Rotation.random(random_state=0), [0.1, 0.2, 0.3])
        assert pose_distance(pose, pose, box_model) == pytest.approx(0.0, abs=1e-12)

    def test_pure_translation(self, box_model):
        pose = RigidPose.identity()
        assert pose_distance(pose, shifted(pose, 0.03), box_model) == pytest.approx(0.03)

    def test_cyclic_symmetry_is_free(self):
        model = ObjectModel.from_points(0, sample_box((0.4, 0.2, 0.1), 0.02), SymmetryClass('cyclic', 2))
        a = RigidPose.from_rotation(Rotation.random(random_state=4), [0, 0, 1])
        b = compose(a, rotz(np.pi))
        assert pose_distance(a, b, model) == pytest.approx(0.0, abs=1e-9)
        assert pose_distance(a, compose(a, rotz(np.pi / 2)), model) > 0.01

    def test_revolution_symmetry(self):
        model = ObjectModel.from_points(0, sample_cylinder(0.1, 0.4, 0.02), SymmetryClass('revolution'))
        a = RigidPose.identity()
        # any spin about the axis is within half a discretization step
        spun = rotz(0.37)
        step_error = pose_distance(a, spun, model, K=64)
        assert step_error < 0.05 * 2 * np.pi / 64

    def test_flip_needs_the_flip_symmetry(self):
        points = sample_cylinder(0.1, 0.4, 0.02)
        flipped = RigidPose.from_rotation(Rotation.from_euler('x', np.pi))
        plain = ObjectModel.from_points(0, points, SymmetryClass('revolution'))
        with_flip = ObjectModel.from_points(0, points, SymmetryClass('revolution_with_flip'))
        assert pose_distance(RigidPose.identity(), flipped, with_flip) == pytest.approx(0.0, abs=1e-9)
        assert pose_distance(RigidPose.identity(), flipped, plain) > 0.01

    def test_representative_counts(self):
        assert len(symmetry_representatives(SymmetryClass('none'))) == 1
        assert len(symmetry_representatives(SymmetryClass('cyclic', 6))) == 6
        assert len(symmetry_representatives(SymmetryClass('revolution'), K=16)) == 16
        assert len(symmetry_representatives(SymmetryClass('revolution_with_flip'), K=16)) == 32

    @pytest.mark.parametrize('symmetry', [SymmetryClass('none'), SymmetryClass('cyclic', 2)])
    def test_batched_form_agrees_with_point_form(self, symmetry):
        model = ObjectModel.from_points(0, sample_box((0.5, 0.3, 0.1), 0.03), symmetry)
        rng = np.random.default_rng(9)
        rots_a = Rotation.random(10, random_state=1)
        rots_b = Rotation.random(10, random_state=2)
        ta, tb = rng.normal(size=(10, 3)) * 0.1, rng.normal(size=(10, 3)) * 0.1
        batch = pose_distances(rots_a.as_quat(scalar_first=True), ta, rots_b.as_quat(scalar_first=True), tb, model)
        for i in range(10):
            a = RigidPose.from_rotation(rots_a[i], ta[i])
            b = RigidPose.from_rotation(rots_b[i], tb[i])
            assert batch[i] == pytest.approx(pose_distance(a, b, model), rel=1e-6)

    @pytest.mark.parametrize('symmetry', [SymmetryClass('none'), SymmetryClass('cyclic', 2)])
    def test_symmetric_and_invariant_under_a_common_motion(self, symmetry, rng):
        model = ObjectModel.from_points(0, sample_box((0.5, 0.3, 0.1), 0.03), symmetry)
        for seed in range(5):
            a, b, motion = (RigidPose.from_rotation(Rotation.random(random_state=3 * seed + k), rng.normal(size=3))
                            for k in range(3))
            d = pose_distance(a, b, model)
            assert abs(pose_distance(b, a, model) - d) <= 1e-9
            assert abs(pose_distance(compose(motion, a), compose(motion, b), model) - d) <= 1e-9

    def test_matrix_shape(self, box_model):
        poses = [RigidPose.identity(), shifted(RigidPose.identity(), 0.1)]
        dist = pose_distance_matrix(poses, poses[:1], box_model)
        assert dist.shape == (2, 1)
        assert dist[:, 0] == pytest.approx([0.0, 0.1], abs=1e-6)


class TestAveragePrecision:
    @pytest.mark.parametrize('flags, relevant, expected', [
        ([TP, TP], 2, 1.0),
        ([FP, TP], 1, 0.5),
        ([TP, FP, TP], 2, 5 / 6),
        ([TP, IGNORE, FP], 1, 1.0),
        ([], 3, 0.0),
        ([FP, FP], 1, 0.0),
    ])
    def test_known_values(self, flags, relevant, expected):
        assert average_precision(flags, relevant).ap == pytest.approx(expected)

    def test_exhaustive_against_reference(self):
        for n in range(1, 7):
            for flags in itertools.product((TP, FP, IGNORE), repeat=n):
                tps = flags.count(TP)
                for relevant in {max(tps, 1), tps + 2}:
                    curve = average_precision(list(flags), relevant)
                    assert curve.ap == pytest.approx(reference_ap(flags, relevant), abs=1e-12)
                    assert 0.0 <= curve.ap <= 1.0

    def test_curve_points(self):
        curve = average_precision([TP, FP, TP], 4)
        assert curve.recalls.tolist() == [0.25, 0.25, 0.5]
        assert curve.precisions == pytest.approx([1.0, 0.5, 2 / 3])

    def test_zero_relevant_is_undefined(self):
        with pytest.raises(DataError):
            average_precision([TP], 0)

    def test_unknown_flag(self):
        with pytest.raises(DataError):
            average_precision(['MAYBE'], 1)

    def test_mean_ap(self):
        assert mean_ap([1.0, 0.5]) == pytest.approx(0.75)
        with pytest.raises(DataError):
            mean_ap([])


def estimate(pose, confidence, category=0):
    return InstanceEstimate(pose, confidence, 100, category)


def truth(pose, visibility, model_id=0):
    return SimpleNamespace(model_id=model_id, pose=pose, visibility=visibility)


class TestMatching:
    def test_threshold_is_relative_to_scale(self, box_model):
        gt = [truth(RigidPose.identity(), 0.9)]
        near = estimate(shifted(RigidPose.identity(), 0.05 * box_model.scale), 0.9)
        far = estimate(shifted(RigidPose.identity(), 0.2 * box_model.scale), 0.9)
        assert match_predictions([near], gt, box_model) == ([TP], 1)
        assert match_predictions([far], gt, box_model) == ([FP], 1)

    def test_duplicate_is_false_positive(self, box_model):
        gt = [truth(RigidPose.identity(), 0.9)]
        ests = [estimate(RigidPose.identity(), 0.9), estimate(RigidPose.identity(), 0.8)]
        assert match_predictions(ests, gt, box_model)[0] == [TP, FP]

    def test_barely_visible_match_is_ignored(self, box_model):
        gt = [truth(RigidPose.identity(), 0.3)]
        flags, relevant = match_predictions([estimate(RigidPose.identity(), 0.9)], gt, box_model)
        assert flags == [IGNORE]
        assert relevant == 0

    def test_relevance_uses_strict_inequality(self, box_model):
        gt = [truth(RigidPose.identity(), 0.5)]
        assert match_predictions([], gt, box_model, MatchConfig(relevance_visibility=0.5)) == ([], 0)

    def test_nearest_instance_is_taken(self, box_model):
        step = 0.04 * box_model.scale
        gt = [truth(shifted(RigidPose.identity(), 2 * step), 0.9), truth(RigidPose.identity(), 0.9)]
        ests = [estimate(shifted(RigidPose.identity(), step * 0.4), 0.9),
                estimate(shifted(RigidPose.identity(), step * 1.9), 0.8)]
        assert match_predictions(ests, gt, box_model)[0] == [TP, TP]


class TestEvaluateDataset:
    def test_pools_scenes_by_confidence(self, box_model):
        other = box_model.rescaled(2.0)
        other.id = 1
        catalog = {0: box_model, 1: other}
        pose = RigidPose.identity()
        far = shifted(pose, 1.0)
        scene_a = ([truth(pose, 0.9), truth(pose, 0.2, model_id=1)],
                   [estimate(pose, 0.5), estimate(far, 0.9), estimate(pose, 0.7, category=1)])
        scene_b = ([truth(pose, 0.8)], [estimate(pose, 0.95)])
        report = evaluate_dataset([scene_a, scene_b], catalog)

        # object 0 pooled: 0.95 TP (b), 0.9 FP (a), 0.5 TP (a)
        assert report.objects[0].flags == [TP, FP, TP]
        assert report.objects[0].ap == pytest.approx(5 / 6)
        # object 1 has only an ignored instance
        assert report.objects[1].flags == [IGNORE]
        assert report.objects[1].ap is None
        assert report.mAP == pytest.approx(5 / 6)
        assert report.scenes == 2

    def test_no_relevant_instances(self, box_model):
        report = evaluate_dataset([([truth(RigidPose.identity(), 0.1)], [])], {0: box_model})
        assert report.mAP is None

    def test_unknown_category(self, box_model):
        with pytest.raises(DataError):
            evaluate_dataset([([], [estimate(RigidPose.identity(), 0.9, category=4)])], {0: box_model})

    def test_report_files(self, box_model, tmp_path):
        pose = RigidPose.identity()
        report = evaluate_dataset([([truth(pose, 0.9)], [estimate(pose, 0.9)])], {0: box_model})
        report.write(tmp_path)
        table = pd.read_csv(tmp_path / 'ap_table.csv')
        assert table.loc[0, 'ap'] == pytest.approx(1.0)
        assert table.loc[0, 'tp'] == 1
        assert (tmp_path / 'report.json').exists()
        assert len(pd.read_csv(tmp_path / 'pr_curves.csv')) == 1
