#!/usr/bin/env python3
"""
End-to-end pose estimation system.
Generates and corrupts scenes, runs a point-wise predictor, recovers instance
poses per category inside the SNCS and evaluates them against ground truth.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd
from joblib import Parallel, delayed

from data_io import (atomic_path, atomic_write_json, read_json, read_jsonl, read_ply, write_jsonl,
                     write_mask_pgm, write_pfm, write_ply)
from errors import DataError, InvariantError
from geometry import RigidPose
from instance_aggregation import InstanceEstimate, estimate_instances
from point_predictors import OraclePredictor, make_predictor, noisy_oracle, write_predictions
from pose_evaluation import evaluate_dataset
from prediction_losses import evaluate_predictor
from scale_normalization import (NormalizationRecord, estimate_scene_scale, split_by_semantics, to_sncs,
                                 translation_to_ocs)
from scene_generator import (generate_scene, label_cloud, labels_from_records, labels_to_records,
                             list_scenes, load_scene, save_scene, scene_name)
from sim_to_real import load_external_mask, synth_missing_mask, transfer_depth

logger = logging.getLogger(__name__)

CLOUD_SOURCES = ('synthetic', 'transferred')


@dataclass
class SceneEstimate:
    """Camera-frame estimates of one scene with the normalization used per category."""

    scene_id: str
    estimates: list = field(default_factory=list)
    records: dict = field(default_factory=dict)
    sncs: bool = True

    def to_dict(self):
        return {
            'scene_id': self.scene_id,
            'sncs': self.sncs,
            'estimates': [e.to_dict() for e in self.estimates],
            'records': {str(c): r.to_dict() for c, r in sorted(self.records.items())},
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data['scene_id'],
                   [InstanceEstimate.from_dict(e) for e in data['estimates']],
                   {int(c): NormalizationRecord.from_dict(r) for c, r in data.get('records', {}).items()},
                   bool(data.get('sncs', True)))


class PoseEstimationSystem:
    """
    Predictor -> semantic split -> SNCS -> clustering and voting -> camera frame.
    With sncs disabled every category keeps its camera-frame coordinates.
    """

    def __init__(self, config, catalog, predictor=None, sncs=True):
        self.config = config
        self.catalog = catalog
        self.predictor = predictor or OraclePredictor(config.oracle)
        self.sncs = sncs

    def normalization(self, cloud, predictions):
        if not self.sncs:
            return NormalizationRecord.identity(self.config.sncs.D)
        d = estimate_scene_scale(predictions.scale)
        return to_sncs(cloud, d, self.config.sncs)[1]

    def estimate_scene(self, scene, predictions=None):
        if predictions is None:
            predictions = self.predictor.predict(scene)
        predictions.validate()
        if len(predictions) != len(scene.cloud):
            raise DataError(f"{scene.scene_id}: {len(predictions)} predictions for {len(scene.cloud)} points")
        result = SceneEstimate(scene.scene_id, sncs=self.sncs)
        if len(predictions) == 0:
            return result

        clouds = split_by_semantics(scene.cloud, predictions.semantic_probs, self.config.sncs, seed=scene.seed)
        for cloud in clouds:
            if cloud.category not in self.catalog:
                raise DataError(f"{scene.scene_id}: category id {cloud.category} outside catalog")
            members = predictions.subset(cloud.source_indices)
            record = self.normalization(cloud, members)
            model = self.catalog[cloud.category].rescaled(record.ratio)
            found = estimate_instances(members.to_sncs(record), model, self.config.aggregation,
                                       category=cloud.category)
            result.records[cloud.category] = record
            for est in found:
                pose = RigidPose(est.pose.rotation, translation_to_ocs(est.pose.translation, record))
                result.estimates.append(dataclasses.replace(est, pose=pose))
        logger.info("estimated scene", extra={'scene_id': scene.scene_id, 'estimates': len(result.estimates),
                                              'categories': len(clouds)})
        return result


# ---------------------------------------------------------------------------
# Dataset helpers used by the command line
# ---------------------------------------------------------------------------

def with_cloud(scene, scene_dir, source):
    """Scene view whose cloud and labels come from the chosen source."""
    if source == 'synthetic':
        return scene
    if source != 'transferred':
        raise DataError(f"unknown cloud source '{source}'")
    scene_dir = Path(scene_dir)
    if not (scene_dir / 'transferred.ply').exists():
        raise DataError(f"{scene_dir}: no transferred cloud, run corrupt first")
    return dataclasses.replace(scene, cloud=read_ply(scene_dir / 'transferred.ply'),
                               labels=labels_from_records(read_jsonl(scene_dir / 'transferred_labels.jsonl')))


def _generate_one(config, catalog, index, out_dir):
    seed = config.seed + index
    scene = generate_scene(config.scenegen, catalog, seed=seed, scene_id=scene_name(index))
    save_scene(scene, out_dir)
    relevant = sum(inst.visibility > config.match.relevance_visibility for inst in scene.instances)
    return {'scene_id': scene.scene_id, 'seed': seed, 'instances': len(scene.instances),
            'relevant': relevant, 'points': len(scene.cloud),
            'placement_failures': scene.flags.get('placement_failures', 0)}


def generate_dataset(config, catalog, count, out_dir, workers=1):
    """Write count scene directories; returns a summary table ordered by scene id."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = Parallel(n_jobs=workers)(delayed(_generate_one)(config, catalog, i, out_dir) for i in range(count))
    return pd.DataFrame(rows, columns=['scene_id', 'seed', 'instances', 'relevant', 'points',
                                       'placement_failures'])


def _corrupt_one(config, catalog, scene_dir, mask_dir):
    scene = load_scene(scene_dir, catalog)
    if mask_dir is None:
        mask = synth_missing_mask(scene.depth, scene.camera, config.mask, stream=scene.seed)
    else:
        candidates = [Path(mask_dir) / f"{scene.scene_id}{ext}" for ext in ('.pfm', '.pgm')]
        path = next((p for p in candidates if p.exists()), None)
        if path is None:
            raise DataError(f"no external mask for {scene.scene_id} in {mask_dir}")
        mask = load_external_mask(path, scene.camera.width, scene.camera.height)
    transferred, cloud, pixels = transfer_depth(scene.depth, scene.camera, mask, config.domain_randomization,
                                                stream=scene.seed)
    cloud, labels, replaced = label_cloud(scene, cloud, pixels, scene.owners, config.scenegen.N_p,
                                          seed=scene.seed)
    scene_dir = Path(scene_dir)
    with atomic_path(scene_dir / 'mask.pgm') as tmp:
        write_mask_pgm(tmp, mask.present)
    with atomic_path(scene_dir / 'transferred_depth.pfm') as tmp:
        write_pfm(tmp, transferred)
    with atomic_path(scene_dir / 'transferred.ply') as tmp:
        write_ply(tmp, cloud)
    with atomic_path(scene_dir / 'transferred_labels.jsonl') as tmp:
        write_jsonl(tmp, labels_to_records(labels))
    return {'scene_id': scene.scene_id, 'missing_pixels': mask.missing_count,
            'points': len(cloud), 'sampled_with_replacement': replaced}


def corrupt_dataset(config, catalog, scenes_dir, mask_dir=None, workers=1):
    scene_dirs = list_scenes(scenes_dir)
    rows = Parallel(n_jobs=workers)(delayed(_corrupt_one)(config, catalog, d, mask_dir) for d in scene_dirs)
    return pd.DataFrame(rows, columns=['scene_id', 'missing_pixels', 'points', 'sampled_with_replacement'])


def _predict_one(config, catalog, scene_dir, out_dir, cloud_source):
    scene = with_cloud(load_scene(scene_dir, catalog), scene_dir, cloud_source)
    predictions = noisy_oracle(scene, config.oracle)
    with atomic_path(Path(out_dir) / f"{scene.scene_id}.jsonl") as tmp:
        write_predictions(tmp, predictions)
    return scene.scene_id


def predict_dataset(config, catalog, scenes_dir, out_dir, cloud_source='synthetic', workers=1):
    """Dump oracle predictions so they can be fed back as a predictions directory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scene_dirs = list_scenes(scenes_dir)
    Parallel(n_jobs=workers)(delayed(_predict_one)(config, catalog, d, out_dir, cloud_source)
                             for d in scene_dirs)
    scenes = [with_cloud(load_scene(d, catalog), d, cloud_source) for d in scene_dirs]
    return evaluate_predictor(make_predictor(str(out_dir)), scenes, catalog, config.sncs,
                              config.loss_weights, config.match.K)


def _estimate_one(config, catalog, scene_dir, out_dir, predictions, sncs, cloud_source):
    scene = with_cloud(load_scene(scene_dir, catalog), scene_dir, cloud_source)
    system = PoseEstimationSystem(config, catalog, make_predictor(predictions, config.oracle), sncs)
    result = system.estimate_scene(scene)
    atomic_write_json(Path(out_dir) / f"{scene.scene_id}.json", result.to_dict())
    return {'scene_id': scene.scene_id, 'estimates': len(result.estimates),
            'categories': len(result.records)}


def estimate_dataset(config, catalog, scenes_dir, out_dir, predictions='oracle', sncs=True,
                     cloud_source='synthetic', workers=1):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scene_dirs = list_scenes(scenes_dir)
    rows = Parallel(n_jobs=workers)(
        delayed(_estimate_one)(config, catalog, d, out_dir, predictions, sncs, cloud_source)
        for d in scene_dirs)
    return pd.DataFrame(rows, columns=['scene_id', 'estimates', 'categories'])


def load_estimates(path):
    return SceneEstimate.from_dict(read_json(path))


def evaluate_directories(config, catalog, scenes_dir, estimates_dir, strict=False):
    """
    Pair every scene with its estimates file and evaluate.
    Estimates for unknown scenes are an error; scenes without estimates count
    as empty unless strict is set and they hold relevant instances.
    """
    scenes_dir, estimates_dir = Path(scenes_dir), Path(estimates_dir)
    if not estimates_dir.is_dir():
        raise DataError(f"estimates directory not found: {estimates_dir}")
    scene_dirs = list_scenes(scenes_dir)
    scene_ids = {d.name for d in scene_dirs}
    estimate_ids = {p.stem for p in estimates_dir.glob('*.json')}
    unknown = sorted(estimate_ids - scene_ids)
    if unknown:
        raise DataError(f"estimates for unknown scenes: {', '.join(unknown)}")

    pairs = []
    for scene_dir in scene_dirs:
        scene = load_scene(scene_dir, catalog)
        path = estimates_dir / f"{scene.scene_id}.json"
        if path.exists():
            result = load_estimates(path)
            if result.scene_id != scene.scene_id:
                raise DataError(f"{path}: scene id {result.scene_id} does not match {scene.scene_id}")
            estimates = result.estimates
        else:
            relevant = [i for i in scene.instances if i.visibility > config.match.relevance_visibility]
            if relevant and strict:
                raise DataError(f"{scene.scene_id}: no estimates but {len(relevant)} relevant instances")
            logger.warning("scene has no estimates", extra={'scene_id': scene.scene_id})
            estimates = []
        pairs.append((scene.instances, estimates))
    return evaluate_dataset(pairs, catalog, config.match)


def run_in_memory(config, catalog, scenes, predictor=None, sncs=True):
    """Estimate and evaluate scenes held in memory; returns (report, estimates)."""
    system = PoseEstimationSystem(config, catalog, predictor, sncs)
    results = [system.estimate_scene(scene) for scene in scenes]
    pairs = [(scene.instances, res.estimates) for scene, res in zip(scenes, results)]
    report = evaluate_dataset(pairs, catalog, config.match)
    if report.mAP is not None and not 0.0 <= report.mAP <= 1.0:
        raise InvariantError(f"mAP {report.mAP} outside [0, 1]")
    return report, results


if __name__ == "__main__":
    from object_catalog import build_default_catalog
    from pipeline_config import PipelineConfig

    config = PipelineConfig()
    catalog = build_default_catalog()
    scenes = [generate_scene(config.scenegen, catalog, seed=i, scene_id=scene_name(i)) for i in range(3)]
    report, _ = run_in_memory(config, catalog, scenes)
    print("=" * 70)
    print("POSE ESTIMATION SYSTEM - ORACLE RUN")
    print("=" * 70)
    print(report.ap_table().to_string(index=False))
    print(f"\nmAP: {report.mAP}")
