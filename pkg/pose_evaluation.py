"""
Symmetry-aware pose distance and average-precision evaluation.
Matches estimated instances against ground truth per object and integrates
the precision envelope over recall.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation

from data_io import write_json
from errors import ConfigError, DataError
from geometry import apply_pose, pose_arrays

logger = logging.getLogger(__name__)

TP, FP, IGNORE = 'TP', 'FP', 'IGNORE'
FLAGS = (TP, FP, IGNORE)

# pairs per chunk in the moment-form distance
_CHUNK = 4096


@dataclass(frozen=True)
class MatchConfig:
    tp_threshold_factor: float = 0.1
    relevance_visibility: float = 0.5
    K: int = 64

    def __post_init__(self):
        if not self.tp_threshold_factor > 0:
            raise ConfigError("match.tp_threshold_factor must be > 0")
        if not 0 <= self.relevance_visibility <= 1:
            raise ConfigError("match.relevance_visibility must be in [0, 1]")
        if self.K < 8:
            raise ConfigError("match.K must be >= 8")


@dataclass
class PRCurve:
    recalls: np.ndarray
    precisions: np.ndarray
    ap: float

    def to_dict(self):
        return {'recalls': self.recalls.tolist(), 'precisions': self.precisions.tolist(), 'ap': self.ap}


# ---------------------------------------------------------------------------
# Pose distance
# ---------------------------------------------------------------------------

def _perpendicular(axis):
    axis = np.asarray(axis, dtype=np.float64)
    helper = np.eye(3)[np.argmin(np.abs(axis))]
    perp = np.cross(axis, helper)
    return perp / np.linalg.norm(perp)


def symmetry_representatives(sym, K=64):
    """
    Rotation matrices (G, 3, 3) enumerating the object's proper symmetries.
    Continuous revolution groups are discretized into K steps.
    """
    axis = np.asarray(sym.axis, dtype=np.float64)
    if sym.kind == 'none':
        return np.eye(3)[None]
    if sym.kind == 'cyclic':
        steps = sym.order
    else:
        steps = K
    angles = 2.0 * np.pi * np.arange(steps) / steps
    rots = Rotation.from_rotvec(angles[:, None] * axis[None, :])
    if sym.kind == 'revolution_with_flip':
        flip = Rotation.from_rotvec(np.pi * _perpendicular(axis))
        return np.concatenate([rots.as_matrix(), (rots * flip).as_matrix()])
    return rots.as_matrix()


def pose_distance(a, b, model, K=64):
    """
    min over symmetries g of the RMS distance between a(g·x) and b(x)
    over the model's surface samples.
    """
    reps = symmetry_representatives(model.symmetry, K)
    target = apply_pose(b, model.points)
    best = np.inf
    for g in reps:
        moved = apply_pose(a, model.points @ g.T)
        rms = np.sqrt(np.mean(np.sum((moved - target) ** 2, axis=1)))
        best = min(best, rms)
    return float(best)


def pose_distances(quats_a, trans_a, quats_b, trans_b, model, K=64):
    """
    Pairwise-aligned batch of pose_distance values.

    Uses the model's first and second moments: for M = R_a·g − R_b and
    δ = t_a − t_b the mean squared offset is tr(MΣMᵀ) + 2δᵀMμ + ‖δ‖².
    """
    quats_a = np.atleast_2d(np.asarray(quats_a, dtype=np.float64))
    quats_b = np.atleast_2d(np.asarray(quats_b, dtype=np.float64))
    trans_a = np.atleast_2d(np.asarray(trans_a, dtype=np.float64))
    trans_b = np.atleast_2d(np.asarray(trans_b, dtype=np.float64))
    n = len(quats_a)
    if not (len(quats_b) == len(trans_a) == len(trans_b) == n):
        raise DataError("length mismatch between pose batches")
    if n == 0:
        return np.zeros(0)

    reps = symmetry_representatives(model.symmetry, K)
    sigma = model.second_moment
    mu = model.first_moment
    g_sigma = reps @ sigma
    g_mu = reps @ mu
    tr_sigma = np.trace(sigma)

    out = np.empty(n)
    for start in range(0, n, _CHUNK):
        sl = slice(start, start + _CHUNK)
        Ra = Rotation.from_quat(quats_a[sl], scalar_first=True).as_matrix()
        Rb = Rotation.from_quat(quats_b[sl], scalar_first=True).as_matrix()
        delta = trans_a[sl] - trans_b[sl]
        P = np.einsum('nji,njk->nik', Ra, Rb)
        cross = np.einsum('njk,gjk->ng', P, g_sigma)
        ra_gmu = np.einsum('nij,gj->ngi', Ra, g_mu)
        lin = np.einsum('ngi,ni->ng', ra_gmu, delta) - np.einsum('nij,j,ni->n', Rb, mu, delta)[:, None]
        sq = 2.0 * tr_sigma - 2.0 * cross + 2.0 * lin + np.sum(delta ** 2, axis=1)[:, None]
        out[sl] = np.sqrt(np.maximum(sq, 0.0).min(axis=1))
    return out


def pose_distance_matrix(poses_a, poses_b, model, K=64):
    """(len(a), len(b)) distances between two lists of poses."""
    qa, ta = pose_arrays(poses_a)
    qb, tb = pose_arrays(poses_b)
    na, nb = len(qa), len(qb)
    if na == 0 or nb == 0:
        return np.zeros((na, nb))
    ia, ib = np.meshgrid(np.arange(na), np.arange(nb), indexing='ij')
    flat = pose_distances(qa[ia.ravel()], ta[ia.ravel()], qb[ib.ravel()], tb[ib.ravel()], model, K)
    return flat.reshape(na, nb)


# ---------------------------------------------------------------------------
# Matching and AP
# ---------------------------------------------------------------------------

def match_predictions(estimates, ground_truth, model, config=None):
    """
    Greedy matching in the given (confidence-descending) order.

    Each estimate takes the nearest unconsumed ground-truth instance. Within
    the threshold it is a TP for a relevant instance and IGNORE otherwise,
    consuming the instance either way; everything else is an FP.

    Returns:
        (flags, relevant_count)
    """
    config = config or MatchConfig()
    threshold = config.tp_threshold_factor * model.scale
    relevant = np.array([gt.visibility > config.relevance_visibility for gt in ground_truth], dtype=bool)
    dist = pose_distance_matrix([e.pose for e in estimates], [gt.pose for gt in ground_truth],
                                model, config.K)
    available = np.ones(len(ground_truth), dtype=bool)
    flags = []
    for i in range(len(estimates)):
        if not available.any():
            flags.append(FP)
            continue
        row = np.where(available, dist[i], np.inf)
        j = int(np.argmin(row))
        if row[j] < threshold:
            available[j] = False
            flags.append(TP if relevant[j] else IGNORE)
        else:
            flags.append(FP)
    return flags, int(relevant.sum())


def average_precision(flags, relevant_count):
    """Area under the precision envelope; IGNORE flags are skipped."""
    if relevant_count <= 0:
        raise DataError("relevant_count = 0: AP undefined")
    unknown = set(flags) - set(FLAGS)
    if unknown:
        raise DataError(f"unknown match flags {sorted(unknown)}")
    kept = np.array([f for f in flags if f != IGNORE])
    tp = np.cumsum(kept == TP)
    fp = np.cumsum(kept == FP)
    recalls = tp / float(relevant_count)
    precisions = tp / np.maximum(tp + fp, 1)

    mrec = np.concatenate(([0.0], recalls, [1.0]))
    mpre = np.concatenate(([0.0], precisions, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    ap = float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))
    return PRCurve(recalls.astype(np.float64), precisions.astype(np.float64), ap)


def mean_ap(aps):
    aps = list(aps)
    if not aps:
        raise DataError("mean_ap of no objects")
    return float(np.mean(aps))


# ---------------------------------------------------------------------------
# Dataset evaluation
# ---------------------------------------------------------------------------

@dataclass
class ObjectResult:
    object_id: int
    name: str
    relevant: int
    flags: list
    curve: PRCurve = None

    @property
    def ap(self):
        return None if self.curve is None else self.curve.ap


@dataclass
class EvaluationReport:
    objects: dict = field(default_factory=dict)
    mAP: float = None
    scenes: int = 0

    def ap_table(self):
        rows = []
        for oid, res in sorted(self.objects.items()):
            rows.append({
                'object_id': oid,
                'name': res.name,
                'relevant': res.relevant,
                'tp': res.flags.count(TP),
                'fp': res.flags.count(FP),
                'ignore': res.flags.count(IGNORE),
                'ap': res.ap,
            })
        return pd.DataFrame(rows, columns=['object_id', 'name', 'relevant', 'tp', 'fp', 'ignore', 'ap'])

    def pr_table(self):
        frames = []
        for oid, res in sorted(self.objects.items()):
            if res.curve is None:
                continue
            frames.append(pd.DataFrame({
                'object_id': oid,
                'rank': np.arange(1, len(res.curve.recalls) + 1),
                'recall': res.curve.recalls,
                'precision': res.curve.precisions,
            }))
        if not frames:
            return pd.DataFrame(columns=['object_id', 'rank', 'recall', 'precision'])
        return pd.concat(frames, ignore_index=True)

    def to_dict(self):
        return {
            'mAP': self.mAP,
            'scenes': self.scenes,
            'objects': {
                str(oid): {
                    'name': res.name,
                    'relevant': res.relevant,
                    'flags': res.flags,
                    'ap': res.ap,
                    'pr': None if res.curve is None else res.curve.to_dict(),
                }
                for oid, res in sorted(self.objects.items())
            },
        }

    def write(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_json(out_dir / 'report.json', self.to_dict())
        self.ap_table().to_csv(out_dir / 'ap_table.csv', index=False)
        self.pr_table().to_csv(out_dir / 'pr_curves.csv', index=False)


def _confidence_order(estimates):
    return sorted(range(len(estimates)),
                  key=lambda i: (-estimates[i].confidence, -estimates[i].support, i))


def evaluate_dataset(scene_pairs, catalog, config=None):
    """
    Per-object AP pooled over scenes, plus mAP.

    Args:
        scene_pairs: ordered (ground_truth_instances, estimates) per scene.
            Ground truth items carry model_id, pose and visibility; estimates
            carry category, pose (camera frame), confidence and support.
        catalog: model id -> ObjectModel.

    Objects with no relevant instance anywhere have no AP and are left out
    of the mean.
    """
    config = config or MatchConfig()
    pooled = {oid: [] for oid in catalog}
    relevant = {oid: 0 for oid in catalog}
    seen = set()

    for scene_idx, (ground_truth, estimates) in enumerate(scene_pairs):
        for est in estimates:
            if est.category not in catalog:
                raise DataError(f"category {est.category} outside catalog")
        for gt in ground_truth:
            if gt.model_id not in catalog:
                raise DataError(f"ground-truth model {gt.model_id} outside catalog")
        categories = {gt.model_id for gt in ground_truth} | {e.category for e in estimates}
        for oid in sorted(categories):
            seen.add(oid)
            ests = [e for e in estimates if e.category == oid]
            ests = [ests[i] for i in _confidence_order(ests)]
            gts = [gt for gt in ground_truth if gt.model_id == oid]
            flags, count = match_predictions(ests, gts, catalog[oid], config)
            relevant[oid] += count
            for rank, (est, flag) in enumerate(zip(ests, flags)):
                pooled[oid].append((-est.confidence, scene_idx, rank, flag))

    report = EvaluationReport(scenes=len(scene_pairs))
    for oid in sorted(seen):
        flags = [entry[3] for entry in sorted(pooled[oid])]
        result = ObjectResult(oid, catalog[oid].name, relevant[oid], flags)
        if relevant[oid] > 0:
            result.curve = average_precision(flags, relevant[oid])
        else:
            logger.info("object has no relevant instances, no AP", extra={'object_id': oid})
        report.objects[oid] = result

    aps = [res.ap for res in report.objects.values() if res.ap is not None]
    if aps:
        report.mAP = mean_ap(aps)
    else:
        logger.warning("no relevant instances in the dataset; mAP undefined")
    return report


if __name__ == "__main__":
    for flags, rel in ([[TP, TP], 2], [[FP, TP], 1], [[TP, FP, TP], 2]):
        print(f"{flags} relevant={rel} -> AP {average_precision(flags, rel).ap:.4f}")
