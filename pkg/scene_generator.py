"""
Synthetic stacked scenes with complete ground truth.
Objects are dropped into a bin with bounding-sphere contact, rendered from a
top-down camera and labelled point by point.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation

from data_io import (atomic_directory, read_json, read_jsonl, read_owner_pgm, read_pfm, read_ply,
                     write_json, write_jsonl, write_owner_pgm, write_pfm, write_ply)
from errors import ConfigError, DataError, InvariantError
from geometry import CameraIntrinsics, RigidPose, canonical_quaternion, compose, invert
from sim_to_real import depth_to_cloud, instance_points, render_points, render_scene

logger = logging.getLogger(__name__)

LABEL_COLUMNS = ['semantic', 'instance', 'scale', 'qw', 'qx', 'qy', 'qz', 'tx', 'ty', 'tz', 'visibility']
INT_LABELS = ('semantic', 'instance')

DEFAULT_CAMERA = CameraIntrinsics(fx=320.0, fy=320.0, cx=160.0, cy=120.0, width=320, height=240)


@dataclass(frozen=True)
class BinSpec:
    """Inner dimensions in meters; the floor is z = 0 and the bin is centred on the z axis."""

    width: float = 0.5
    depth: float = 0.4
    height: float = 0.25
    wall: float = 0.01

    def __post_init__(self):
        if min(self.width, self.depth, self.height, self.wall) <= 0:
            raise ConfigError("bin dimensions must be > 0")

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class SceneGenConfig:
    categories_per_scene: tuple = (3, 4)
    instances_per_category: tuple = (2, 4)
    drop_height: float = 0.5
    max_attempts: int = 100
    N_p: int = 16384
    camera_height: float = 1.0
    camera: CameraIntrinsics = DEFAULT_CAMERA
    bin: BinSpec = field(default_factory=BinSpec)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.camera, dict):
            object.__setattr__(self, 'camera', CameraIntrinsics.from_dict(self.camera))
        if isinstance(self.bin, dict):
            object.__setattr__(self, 'bin', BinSpec(**self.bin))
        for name in ('categories_per_scene', 'instances_per_category'):
            lo, hi = getattr(self, name)
            if lo < 1 or lo > hi:
                raise ConfigError(f"scenegen.{name} must be a nonempty range with lo >= 1")
            object.__setattr__(self, name, (int(lo), int(hi)))
        if self.drop_height < self.bin.height:
            raise ConfigError("scenegen.drop_height must be at least the bin height")
        if self.max_attempts < 1:
            raise ConfigError("scenegen.max_attempts must be >= 1")
        if self.N_p < 1:
            raise ConfigError("scenegen.N_p must be >= 1")
        if self.camera_height <= self.bin.height:
            raise ConfigError("scenegen.camera_height must be above the bin")


@dataclass(frozen=True)
class SceneInstance:
    """Ground truth for one instance; pose is in the camera frame."""

    model_id: int
    pose: RigidPose
    world_pose: RigidPose
    visibility: float = 0.0

    def to_dict(self):
        return {'model_id': self.model_id, 'pose': self.pose.to_dict(),
                'world_pose': self.world_pose.to_dict(), 'visibility': self.visibility}

    @classmethod
    def from_dict(cls, data):
        return cls(int(data['model_id']), RigidPose.from_dict(data['pose']),
                   RigidPose.from_dict(data['world_pose']), float(data['visibility']))


@dataclass(eq=False)
class LabeledScene:
    scene_id: str
    seed: int
    instances: list
    camera: CameraIntrinsics
    camera_pose: RigidPose
    bin: BinSpec
    models: dict
    num_classes: int
    cloud: np.ndarray = None
    labels: pd.DataFrame = None
    depth: object = None
    owners: np.ndarray = None
    flags: dict = field(default_factory=dict)

    def metadata(self):
        return {
            'scene_id': self.scene_id,
            'seed': self.seed,
            'num_classes': self.num_classes,
            'camera': self.camera.to_dict(),
            'camera_pose': self.camera_pose.to_dict(),
            'bin': self.bin.to_dict(),
            'instances': [inst.to_dict() for inst in self.instances],
            'flags': self.flags,
        }


def scene_name(index):
    return f"scene_{index:05d}"


def empty_labels():
    return pd.DataFrame({c: pd.Series(dtype='int64' if c in INT_LABELS else 'float64')
                         for c in LABEL_COLUMNS})


# ---------------------------------------------------------------------------
# Placement
# ---------------------------------------------------------------------------

def drop_sphere(x, y, radius, placed):
    """
    Rest height of a sphere lowered along −z at (x, y) onto the floor and the
    already placed spheres, given as (x, y, z, r) tuples.
    """
    z = radius
    for px, py, pz, pr in placed:
        h2 = (x - px) ** 2 + (y - py) ** 2
        reach = (radius + pr) ** 2
        if h2 < reach:
            z = max(z, pz + math.sqrt(reach - h2))
    return z


def top_down_camera_pose(height):
    """World-from-camera pose looking straight down at the bin floor."""
    return RigidPose.from_rotation(Rotation.from_euler('x', np.pi), [0.0, 0.0, height])


def place_instances(model_ids, catalog, config, rng):
    """
    Sequential seeded drop. Each attempt draws yaw, pitch, roll then x, y.

    Returns:
        (list of (model_id, world RigidPose), number of instances that could not be placed)
    """
    bin_ = config.bin
    placed, spheres, failures = [], [], 0
    for model_id in model_ids:
        r = catalog[model_id].scale / 2.0
        for _ in range(config.max_attempts):
            angles = rng.uniform([-np.pi, -np.pi / 2, -np.pi], [np.pi, np.pi / 2, np.pi])
            xy = rng.uniform(-1.0, 1.0, size=2)
            half_w, half_d = bin_.width / 2 - r, bin_.depth / 2 - r
            if half_w < 0 or half_d < 0:
                continue
            x, y = xy[0] * half_w, xy[1] * half_d
            z = drop_sphere(x, y, r, spheres)
            if z + r > bin_.height:
                continue
            rotation = Rotation.from_euler('ZYX', angles)
            placed.append((model_id, RigidPose.from_rotation(rotation, [x, y, z])))
            spheres.append((x, y, z, r))
            break
        else:
            failures += 1
            logger.warning("could not place instance", extra={'model_id': model_id,
                                                              'attempts': config.max_attempts})
    return placed, failures


# ---------------------------------------------------------------------------
# Visibility and labels
# ---------------------------------------------------------------------------

def visibilities(scene, owners=None):
    """Winning pixels in the scene z-buffer over pixels covered when rendered alone."""
    if owners is None:
        owners = render_scene(scene)[1]
    won = np.bincount(owners[owners >= 0].ravel(), minlength=len(scene.instances))
    result = []
    for i in range(len(scene.instances)):
        solo = np.count_nonzero(render_points(instance_points(scene, i), scene.camera)[1] >= 0)
        result.append(float(min(won[i] / solo, 1.0)) if solo else 0.0)
    return result


def compute_visibility(scene, index):
    return visibilities(scene)[index]


def furthest_point_sampling(points, n):
    """Indices of n furthest-point samples; the first is the point with maximum z."""
    if n >= len(points):
        return np.arange(len(points))
    chosen = np.empty(n, dtype=np.int64)
    chosen[0] = int(np.argmax(points[:, 2]))
    dist = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for k in range(1, n):
        chosen[k] = int(np.argmax(dist))
        np.minimum(dist, np.sum((points - points[chosen[k]]) ** 2, axis=1), out=dist)
    return chosen


def sample_indices(points, n, rng):
    """
    FPS down to n points, or every point plus seeded draws with replacement
    when there are fewer than n.

    Returns:
        (indices, sampled_with_replacement)
    """
    if len(points) >= n:
        return furthest_point_sampling(points, n), False
    if len(points) == 0:
        return np.zeros(0, dtype=np.int64), True
    extra = rng.choice(len(points), size=n - len(points), replace=True)
    return np.concatenate([np.arange(len(points)), extra]), True


def labels_for_owners(scene, owners):
    """Label table for points owned by the given instance indices."""
    owners = np.asarray(owners, dtype=np.int64)
    if np.any(owners < 0):
        raise InvariantError("labelled point without an owning instance")
    if len(owners) == 0:
        return empty_labels()
    inst_table = np.array([
        [inst.model_id, scene.models[inst.model_id].scale,
         *canonical_quaternion(inst.pose.rotation), *inst.pose.translation, inst.visibility]
        for inst in scene.instances
    ])
    rows = inst_table[owners]
    labels = pd.DataFrame({
        'semantic': rows[:, 0].astype(np.int64),
        'instance': owners,
        'scale': rows[:, 1],
        'qw': rows[:, 2], 'qx': rows[:, 3], 'qy': rows[:, 4], 'qz': rows[:, 5],
        'tx': rows[:, 6], 'ty': rows[:, 7], 'tz': rows[:, 8],
        'visibility': rows[:, 9],
    })
    return labels[LABEL_COLUMNS]


def label_cloud(scene, cloud, pixels, owners, n_points=None, seed=0):
    """
    Labels for a back-projected cloud whose points came from the given
    (row, col) pixels of an owner map; optionally resampled to n_points.

    Returns:
        (cloud, labels, sampled_with_replacement)
    """
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    point_owners = owners[pixels[:, 0], pixels[:, 1]] if len(pixels) else np.zeros(0, dtype=np.int64)
    replaced = False
    if n_points is not None:
        idx, replaced = sample_indices(cloud, n_points, np.random.default_rng(seed))
        if replaced:
            logger.warning("too few visible points, sampling with replacement",
                           extra={'scene_id': scene.scene_id, 'visible': len(cloud), 'target': n_points})
        cloud, point_owners = cloud[idx], point_owners[idx]
    return cloud, labels_for_owners(scene, point_owners), replaced


def label_points(scene, n_points, seed=0):
    """Render, back-project, tag by owning instance and sample n_points."""
    depth, owners = render_scene(scene)
    cloud, pixels = depth_to_cloud(depth, scene.camera, return_pixels=True)
    cloud, labels, replaced = label_cloud(scene, cloud, pixels, owners, n_points, seed)
    scene.depth, scene.owners = depth, owners
    scene.cloud, scene.labels = cloud, labels
    scene.flags['sampled_with_replacement'] = replaced
    scene.flags['visible_points'] = int(np.count_nonzero(owners >= 0))
    return cloud, labels


# ---------------------------------------------------------------------------
# Scene construction
# ---------------------------------------------------------------------------

def build_scene(world_poses, catalog, config, seed=0, scene_id='scene_00000', camera_height=None,
                num_classes=None, flags=None):
    """
    Label a scene from explicit (model_id, world pose) pairs seen by the
    top-down camera: camera-frame poses, visibility, rendered cloud and labels.
    """
    height = config.camera_height if camera_height is None else camera_height
    scene = LabeledScene(scene_id, int(seed), [], config.camera, top_down_camera_pose(height), config.bin,
                         catalog, num_classes or len(catalog), flags=dict(flags or {}))
    cam_inv = invert(scene.camera_pose)
    scene.instances = [SceneInstance(mid, compose(cam_inv, wp), wp) for mid, wp in world_poses]
    _, owners = render_scene(scene)
    vis = visibilities(scene, owners)
    scene.instances = [dataclasses.replace(inst, visibility=v) for inst, v in zip(scene.instances, vis)]
    label_points(scene, config.N_p, seed=scene.seed)
    return scene


def generate_scene(config, catalog, seed=None, scene_id='scene_00000'):
    """
    Drop 3-4 random categories (by default) into the bin and label the
    rendered cloud. Deterministic given the seed.
    """
    if not catalog:
        raise DataError("catalog is empty")
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    ids = sorted(catalog)
    lo, hi = config.categories_per_scene
    n_categories = int(rng.integers(min(lo, len(ids)), min(hi, len(ids)) + 1))
    categories = rng.choice(ids, size=n_categories, replace=False)
    model_ids = []
    for category in categories:
        count = int(rng.integers(config.instances_per_category[0], config.instances_per_category[1] + 1))
        model_ids.extend([int(category)] * count)
    model_ids = [model_ids[i] for i in rng.permutation(len(model_ids))]

    world_poses, failures = place_instances(model_ids, catalog, config, rng)
    return build_scene(world_poses, catalog, config, seed=seed, scene_id=scene_id,
                       flags={'placement_failures': failures})


def generate_close_packed_scene(model, config, count=2, spacing_factor=0.6, seed=0, scene_id='scene_00000',
                                num_classes=None):
    """
    A row of flat instances along x with centre spacing spacing_factor × scale,
    each lying with its longest axis along y. The camera height makes the row
    span about 80% of the image width.
    """
    spacing = spacing_factor * model.scale
    extent = model.points.max(axis=0) - model.points.min(axis=0)
    # longest horizontal axis along y, thinnest axis vertical
    order = np.argsort(extent)
    basis = np.zeros((3, 3))
    basis[2, order[0]] = 1.0
    basis[1, order[2]] = 1.0
    basis[0] = np.cross(basis[1], basis[2])
    rotation = Rotation.from_matrix(basis)
    lift = -(model.points @ basis.T)[:, 2].min()

    xs = (np.arange(count) - (count - 1) / 2.0) * spacing
    world_poses = [(model.id, RigidPose.from_rotation(rotation, [x, 0.0, lift])) for x in xs]
    row_length = (count - 1) * spacing + model.scale
    height = lift + config.camera.fx * row_length / (0.8 * config.camera.width)
    return build_scene(world_poses, {model.id: model}, config, seed=seed, scene_id=scene_id, camera_height=height,
                       num_classes=num_classes or model.id + 1,
                       flags={'placement_failures': 0, 'close_packed': True})


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def labels_to_records(labels):
    return [
        {c: (int(row[c]) if c in INT_LABELS else float(row[c])) for c in LABEL_COLUMNS}
        for row in labels.to_dict('records')
    ]


def labels_from_records(records):
    if not records:
        return empty_labels()
    labels = pd.DataFrame.from_records(records)
    missing = [c for c in LABEL_COLUMNS if c not in labels.columns]
    if missing:
        raise DataError(f"label records lack columns {missing}")
    labels = labels[LABEL_COLUMNS]
    return labels.astype({c: 'int64' for c in INT_LABELS})


def save_scene(scene, root):
    """Write scene.json, cloud.ply, labels.jsonl, depth.pfm and owners.pgm atomically."""
    with atomic_directory(Path(root) / scene.scene_id) as tmp:
        write_json(tmp / 'scene.json', scene.metadata())
        write_ply(tmp / 'cloud.ply', scene.cloud)
        write_jsonl(tmp / 'labels.jsonl', labels_to_records(scene.labels))
        write_pfm(tmp / 'depth.pfm', scene.depth)
        write_owner_pgm(tmp / 'owners.pgm', scene.owners)
    return Path(root) / scene.scene_id


def load_scene(path, catalog):
    path = Path(path)
    meta = read_json(path / 'scene.json')
    instances = [SceneInstance.from_dict(d) for d in meta['instances']]
    for inst in instances:
        if inst.model_id not in catalog:
            raise DataError(f"{path}: category id {inst.model_id} outside catalog")
    if int(meta['num_classes']) != len(catalog):
        raise DataError(f"{path}: scene has {meta['num_classes']} classes, catalog has {len(catalog)}")
    scene = LabeledScene(meta['scene_id'], int(meta['seed']), instances,
                         CameraIntrinsics.from_dict(meta['camera']), RigidPose.from_dict(meta['camera_pose']),
                         BinSpec(**meta['bin']), catalog, int(meta['num_classes']), flags=meta.get('flags', {}))
    scene.cloud = read_ply(path / 'cloud.ply')
    scene.labels = labels_from_records(read_jsonl(path / 'labels.jsonl'))
    if len(scene.labels) != len(scene.cloud):
        raise DataError(f"{path}: {len(scene.labels)} labels for {len(scene.cloud)} points")
    scene.depth = read_pfm(path / 'depth.pfm')
    scene.owners = read_owner_pgm(path / 'owners.pgm')
    return scene


def list_scenes(root):
    """Scene directories under root, ordered by scene id."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"scenes directory not found: {root}")
    return sorted(p for p in root.iterdir() if (p / 'scene.json').is_file())


if __name__ == "__main__":
    from object_catalog import build_default_catalog

    catalog = build_default_catalog()
    scene = generate_scene(SceneGenConfig(), catalog, seed=0)
    print("=" * 70)
    print(f"SCENE {scene.scene_id}: {len(scene.instances)} instances, {len(scene.cloud)} points")
    print("=" * 70)
    for i, inst in enumerate(scene.instances):
        print(f"  [{i}] {catalog[inst.model_id].name:10s} visibility={inst.visibility:.2f}")
