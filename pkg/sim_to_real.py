"""
Sim-to-Real depth corruption.
Renders synthetic depth, applies a depth-missing mask (parametric or loaded
from an external fake depth image), converts to a point cloud and adds
domain randomization noise.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from data_io import read_depth_image
from errors import ConfigError, DataError
from geometry import DEPTH_SENTINEL, DepthImage, apply_pose, as_points

logger = logging.getLogger(__name__)

SCENE_SPLAT_RADIUS = 1.5
CLOUD_SPLAT_RADIUS = 0.5


@dataclass(frozen=True)
class MaskGenConfig:
    grazing_angle_cutoff: float = 75.0
    blob_count: tuple = (0, 3)
    blob_radius: tuple = (3.0, 12.0)
    blob_aspect: tuple = (0.5, 1.0)
    dropout_prob: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.grazing_angle_cutoff < 90:
            raise ConfigError("mask.grazing_angle_cutoff must be in (0, 90) degrees")
        for name in ('blob_count', 'blob_radius', 'blob_aspect'):
            lo, hi = getattr(self, name)
            if lo < 0 or lo > hi:
                raise ConfigError(f"mask.{name} must be a range [lo, hi] with 0 <= lo <= hi")
            object.__setattr__(self, name, (lo, hi))
        if self.blob_aspect[0] <= 0:
            raise ConfigError("mask.blob_aspect must be > 0")
        if not 0 <= self.dropout_prob <= 1:
            raise ConfigError("mask.dropout_prob must be in [0, 1]")


@dataclass(frozen=True)
class DomainRandomizationConfig:
    sigma: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError("domain_randomization.sigma must be >= 0")


@dataclass(eq=False)
class MissingMask:
    """True where depth is present."""

    present: np.ndarray

    def __post_init__(self):
        self.present = np.asarray(self.present, dtype=bool)
        if self.present.ndim != 2:
            raise DataError("mask must be 2-D")

    @classmethod
    def all_present(cls, width, height):
        return cls(np.ones((height, width), dtype=bool))

    @property
    def width(self):
        return self.present.shape[1]

    @property
    def height(self):
        return self.present.shape[0]

    @property
    def missing_count(self):
        return int((~self.present).sum())


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def render_points(points, camera, splat_radius=SCENE_SPLAT_RADIUS, ids=None):
    """
    Point-splat z-buffer in the camera frame.

    A point at projected (u, v) covers every pixel centre (px, py) with
    (px - u)² + (py - v)² <= r². Each pixel keeps the nearest depth; on equal
    depth the earlier point wins.

    Returns:
        (depth values (H, W), owner ids (H, W) with -1 where unhit)
    """
    points = as_points(points)
    depth = np.full((camera.height, camera.width), DEPTH_SENTINEL)
    owners = np.full((camera.height, camera.width), -1, dtype=np.int64)
    ids = np.zeros(len(points), dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
    front = points[:, 2] > 0
    points, ids = points[front], ids[front]
    if len(points) == 0:
        return depth, owners

    z = points[:, 2]
    u = camera.fx * points[:, 0] / z + camera.cx
    v = camera.fy * points[:, 1] / z + camera.cy
    reach = int(math.ceil(splat_radius))
    offsets = np.arange(-reach, reach + 2)
    du, dv = np.meshgrid(offsets, offsets, indexing='ij')
    px = np.floor(u)[:, None].astype(np.int64) + du.ravel()[None, :]
    py = np.floor(v)[:, None].astype(np.int64) + dv.ravel()[None, :]
    inside = ((px - u[:, None]) ** 2 + (py - v[:, None]) ** 2 <= splat_radius ** 2)
    inside &= (px >= 0) & (px < camera.width) & (py >= 0) & (py < camera.height)

    point_idx = np.broadcast_to(np.arange(len(points))[:, None], px.shape)[inside]
    lin = py[inside] * camera.width + px[inside]
    zs = z[point_idx]
    order = np.lexsort((point_idx, zs, lin))
    lin_sorted = lin[order]
    first = np.concatenate(([True], lin_sorted[1:] != lin_sorted[:-1]))
    winners = order[first]
    depth.flat[lin[winners]] = zs[winners]
    owners.flat[lin[winners]] = ids[point_idx[winners]]
    return depth, owners


def instance_points(scene, index):
    """Model samples of one scene instance in the camera frame."""
    inst = scene.instances[index]
    return apply_pose(inst.pose, scene.models[inst.model_id].points)


def render_scene(scene, camera=None, splat_radius=SCENE_SPLAT_RADIUS):
    """Depth image plus the instance index owning each pixel."""
    camera = camera or scene.camera
    if not scene.instances:
        return DepthImage.empty(camera.width, camera.height), np.full((camera.height, camera.width), -1)
    clouds = [instance_points(scene, i) for i in range(len(scene.instances))]
    ids = np.concatenate([np.full(len(c), i) for i, c in enumerate(clouds)])
    depth, owners = render_points(np.concatenate(clouds), camera, splat_radius, ids)
    return DepthImage(depth), owners


def render_depth(scene, camera=None, splat_radius=SCENE_SPLAT_RADIUS):
    return render_scene(scene, camera, splat_radius)[0]


# ---------------------------------------------------------------------------
# Depth <-> cloud
# ---------------------------------------------------------------------------

def _check_dims(depth, camera):
    if depth.width != camera.width or depth.height != camera.height:
        raise DataError(f"depth is {depth.width}x{depth.height}, camera expects "
                        f"{camera.width}x{camera.height}")


def depth_to_cloud(depth, camera, return_pixels=False):
    """
    Pinhole back-projection of every non-sentinel pixel, row-major order.
    With return_pixels the (row, col) of each point is returned too.
    """
    _check_dims(depth, camera)
    rows, cols = np.nonzero(depth.valid)
    z = depth.values[rows, cols]
    x = (cols - camera.cx) * z / camera.fx
    y = (rows - camera.cy) * z / camera.fy
    cloud = np.stack([x, y, z], axis=1).reshape(-1, 3)
    if return_pixels:
        return cloud, np.stack([rows, cols], axis=1)
    return cloud


def cloud_to_depth(cloud, camera, splat_radius=CLOUD_SPLAT_RADIUS):
    return DepthImage(render_points(cloud, camera, splat_radius)[0])


# ---------------------------------------------------------------------------
# Missing-depth masks
# ---------------------------------------------------------------------------

def rasterize_ellipse(shape, center, radius_x, radius_y, angle=0.0):
    """Boolean (H, W) map of pixel centres inside a rotated ellipse."""
    height, width = shape
    rows, cols = np.mgrid[0:height, 0:width]
    dx = cols - center[0]
    dy = rows - center[1]
    c, s = math.cos(angle), math.sin(angle)
    a = (dx * c + dy * s) / max(radius_x, 1e-9)
    b = (-dx * s + dy * c) / max(radius_y, 1e-9)
    return a * a + b * b <= 1.0


def grazing_angles(depth, camera):
    """
    Angle in degrees between each pixel's surface normal and its view ray.
    Normals come from central differences of the back-projected point map;
    pixels without four valid neighbours get NaN.
    """
    _check_dims(depth, camera)
    h, w = depth.height, depth.width
    rows, cols = np.mgrid[0:h, 0:w]
    z = depth.values
    P = np.stack([(cols - camera.cx) * z / camera.fx, (rows - camera.cy) * z / camera.fy, z], axis=-1)
    angles = np.full((h, w), np.nan)
    if h < 3 or w < 3:
        return angles
    valid = depth.valid
    ok = (valid[1:-1, 1:-1] & valid[1:-1, 2:] & valid[1:-1, :-2] & valid[2:, 1:-1] & valid[:-2, 1:-1])
    dx = P[1:-1, 2:] - P[1:-1, :-2]
    dy = P[2:, 1:-1] - P[:-2, 1:-1]
    normal = np.cross(dx, dy)
    ray = P[1:-1, 1:-1]
    denom = np.linalg.norm(normal, axis=-1) * np.linalg.norm(ray, axis=-1)
    ok &= denom > 0
    cosine = np.abs(np.sum(normal * ray, axis=-1)) / np.where(ok, denom, 1.0)
    inner = np.degrees(np.arccos(np.clip(cosine, 0.0, 1.0)))
    angles[1:-1, 1:-1] = np.where(ok, inner, np.nan)
    return angles


def synth_missing_mask(depth, camera, config=None, stream=None):
    """
    Parametric depth-missing pattern: grazing surfaces, random elliptical
    blobs and independent dropout. `stream` derives a per-scene generator.
    """
    config = config or MaskGenConfig()
    rng = np.random.default_rng(config.seed if stream is None else [config.seed, stream])
    h, w = depth.height, depth.width

    missing = np.nan_to_num(grazing_angles(depth, camera), nan=0.0) > config.grazing_angle_cutoff

    n_blobs = int(rng.integers(config.blob_count[0], config.blob_count[1] + 1))
    for _ in range(n_blobs):
        radius = rng.uniform(*config.blob_radius)
        aspect = rng.uniform(*config.blob_aspect)
        angle = rng.uniform(0.0, math.pi)
        margin = int(math.ceil(radius))
        x_lo, x_hi = (margin, w - margin) if w > 2 * margin else (0, w)
        y_lo, y_hi = (margin, h - margin) if h > 2 * margin else (0, h)
        center = (int(rng.integers(x_lo, x_hi)), int(rng.integers(y_lo, y_hi)))
        missing |= rasterize_ellipse((h, w), center, radius, radius * aspect, angle)

    missing |= rng.random((h, w)) < config.dropout_prob
    return MissingMask(~missing)


def apply_missing_mask(synthetic, mask):
    """Keep synthetic depth where the mask says present; sentinel elsewhere."""
    if mask.width != synthetic.width or mask.height != synthetic.height:
        raise DataError(f"mask is {mask.width}x{mask.height}, depth is "
                        f"{synthetic.width}x{synthetic.height}")
    keep = mask.present & synthetic.valid
    return DepthImage(np.where(keep, synthetic.values, DEPTH_SENTINEL))


def load_external_mask(path, width=None, height=None):
    """Mask from an externally produced fake depth image: present where depth > 0."""
    depth = read_depth_image(path)
    if width is not None and (depth.width != width or depth.height != height):
        raise DataError(f"{path}: mask is {depth.width}x{depth.height}, expected {width}x{height}")
    return MissingMask(depth.values > 0)


def domain_randomize(cloud, sigma, seed=0):
    """Independent N(0, σ²) noise on every coordinate."""
    if sigma < 0:
        raise DataError("sigma must be >= 0")
    cloud = as_points(cloud)
    rng = np.random.default_rng(seed)
    return cloud + rng.normal(0.0, sigma, size=cloud.shape)


def transfer_depth(synthetic, camera, mask, randomization=None, stream=None):
    """
    Full corruption chain: mask the synthetic depth, back-project and
    randomize.

    Returns:
        (transferred DepthImage, noisy cloud, (row, col) pixel of each point)
    """
    randomization = randomization or DomainRandomizationConfig()
    transferred = apply_missing_mask(synthetic, mask)
    cloud, pixels = depth_to_cloud(transferred, camera, return_pixels=True)
    if len(cloud) == 0:
        logger.warning("transferred cloud is empty")
    seed = randomization.seed if stream is None else [randomization.seed, stream]
    cloud = domain_randomize(cloud, randomization.sigma, seed)
    return transferred, cloud, pixels
