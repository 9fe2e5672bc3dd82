"""Shared fixtures: a small catalog, a small camera and a handful of scenes."""

import numpy as np
import pytest

from geometry import CameraIntrinsics, ObjectModel, SymmetryClass
from object_catalog import build_default_catalog, sample_box, write_catalog
from pipeline_config import load_config
from scene_generator import BinSpec, SceneGenConfig, generate_scene, scene_name

SMALL_OBJECTS = ['thinboard', 'peg', 'bracket', 'hexnut']

SMALL_CAMERA = {'fx': 250.0, 'fy': 250.0, 'cx': 80.0, 'cy': 60.0, 'width': 160, 'height': 120}
SMALL_BIN = {'width': 0.4, 'depth': 0.3, 'height': 0.25, 'wall': 0.01}

SMALL_SETTINGS = {
    'sncs': {'N_s': 2048},
    'scenegen': {
        'categories_per_scene': [2, 3],
        'instances_per_category': [1, 3],
        'N_p': 2048,
        'camera_height': 0.9,
        'camera': SMALL_CAMERA,
        'bin': SMALL_BIN,
    },
}


@pytest.fixture(scope='session')
def catalog():
    return build_default_catalog(spacing_fraction=0.03, names=SMALL_OBJECTS)


@pytest.fixture(scope='session')
def catalog_file(catalog, tmp_path_factory):
    path = tmp_path_factory.mktemp('catalog') / 'catalog.json'
    write_catalog(path, catalog)
    return path


@pytest.fixture
def camera():
    return CameraIntrinsics(**SMALL_CAMERA)


@pytest.fixture(scope='session')
def config():
    return load_config(overrides=SMALL_SETTINGS)


@pytest.fixture(scope='session')
def scenegen_config():
    return SceneGenConfig(categories_per_scene=(2, 3), instances_per_category=(1, 3), N_p=2048,
                          camera_height=0.9, camera=CameraIntrinsics(**SMALL_CAMERA), bin=BinSpec(**SMALL_BIN))


@pytest.fixture(scope='session')
def scenes(scenegen_config, catalog):
    return [generate_scene(scenegen_config, catalog, seed=i, scene_id=scene_name(i)) for i in range(3)]


@pytest.fixture
def box_model():
    """8 x 4 x 2 cm box without symmetry."""
    points = sample_box((0.08, 0.04, 0.02), 0.005)
    return ObjectModel.from_points(0, points, SymmetryClass('none'), 'box')


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
