"""
Catalog of rigid object models for synthetic stacked scenes.
Parametric shapes close to the industrial bin-picking parts, sampled on a
regular surface grid and rescaled to their catalog scale.
"""

import logging
import math
from pathlib import Path

import numpy as np

from data_io import read_json, write_json
from errors import DataError
from geometry import ObjectModel, SymmetryClass, bounding_sphere

logger = logging.getLogger(__name__)

# Scales span roughly 4-33 cm, like a multi-scale bin-picking benchmark.
CATALOG_SPECS = [
    {'name': 'brick', 'shape': 'box', 'dims': (0.6, 0.4, 0.25), 'scale': 0.05,
     'symmetry': {'kind': 'cyclic', 'order': 2}},
    {'name': 'thinboard', 'shape': 'box', 'dims': (0.8, 0.5, 0.05), 'scale': 0.25,
     'symmetry': {'kind': 'cyclic', 'order': 2}},
    {'name': 'peg', 'shape': 'cylinder', 'dims': (0.2, 0.8), 'scale': 0.12,
     'symmetry': {'kind': 'revolution_with_flip'}},
    {'name': 'cup', 'shape': 'frustum', 'dims': (0.3, 0.45, 0.6), 'scale': 0.10,
     'symmetry': {'kind': 'revolution'}},
    {'name': 'hexnut', 'shape': 'hex_prism', 'dims': (0.5, 0.35), 'scale': 0.08,
     'symmetry': {'kind': 'cyclic', 'order': 6}},
    {'name': 'bracket', 'shape': 'bracket', 'dims': (0.7, 0.3, 0.08), 'scale': 0.20,
     'symmetry': {'kind': 'none'}},
]

DEFAULT_SPACING_FRACTION = 0.02

# meters; loaded models must match their declared frame this closely
FRAME_TOLERANCE = 1e-6


def _grid(lo, hi, spacing):
    n = max(2, int(math.ceil((hi - lo) / spacing)) + 1)
    return np.linspace(lo, hi, n)


def _rectangle(u_range, v_range, spacing):
    u, v = np.meshgrid(_grid(*u_range, spacing), _grid(*v_range, spacing), indexing='ij')
    return u.ravel(), v.ravel()


def _disk(radius, spacing, inner=0.0):
    """Concentric rings covering an annulus in the xy plane."""
    pts = []
    for r in _grid(inner, radius, spacing):
        n = max(1, int(math.ceil(2 * math.pi * r / spacing)))
        theta = np.arange(n) * 2 * math.pi / n
        pts.append(np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1))
    return np.concatenate(pts)


def sample_box(dims, spacing):
    """Surface grid of an axis-aligned box centred at the origin."""
    a, b, c = (d / 2 for d in dims)
    faces = []
    for sign in (-1, 1):
        u, v = _rectangle((-a, a), (-b, b), spacing)
        faces.append(np.stack([u, v, np.full_like(u, sign * c)], axis=1))
        u, v = _rectangle((-a, a), (-c, c), spacing)
        faces.append(np.stack([u, np.full_like(u, sign * b), v], axis=1))
        u, v = _rectangle((-b, b), (-c, c), spacing)
        faces.append(np.stack([np.full_like(u, sign * a), u, v], axis=1))
    return np.unique(np.concatenate(faces), axis=0)


def sample_frustum(r_bottom, r_top, height, spacing, top_cap=True):
    """Side wall of a truncated cone along z plus the bottom cap (and top cap)."""
    pts = []
    for z in _grid(-height / 2, height / 2, spacing):
        r = r_bottom + (r_top - r_bottom) * (z + height / 2) / height
        n = max(3, int(math.ceil(2 * math.pi * r / spacing)))
        theta = np.arange(n) * 2 * math.pi / n
        pts.append(np.stack([r * np.cos(theta), r * np.sin(theta), np.full(n, z)], axis=1))
    bottom = _disk(r_bottom, spacing)
    pts.append(np.column_stack([bottom, np.full(len(bottom), -height / 2)]))
    if top_cap:
        top = _disk(r_top, spacing)
        pts.append(np.column_stack([top, np.full(len(top), height / 2)]))
    return np.concatenate(pts)


def sample_cylinder(radius, height, spacing):
    return sample_frustum(radius, radius, height, spacing)


def sample_hex_prism(circumradius, height, spacing):
    """Hexagonal prism along z with both caps."""
    corners = [(circumradius * math.cos(k * math.pi / 3), circumradius * math.sin(k * math.pi / 3))
               for k in range(6)]
    pts = []
    for k in range(6):
        (x0, y0), (x1, y1) = corners[k], corners[(k + 1) % 6]
        # edge length equals the circumradius
        s, z = _rectangle((0.0, circumradius), (-height / 2, height / 2), spacing)
        s = s / circumradius
        pts.append(np.stack([x0 + s * (x1 - x0), y0 + s * (y1 - y0), z], axis=1))
    # caps: grid clipped to the hexagon
    apothem = circumradius * math.sqrt(3) / 2
    u, v = _rectangle((-circumradius, circumradius), (-apothem, apothem), spacing)
    inside = np.abs(v) <= apothem + 1e-12
    for k in range(3):
        angle = k * math.pi / 3 + math.pi / 6
        inside &= np.abs(u * math.cos(angle) + v * math.sin(angle)) <= apothem + 1e-12
    u, v = u[inside], v[inside]
    for sign in (-1, 1):
        pts.append(np.stack([u, v, np.full_like(u, sign * height / 2)], axis=1))
    return np.concatenate(pts)


def sample_bracket(length, width, thickness, spacing):
    """Right-angle bracket: two plates sharing an edge."""
    horizontal = sample_box((length, width, thickness), spacing)
    horizontal[:, 0] += length / 2
    vertical = sample_box((thickness, width, length), spacing)
    vertical[:, 2] += length / 2
    return np.unique(np.concatenate([horizontal, vertical]), axis=0)


SHAPE_SAMPLERS = {
    'box': lambda a, b, c, spacing: sample_box((a, b, c), spacing),
    'cylinder': sample_cylinder,
    'frustum': sample_frustum,
    'hex_prism': sample_hex_prism,
    'bracket': sample_bracket,
}


def build_model(model_id, spec, spacing_fraction=DEFAULT_SPACING_FRACTION, scale=None):
    """
    Build one catalog model from a shape spec.

    The shape is sampled in unit proportions, centred on its bounding sphere
    and rescaled so its bounding-sphere diameter equals the target scale.
    """
    sampler = SHAPE_SAMPLERS.get(spec['shape'])
    if sampler is None:
        raise DataError(f"unknown shape '{spec['shape']}'")
    unit_extent = max(spec['dims'])
    raw = sampler(*spec['dims'], spacing_fraction * unit_extent)
    symmetry = SymmetryClass.from_dict(spec.get('symmetry', {}))
    target = float(scale if scale is not None else spec['scale'])
    return ObjectModel.from_points(model_id, raw, symmetry, spec['name'], target_scale=target)


def build_default_catalog(spacing_fraction=DEFAULT_SPACING_FRACTION, names=None):
    """Catalog keyed by class index; `names` selects and orders a subset."""
    specs = CATALOG_SPECS
    if names is not None:
        by_name = {spec['name']: spec for spec in CATALOG_SPECS}
        missing = [n for n in names if n not in by_name]
        if missing:
            raise DataError(f"unknown catalog objects: {', '.join(missing)}")
        specs = [by_name[n] for n in names]
    return {i: build_model(i, spec, spacing_fraction) for i, spec in enumerate(specs)}


def validate_catalog(catalog):
    """Class indices must be 0..n-1 so they index semantic distributions."""
    if not catalog:
        raise DataError("catalog is empty")
    if sorted(catalog) != list(range(len(catalog))):
        raise DataError(f"catalog ids must be 0..{len(catalog) - 1}, got {sorted(catalog)}")
    return catalog


def write_catalog(path, catalog):
    write_json(path, {'models': [catalog[i].to_dict() for i in sorted(catalog)]})


def load_catalog(path):
    """Read a catalog JSON file; errors name the offending path."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"catalog not found: {path}")
    data = read_json(path)
    try:
        models = [ObjectModel.from_dict(m) for m in data['models']]
    except (KeyError, TypeError) as e:
        raise DataError(f"{path}: malformed catalog ({e})") from e
    for model in models:
        center, radius = bounding_sphere(model.points)
        if abs(2.0 * radius - model.scale) > FRAME_TOLERANCE or np.linalg.norm(center) > FRAME_TOLERANCE:
            raise DataError(f"{path}: model {model.id} ({model.name}) is not centred on its bounding sphere "
                            f"with diameter equal to its scale (diameter {2.0 * radius:.9f}, scale {model.scale:.9f}, "
                            f"centre offset {np.linalg.norm(center):.3g})")
    catalog = {m.id: m for m in models}
    logger.info("loaded catalog", extra={'path': str(path), 'models': len(catalog)})
    return validate_catalog(catalog)


if __name__ == "__main__":
    catalog = build_default_catalog()
    print(f"Catalog objects: {len(catalog)}")
    for model in catalog.values():
        print(f"  {model.id}: {model.name:10s} scale={model.scale * 100:.1f} cm "
              f"points={len(model.points)} symmetry={model.symmetry.kind}")
