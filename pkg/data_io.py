"""
File formats used by scenes, predictions and reports.
PLY point clouds, PFM and 16-bit PGM depth, 8-bit PGM masks, JSON and JSON lines.
"""

import contextlib
import json
import logging
import os
import shutil
from pathlib import Path

import numpy as np
from PIL import Image

from errors import DataError
from geometry import DepthImage, as_points

logger = logging.getLogger(__name__)

PLY_TYPES = {
    'float': '<f4', 'float32': '<f4',
    'double': '<f8', 'float64': '<f8',
}


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------

def write_ply(path, points, binary=True):
    """Write x, y, z float64 vertices."""
    points = as_points(points)
    header = [
        'ply',
        'format binary_little_endian 1.0' if binary else 'format ascii 1.0',
        f'element vertex {len(points)}',
        'property double x',
        'property double y',
        'property double z',
        'end_header',
    ]
    with open(path, 'wb') as f:
        f.write(('\n'.join(header) + '\n').encode('ascii'))
        if binary:
            f.write(points.astype('<f8').tobytes())
        else:
            np.savetxt(f, points, fmt='%.17g')


def read_ply(path):
    """Read the x, y, z columns of the vertex element of an ASCII or binary PLY."""
    path = Path(path)
    with open(path, 'rb') as f:
        if f.readline().strip() != b'ply':
            raise DataError(f"{path}: not a PLY file")
        fmt, count, props, in_vertex = None, 0, [], False
        while True:
            line = f.readline()
            if not line:
                raise DataError(f"{path}: truncated PLY header")
            tokens = line.decode('ascii').split()
            if not tokens:
                continue
            if tokens[0] == 'format':
                fmt = tokens[1]
            elif tokens[0] == 'element':
                in_vertex = tokens[1] == 'vertex'
                if in_vertex:
                    count = int(tokens[2])
            elif tokens[0] == 'property' and in_vertex:
                if tokens[1] not in PLY_TYPES:
                    raise DataError(f"{path}: unsupported property type {tokens[1]}")
                props.append((tokens[2], PLY_TYPES[tokens[1]]))
            elif tokens[0] == 'end_header':
                break
        names = [name for name, _ in props]
        if not {'x', 'y', 'z'} <= set(names):
            raise DataError(f"{path}: vertex element lacks x, y, z")

        if fmt == 'binary_little_endian':
            dtype = np.dtype([(name, typ) for name, typ in props])
            data = np.frombuffer(f.read(dtype.itemsize * count), dtype=dtype, count=count)
            cols = [data[axis].astype(np.float64) for axis in 'xyz']
        elif fmt == 'ascii':
            rows = [f.readline().split() for _ in range(count)]
            table = np.array(rows, dtype=np.float64).reshape(count, len(props))
            cols = [table[:, names.index(axis)] for axis in 'xyz']
        else:
            raise DataError(f"{path}: unsupported PLY format {fmt}")
    return np.stack(cols, axis=1) if count else np.zeros((0, 3))


# ---------------------------------------------------------------------------
# Depth images
# ---------------------------------------------------------------------------

def write_pfm(path, depth):
    """Single-channel float32 PFM, little endian, rows stored bottom-up."""
    values = depth.values if isinstance(depth, DepthImage) else np.asarray(depth)
    height, width = values.shape
    with open(path, 'wb') as f:
        f.write(f'Pf\n{width} {height}\n-1.0\n'.encode('ascii'))
        f.write(np.flipud(values).astype('<f4').tobytes())


def read_pfm(path):
    path = Path(path)
    with open(path, 'rb') as f:
        kind = f.readline().strip()
        if kind != b'Pf':
            raise DataError(f"{path}: only single-channel PFM is supported")
        dims = f.readline().split()
        width, height = int(dims[0]), int(dims[1])
        scale = float(f.readline())
        dtype = '<f4' if scale < 0 else '>f4'
        raw = np.frombuffer(f.read(4 * width * height), dtype=dtype)
    if raw.size != width * height:
        raise DataError(f"{path}: truncated PFM data")
    return DepthImage(np.flipud(raw.reshape(height, width)).astype(np.float64))


def write_pgm16(path, depth):
    """16-bit PGM with millimeter quantization; 0 stays the missing sentinel."""
    values = depth.values if isinstance(depth, DepthImage) else np.asarray(depth)
    mm = np.clip(np.rint(values * 1000.0), 0, 65535).astype(np.uint16)
    Image.fromarray(mm).save(path, format='PPM')


def read_pgm(path):
    """Raw PGM samples as an integer array."""
    with Image.open(path) as img:
        return np.asarray(img).astype(np.int64)


def read_pgm16(path):
    return DepthImage(read_pgm(path).astype(np.float64) / 1000.0)


def write_mask_pgm(path, mask):
    """8-bit PGM, 255 where depth is present and 0 where it is missing."""
    img = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(img).save(path, format='PPM')


def read_mask_pgm(path):
    return read_pgm(path) > 0


def write_owner_pgm(path, owners):
    """16-bit owner map; stores instance index + 1, 0 for unowned pixels."""
    Image.fromarray((np.asarray(owners) + 1).astype(np.uint16)).save(path, format='PPM')


def read_owner_pgm(path):
    return read_pgm(path) - 1


def read_depth_image(path):
    """Load a PFM (meters) or 16-bit PGM (millimeters) depth image."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == '.pfm':
        return read_pfm(path)
    if suffix == '.pgm':
        return read_pgm16(path)
    raise DataError(f"{path}: unsupported depth format '{suffix}'")


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def write_json(path, data):
    with open(path, 'w') as f:
        json.dump(data, f, indent=2, sort_keys=True, allow_nan=False)
        f.write('\n')


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e})") from e


def write_jsonl(path, records):
    with open(path, 'w') as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True, allow_nan=False))
            f.write('\n')


def read_jsonl(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


@contextlib.contextmanager
def atomic_directory(final_path):
    """
    Yield a temporary sibling directory and move it into place on success,
    so readers never see a half-written output.
    """
    final_path = Path(final_path)
    tmp_path = final_path.with_name(final_path.name + '.tmp')
    if tmp_path.exists():
        shutil.rmtree(tmp_path)
    tmp_path.mkdir(parents=True)
    try:
        yield tmp_path
    except BaseException:
        shutil.rmtree(tmp_path, ignore_errors=True)
        raise
    if final_path.exists():
        shutil.rmtree(final_path)
    os.replace(tmp_path, final_path)


def atomic_write_json(path, data):
    with atomic_path(path) as tmp:
        write_json(tmp, data)


@contextlib.contextmanager
def atomic_path(path):
    """Yield a temporary sibling path and rename it over path on success."""
    path = Path(path)
    tmp = path.with_name(path.name + '.tmp' + path.suffix)
    try:
        yield tmp
    except BaseException:
        if tmp.exists():
            tmp.unlink()
        raise
    os.replace(tmp, path)
