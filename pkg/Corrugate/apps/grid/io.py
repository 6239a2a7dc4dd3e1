import csv
import logging
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError

from utils.artifacts import ensure_dir

from .fields import MetricField, PeriodicField, coordinate_grid

logger = logging.getLogger(__name__)

CSV_NODE_LIMIT = 65536


def dump_field(field, path):
    """Header (n, k, R as int64, period as float64), then row-major samples, little-endian."""
    path = Path(path)
    ensure_dir(path.parent)
    header = np.array([field.n, field.k, field.resolution], dtype="<i8").tobytes()
    header += np.array([field.period], dtype="<f8").tobytes()
    with path.open("wb") as handle:
        handle.write(header)
        handle.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())
    logger.debug("dumped %s field to %s", field.node_shape, path)
    return path


def load_field(path, metric=False):
    raw = Path(path).read_bytes()
    if len(raw) < 32:
        raise ValidationError("truncated field file", code="field_format")
    n, k, resolution = (int(v) for v in np.frombuffer(raw[:24], dtype="<i8"))
    period = float(np.frombuffer(raw[24:32], dtype="<f8")[0])
    count = resolution**n * k
    samples = np.frombuffer(raw[32:], dtype="<f8")
    if samples.size != count:
        raise ValidationError(
            f"field file holds {samples.size} samples, header promises {count}",
            code="field_format",
        )
    values = samples.reshape((resolution,) * n + (k,)).astype(float)
    if metric:
        return MetricField(values, period=period)
    return PeriodicField(values, period=period)


def field_to_csv(field, path):
    """One row per node: indices, coordinates, then the k components."""
    nodes = field.resolution**field.n
    if nodes > CSV_NODE_LIMIT:
        raise ValidationError(
            f"field has {nodes} nodes; CSV export is limited to {CSV_NODE_LIMIT}",
            code="csv_too_large",
        )
    path = Path(path)
    ensure_dir(path.parent)
    coords = [c.ravel() for c in coordinate_grid(field.n, field.resolution, field.period)]
    indices = np.indices(field.node_shape).reshape(field.n, -1)
    flat = field.values.reshape(-1, field.k)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            [f"i{a}" for a in range(field.n)]
            + [f"x{a}" for a in range(field.n)]
            + [f"v{c}" for c in range(field.k)]
        )
        for row in range(nodes):
            writer.writerow(
                [int(indices[a, row]) for a in range(field.n)]
                + [repr(float(coords[a][row])) for a in range(field.n)]
                + [repr(float(v)) for v in flat[row]]
            )
    return path


def _quad_faces(resolution):
    """Quads of the periodic R×R grid, as flat node indices."""
    i, j = np.meshgrid(np.arange(resolution), np.arange(resolution), indexing="ij")
    nxt_i, nxt_j = (i + 1) % resolution, (j + 1) % resolution
    corners = [i * resolution + j, nxt_i * resolution + j, nxt_i * resolution + nxt_j, i * resolution + nxt_j]
    return np.stack([c.ravel() for c in corners], axis=-1)


def write_ply(field, path):
    """ASCII PLY with every component as a named vertex property x0..x{k-1}.

    Surfaces (n = 2) also get the quad faces of the periodic grid.
    """
    path = Path(path)
    ensure_dir(path.parent)
    flat = field.values.reshape(-1, field.k)
    faces = _quad_faces(field.resolution) if field.n == 2 else np.zeros((0, 4), dtype=int)
    with path.open("w") as handle:
        handle.write("ply\nformat ascii 1.0\n")
        handle.write(f"comment torus n={field.n} R={field.resolution}\n")
        handle.write(f"element vertex {len(flat)}\n")
        for c in range(field.k):
            handle.write(f"property double x{c}\n")
        if len(faces):
            handle.write(f"element face {len(faces)}\nproperty list uchar int vertex_indices\n")
        handle.write("end_header\n")
        for row in flat:
            handle.write(" ".join(repr(float(v)) for v in row) + "\n")
        for face in faces:
            handle.write("4 " + " ".join(str(int(v)) for v in face) + "\n")
    logger.info("wrote PLY mesh %s (%d vertices)", path, len(flat))
    return path


def write_obj(field, path):
    """OBJ of the projection onto the first three coordinates; surfaces only."""
    if field.n != 2 or field.k < 3:
        raise ValidationError("OBJ projection needs a surface with at least three components", code="mesh_shape")
    path = Path(path)
    ensure_dir(path.parent)
    flat = field.values.reshape(-1, field.k)[:, :3]
    with path.open("w") as handle:
        handle.write(f"# projection of a torus embedding, R={field.resolution}\n")
        for x, y, z in flat:
            handle.write(f"v {float(x)!r} {float(y)!r} {float(z)!r}\n")
        for face in _quad_faces(field.resolution) + 1:
            handle.write("f " + " ".join(str(int(v)) for v in face) + "\n")
    logger.info("wrote OBJ projection %s", path)
    return path
