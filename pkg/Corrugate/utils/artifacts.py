import csv
import json
import logging
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


def ensure_dir(path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _plain(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def write_json(path, payload):
    path = Path(path)
    ensure_dir(path.parent)
    with path.open("w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True, default=_plain)
    logger.info("wrote %s", path)
    return path


def to_plain(payload):
    """payload with numpy scalars and paths turned into JSON-native values."""
    return json.loads(json.dumps(payload, default=_plain))


def read_json(path):
    with Path(path).open() as handle:
        return json.load(handle)


def write_csv(path, columns, rows):
    """Write dict rows with a fixed column order; missing keys become blanks."""
    path = Path(path)
    ensure_dir(path.parent)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(column)) for column in columns])
    logger.info("wrote %s (%d rows)", path, len(rows))
    return path


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value
