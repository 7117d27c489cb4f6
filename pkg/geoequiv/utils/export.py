"""
CSV and JSON writers for reports, traces and grid functions.

Floats are written with 17 significant digits so doubles survive a round trip.
"""
import csv
import json
import math
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Union

import numpy as np

from geoequiv.core.errors import ConfigurationError

PathLike = Union[str, Path]


def fmt(value: Any) -> str:
    """Format a number with '%.17g'; non-finite values become 'nan', 'inf' or '-inf'."""
    if value is None:
        return "nan"
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return "%.17g" % value


def write_rows(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """
    Write a CSV file with a header row.

    Raises:
        ConfigurationError: the file cannot be written
    """
    target = Path(path)
    try:
        if target.parent and not target.parent.exists():
            target.parent.mkdir(parents=True, exist_ok=True)
        with target.open("w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    except OSError as exc:
        raise ConfigurationError(f"cannot write '{target}': {exc.strerror}", {"path": str(target)}) from exc
    return target


def quantity_rows(quantity: str, values: Any, i: Optional[int] = None, j: Optional[int] = None) -> list:
    """Long-format rows (quantity, i, j, value); arrays are unrolled over their indices."""
    array = np.asarray(values, dtype=float)
    if array.ndim == 0:
        return [(quantity, "" if i is None else i, "" if j is None else j, float(array))]
    if array.ndim == 1:
        return [(quantity, a, "" if j is None else j, v) for a, v in enumerate(array)]
    return [(quantity, a, b, array[a, b]) for a in range(array.shape[0]) for b in range(array.shape[1])]


def write_long_csv(path: PathLike, rows: Iterable[Sequence[Any]]) -> Path:
    return write_rows(path, ("quantity", "i", "j", "value"), rows)


def write_grid_function(path: PathLike, x1: np.ndarray, x2: np.ndarray, values: np.ndarray) -> Path:
    """One row per grid node: x1, x2, value."""
    mesh1, mesh2 = np.meshgrid(x1, x2, indexing="ij")
    rows = zip(mesh1.ravel(), mesh2.ravel(), np.asarray(values).ravel())
    return write_rows(path, ("x1", "x2", "value"), rows)


def write_json(path: PathLike, payload: Any) -> Path:
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(json.dumps(payload, indent=2))
    except OSError as exc:
        raise ConfigurationError(f"cannot write '{target}': {exc.strerror}", {"path": str(target)}) from exc
    return target
