"""File formats: microdata CSV and JSON results.

CSV schema (UTF-8, comma separated, ``.`` decimal, header row)::

    s,y,z,x1,...,xd

``s`` is 0/1, ``y`` an integer 1..q that is empty when ``s = 0``, ``z`` the
instrument, and ``x1`` the constant 1 unless the intercept is added on
read.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .errors import InputError
from .estimate import Dataset

FORMAT_VERSION = "catselect/1"


def _num(x) -> str:
    return repr(float(x))


def write_dataset_csv(data: Dataset, path) -> None:
    names = list(data.x_names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["s", "y", "z", *names])
        z = data.z if data.z is not None else np.zeros(data.n)
        for i in range(data.n):
            s = int(data.s[i])
            y = str(int(data.y[i])) if s == 1 else ""
            zi = z[i]
            zs = str(int(zi)) if float(zi).is_integer() else _num(zi)
            out.writerow([s, y, zs, *(_num(v) for v in data.x[i])])


def read_dataset_csv(path, q: int | None = None, add_intercept: bool = False) -> Dataset:
    """Parse and validate a microdata CSV.  Schema violations raise :class:`InputError`."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError("empty CSV file")
        if header[:3] != ["s", "y", "z"] or len(header) < 4 and not add_intercept:
            raise InputError("header must be s,y,z,x1,...,xd")
        x_names = header[3:]
        d = len(x_names)
        s_col, y_col, z_col, x_rows = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(f"line {lineno}: expected {len(header)} fields, got {len(row)}", line=lineno)
            try:
                s = int(row[0])
                if s not in (0, 1):
                    raise ValueError
            except ValueError:
                raise InputError(f"line {lineno}: s must be 0 or 1", line=lineno) from None
            ytxt = row[1].strip()
            if s == 0 and ytxt:
                raise InputError(f"line {lineno}: y present for an unselected row (s=0)", line=lineno)
            if s == 1:
                try:
                    y = int(ytxt)
                except ValueError:
                    raise InputError(f"line {lineno}: selected row needs an integer y", line=lineno) from None
                if y < 1:
                    raise InputError(f"line {lineno}: y must be >= 1", line=lineno)
            else:
                y = 0
            try:
                z = float(row[2])
                xs = [float(v) for v in row[3:]]
            except ValueError:
                raise InputError(f"line {lineno}: non-numeric z or x value", line=lineno) from None
            if not (math.isfinite(z) and all(math.isfinite(v) for v in xs)):
                raise InputError(f"line {lineno}: non-finite value", line=lineno)
            s_col.append(s)
            y_col.append(y)
            z_col.append(z)
            x_rows.append(xs)
    if not s_col:
        raise InputError("CSV has no data rows")
    x = np.array(x_rows, dtype=float).reshape(len(s_col), d)
    if add_intercept:
        x = np.column_stack([np.ones(x.shape[0]), x])
        x_names = ["const", *x_names]
    elif not np.all(x[:, 0] == 1.0):
        raise InputError("x1 must be the constant 1 (use --add-intercept to add one)")
    y_arr = np.array(y_col, dtype=np.int64)
    q_data = int(y_arr.max()) if y_arr.max() > 0 else 0
    if q is None:
        q = q_data
    elif q_data > q:
        raise InputError(f"y value {q_data} exceeds q={q}")
    if q < 2:
        raise InputError("need at least two outcome categories")
    data = Dataset(s=np.array(s_col), y=y_arr, x=x, z=np.array(z_col), q=q, x_names=x_names)
    return data.validate()


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def jsonable(obj):
    """Recursively convert numpy containers and scalars; non-finite floats become ``None``."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(obj, path) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed JSON in {path}: {exc}") from exc
