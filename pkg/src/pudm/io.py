"""ASCII XYZ / PLY point cloud files and atomic writes."""
import contextlib
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .geometry import as_cloud

FORMATS = (".xyz", ".ply")


@contextlib.contextmanager
def atomic_write(path, mode="w"):
    """Write to a temp file next to ``path`` and rename into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _fmt(p):
    return f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n"


def cloud_format(path):
    ext = Path(path).suffix.lower()
    if ext not in FORMATS:
        raise ValidationError(f"{path}: unsupported extension {ext!r} (use .xyz or .ply)")
    return ext


def write_cloud(cloud, path):
    pts = as_cloud(cloud)
    ext = cloud_format(path)
    with atomic_write(path) as fh:
        if ext == ".ply":
            fh.write(f"ply\nformat ascii 1.0\nelement vertex {len(pts)}\n")
            fh.write("property float x\nproperty float y\nproperty float z\nend_header\n")
        fh.writelines(_fmt(p) for p in pts)


def _parse_row(line, lineno, path, cols=None):
    parts = line.split()
    try:
        vals = [float(v) for v in parts]
    except ValueError:
        raise ValidationError(f"{path}:{lineno}: non-numeric value in {line.strip()!r}") from None
    if cols is None:
        if len(vals) != 3:
            raise ValidationError(f"{path}:{lineno}: expected 3 coordinates, got {len(vals)}")
        return vals
    if len(vals) != cols[1]:
        raise ValidationError(f"{path}:{lineno}: expected {cols[1]} values, got {len(vals)}")
    return [vals[j] for j in cols[0]]


def _read_xyz(lines, path):
    rows = []
    for lineno, line in enumerate(lines, 1):
        if line.strip() and not line.lstrip().startswith("#"):
            rows.append(_parse_row(line, lineno, path))
    return rows


def _read_ply(lines, path):
    if not lines or lines[0].strip() != "ply":
        raise ValidationError(f"{path}:1: missing 'ply' magic")
    count, props, element, end = None, [], None, None
    for lineno, line in enumerate(lines[1:], 2):
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if tok[1:2] != ["ascii"]:
                raise ValidationError(f"{path}:{lineno}: only ascii PLY is supported")
        elif tok[0] == "element":
            element = tok[1]
            if element == "vertex":
                count = int(tok[2])
            elif int(tok[2]) != 0:
                raise ValidationError(f"{path}:{lineno}: unsupported element {element!r}")
        elif tok[0] == "property":
            if element == "vertex":
                props.append(tok[-1])
        elif tok[0] == "end_header":
            end = lineno
            break
        else:
            raise ValidationError(f"{path}:{lineno}: unexpected header line {line.strip()!r}")
    if end is None:
        raise ValidationError(f"{path}: missing end_header")
    if count is None or not {"x", "y", "z"} <= set(props):
        raise ValidationError(f"{path}: header lacks a vertex element with x, y, z")
    cols = ([props.index("x"), props.index("y"), props.index("z")], len(props))
    body = [(n, ln) for n, ln in enumerate(lines[end:], end + 1) if ln.strip()]
    if len(body) != count:
        raise ValidationError(f"{path}: header declares {count} vertices but body has {len(body)} rows")
    return [_parse_row(ln, n, path, cols) for n, ln in body]


def read_cloud(path):
    ext = cloud_format(path)
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None
    rows = _read_ply(lines, path) if ext == ".ply" else _read_xyz(lines, path)
    if not rows:
        raise ValidationError(f"{path}: no points")
    return as_cloud(np.array(rows, dtype=np.float64), str(path))
