"""CSV and key-value file helpers shared by the CLI and library."""

from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Malformed or unusable input data."""


class ConfigError(ValueError):
    """Malformed configuration."""


def fmt(x: float) -> str:
    """17 significant digits: enough to round-trip any float64."""
    return f"{float(x):.17g}"


def short(x: float) -> str:
    """Shortest text that still round-trips exactly."""
    return repr(float(x))


def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_matrix_csv(path, expect_cols: int | None = None) -> np.ndarray:
    """Read a numeric CSV; a first line whose first field is not a number is a header."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(f.strip() for f in r)]
    except OSError as e:
        raise DataError(f"cannot read {path}: {e.strerror}") from e
    if rows and not _is_number(rows[0][0].strip()):
        rows = rows[1:]
    if not rows:
        raise DataError(f"{path}: no rows")
    width = len(rows[0]) if expect_cols is None else expect_cols
    out = np.empty((len(rows), width))
    for i, r in enumerate(rows, start=1):
        if len(r) != width:
            raise DataError(f"{path}: row {i} has {len(r)} columns, expected {width}")
        try:
            out[i - 1] = [float(f) for f in r]
        except ValueError as e:
            raise DataError(f"{path}: row {i} is not numeric ({e})") from e
    if not np.all(np.isfinite(out)):
        bad = int(np.flatnonzero(~np.isfinite(out).all(axis=1))[0]) + 1
        raise DataError(f"{path}: row {bad} contains NaN or infinity")
    return out


def matrix_to_csv(a: np.ndarray, header: list[str] | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(header)
    for row in np.atleast_2d(a):
        w.writerow([short(v) for v in row])
    return buf.getvalue()


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ConfigError(f"{source}:{n}: empty key")
        out[k] = v
    return out


def dump_kv(values: dict) -> str:
    lines = []
    for k, v in values.items():
        if isinstance(v, (list, tuple)):
            v = ", ".join(str(x) for x in v)
        elif isinstance(v, float):
            v = short(v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
