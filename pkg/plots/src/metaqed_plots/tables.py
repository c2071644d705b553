"""CSV/manifest ingestion and long-to-grid reshaping.

The scan CLI writes long-format tables (one row per cell) with
unit-suffixed column names and a ``manifest.json`` next to them.  Loaders
here validate the header against the consuming figure's schema before any
numeric parsing, so a mismatched file fails with a column diff instead of
a downstream KeyError.
"""

import csv
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class PlotDataError(Exception):
    """Input table cannot back the requested figure."""


class SchemaMismatch(PlotDataError):
    def __init__(self, path, missing, header):
        self.missing = tuple(missing)
        self.header = tuple(header)
        super().__init__(
            f"{path}: schema mismatch; missing columns "
            f"[{', '.join(self.missing)}], file has "
            f"[{', '.join(self.header)}]")


class EmptyTable(PlotDataError):
    def __init__(self, path):
        super().__init__(f"{path}: no data rows")


@dataclass(frozen=True)
class Table:
    """Columns of one delimited file, keyed by header name."""

    path: str
    columns: dict

    @property
    def names(self):
        return tuple(self.columns)

    def __getitem__(self, name):
        return self.columns[name]

    def __len__(self):
        return len(next(iter(self.columns.values())))

    def family(self, pattern):
        """Column names matching ``pattern`` in full, header order."""
        rx = re.compile(pattern)
        return tuple(n for n in self.columns if rx.fullmatch(n))


def _read_header(path):
    with open(path, newline="", encoding="utf-8") as fh:
        row = next(csv.reader(fh), None)
    if not row:
        raise EmptyTable(path)
    return [c.strip() for c in row]


def load_table(path, required=(), families=()):
    """Parse a CSV into float columns after validating its header.

    required: column names that must appear verbatim.
    families: regex patterns, each of which must match at least one column
    (per-figure repeated groups such as diagonal entries or branches).
    """
    path = Path(path)
    if not path.is_file():
        raise PlotDataError(f"{path}: no such file")
    header = _read_header(path)
    missing = [c for c in required if c not in header]
    for pat in families:
        rx = re.compile(pat)
        if not any(rx.fullmatch(n) for n in header):
            missing.append(f"~{pat}")
    if missing:
        raise SchemaMismatch(path, missing, header)
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=float,
                         deletechars="", ndmin=1)
    if data.size == 0:
        raise EmptyTable(path)
    return Table(str(path), {n: np.asarray(data[n]) for n in data.dtype.names})


def load_manifest(csv_path, manifest_path=None):
    """Manifest dict for a table, or None when absent.

    Looks for ``manifest.json`` next to the CSV unless an explicit path is
    given; an explicit path that does not exist is an error, a missing
    sibling is not.
    """
    if manifest_path is not None:
        p = Path(manifest_path)
        if not p.is_file():
            raise PlotDataError(f"{p}: no such manifest")
        return json.loads(p.read_text(encoding="utf-8"))
    p = Path(csv_path).parent / "manifest.json"
    if not p.is_file():
        return None
    return json.loads(p.read_text(encoding="utf-8"))


@dataclass(frozen=True)
class Grid:
    """One scalar on a (k cell) x (frequency) grid.

    x: arclength per k cell, ascending.  y: frequency grid, ascending.
    z: values, shape (len(x), len(y)), NaN where the run poisoned a cell.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    kx: np.ndarray
    ky: np.ndarray


def pivot(table, value, ykey="omega_ev"):
    """Reshape a long-format table onto its (k, frequency) grid.

    value: a column name or a precomputed per-row array.  Cells the run
    never wrote stay NaN; duplicated (k, y) pairs are a file error.
    """
    vals = table[value] if isinstance(value, str) else np.asarray(value)
    kid = table["k_index"].astype(int)
    ks, kinv = np.unique(kid, return_inverse=True)
    ys, yinv = np.unique(table[ykey], return_inverse=True)
    z = np.full((len(ks), len(ys)), np.nan)
    flat = kinv * len(ys) + yinv
    if len(np.unique(flat)) != len(flat):
        raise PlotDataError(f"{table.path}: duplicate (k_index, {ykey}) rows")
    z[kinv, yinv] = vals
    first = np.full(len(ks), -1, dtype=int)
    seen = np.zeros(len(ks), dtype=bool)
    for i, j in enumerate(kinv):
        if not seen[j]:
            seen[j], first[j] = True, i
    return Grid(x=table["arclength_invnm"][first], y=ys, z=z,
                kx=table["kx_invnm"][first], ky=table["ky_invnm"][first])


def diagonal_trace(table):
    """Sum of the diagonal spectral-density columns, one value per row."""
    diag = [n for n in table.family(r"j(\d+)_(\d+)_re_ev")
            if re.fullmatch(r"j(\d+)_\1_re_ev", n)]
    if not diag:
        raise SchemaMismatch(table.path, [r"~j(\d+)_\1_re_ev"], table.names)
    return np.sum([table[n] for n in diag], axis=0), diag


def path_vertices(grid):
    """Indices into grid.x where the k path changes direction.

    Includes both ends; interior vertices come from a turn in the (kx, ky)
    polyline, so symmetry-point ticks need no manifest geometry.
    """
    k = np.column_stack([grid.kx, grid.ky])
    if len(k) < 3:
        return list(range(len(k)))
    d = np.diff(k, axis=0)
    norm = np.linalg.norm(d, axis=1)
    norm[norm == 0.0] = 1.0
    u = d / norm[:, None]
    turn = np.einsum("ij,ij->i", u[:-1], u[1:])
    idx = [0] + [i + 1 for i in np.nonzero(turn < 1.0 - 1e-9)[0]]
    idx.append(len(k) - 1)
    return idx


_TICK_TEXT = {"G": "$\\Gamma$"}


def path_tick_labels(manifest):
    """Symmetry-point names from the manifest scan path, if it has any."""
    if not manifest:
        return None
    path = (manifest.get("config", {}).get("scan", {}) or {}).get("path")
    if (isinstance(path, list) and path
            and all(isinstance(p, str) for p in path)):
        return [_TICK_TEXT.get(p, p) for p in path]
    return None
