"""Per-site covariate extraction from feature layers and grids.

Buffer covariates use circular buffers with an inclusive boundary
(distance <= r counts); land-cover fractions use axis-aligned square
moving windows with membership decided by cell center. Covariate values
are deterministic functions of geography, so the matrix never depends on
monitor responses.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geodata
from .errors import (
    CovariateExtractionError,
    InvalidArgumentError,
    NodataError,
)
from ._util import fmt_float

KINDS = (
    "point_count",
    "line_length",
    "landcover_fraction",
    "distance_to_nearest",
    "grid_sample",
    "coordinate_x",
    "coordinate_y",
)

_BUFFER_KINDS = ("point_count", "line_length", "landcover_fraction")


@dataclass(frozen=True)
class CovariateSpec:
    """One named covariate: a kind, a source layer/grid, and a buffer size."""

    name: str
    kind: str
    source: str = ""
    category: int | None = None
    buffer_m: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"{self.name}: unknown covariate kind {self.kind!r}")
        if self.kind in _BUFFER_KINDS and self.buffer_m <= 0:
            raise InvalidArgumentError(f"{self.name}: {self.kind} requires buffer_m > 0")
        if self.kind == "landcover_fraction" and self.category is None:
            raise InvalidArgumentError(f"{self.name}: landcover_fraction requires a category")

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.source:
            d["source"] = self.source
        if self.category is not None:
            d["category"] = int(self.category)
        if self.buffer_m:
            d["buffer_m"] = float(self.buffer_m)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CovariateSpec":
        return cls(
            name=d["name"],
            kind=d["kind"],
            source=d.get("source", ""),
            category=d.get("category"),
            buffer_m=float(d.get("buffer_m", 0.0)),
        )


@dataclass(frozen=True)
class CovariateMatrix:
    """Dense site-by-covariate matrix with per-column summary metadata."""

    site_ids: tuple[str, ...]
    columns: tuple[str, ...]
    values: np.ndarray  # (n_sites, n_covariates)
    means: np.ndarray
    sds: np.ndarray
    zero_variance: np.ndarray  # bool per column

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (len(self.site_ids), len(self.columns)):
            raise InvalidArgumentError("matrix shape does not match site/column counts")
        if np.any(~np.isfinite(vals)):
            raise InvalidArgumentError("covariate matrix must not contain NaN/inf")
        vals = np.ascontiguousarray(vals)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_values(cls, site_ids, columns, values) -> "CovariateMatrix":
        values = np.asarray(values, dtype=np.float64)
        means = values.mean(axis=0) if len(values) else np.zeros(len(columns))
        sds = values.std(axis=0) if len(values) else np.zeros(len(columns))
        return cls(
            site_ids=tuple(site_ids),
            columns=tuple(columns),
            values=values,
            means=means,
            sds=sds,
            zero_variance=sds == 0.0,
        )

    @property
    def n_sites(self) -> int:
        return len(self.site_ids)

    def column_index(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise InvalidArgumentError(f"no covariate column named {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.column_index(name)]

    def select(self, names) -> np.ndarray:
        idx = [self.column_index(n) for n in names]
        return self.values[:, idx]

    def subset_rows(self, indices) -> "CovariateMatrix":
        indices = np.asarray(indices)
        return CovariateMatrix.from_values(
            [self.site_ids[i] for i in indices], self.columns, self.values[indices]
        )

    def drop_columns(self, names) -> "CovariateMatrix":
        drop = set(names)
        keep = [i for i, c in enumerate(self.columns) if c not in drop]
        return CovariateMatrix.from_values(
            self.site_ids, [self.columns[i] for i in keep], self.values[:, keep]
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["site_id", *self.columns])
            for sid, row in zip(self.site_ids, self.values):
                writer.writerow([sid, *[fmt_float(v) for v in row]])

    @classmethod
    def from_csv(cls, path) -> "CovariateMatrix":
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            columns = header[1:]
            site_ids, rows = [], []
            for rec in reader:
                site_ids.append(rec[0])
                rows.append([float(v) for v in rec[1:]])
        return cls.from_values(site_ids, columns, np.array(rows))


# ---------------------------------------------------------------------------
# Individual covariate operations
# ---------------------------------------------------------------------------

def count_points_in_buffer(layer: geodata.FeatureLayer, x: float, y: float, r: float) -> int:
    """Points within distance r of (x, y), boundary inclusive."""
    if layer.kind != geodata.POINTS:
        raise InvalidArgumentError("count_points_in_buffer requires a point layer")
    if r <= 0:
        raise InvalidArgumentError("buffer radius must be > 0")
    return int(count_points_ladder(layer, x, y, np.array([r]))[0])


def count_points_ladder(layer: geodata.FeatureLayer, x: float, y: float,
                        radii: np.ndarray) -> np.ndarray:
    """Counts for a whole ascending buffer ladder in one index query."""
    if layer.kind != geodata.POINTS:
        raise InvalidArgumentError("count_points_ladder requires a point layer")
    r_max = float(np.max(radii))
    cand = layer.candidate_indices(x - r_max, y - r_max, x + r_max, y + r_max)
    if cand.size == 0:
        return np.zeros(len(radii), dtype=np.int64)
    pts = layer.points_xy[cand]
    d = np.sort(np.hypot(pts[:, 0] - x, pts[:, 1] - y))
    return np.searchsorted(d, np.asarray(radii, dtype=np.float64), side="right")


def line_length_in_buffer(layer: geodata.FeatureLayer, x: float, y: float, r: float) -> float:
    """Total polyline length inside the closed disk of radius r."""
    if layer.kind != geodata.POLYLINES:
        raise InvalidArgumentError("line_length_in_buffer requires a polyline layer")
    if r <= 0:
        raise InvalidArgumentError("buffer radius must be > 0")
    return float(line_length_ladder(layer, x, y, np.array([r]))[0])


def line_length_ladder(layer: geodata.FeatureLayer, x: float, y: float,
                       radii: np.ndarray) -> np.ndarray:
    if layer.kind != geodata.POLYLINES:
        raise InvalidArgumentError("line_length_ladder requires a polyline layer")
    radii = np.asarray(radii, dtype=np.float64)
    r_max = float(np.max(radii))
    cand = layer.candidate_indices(x - r_max, y - r_max, x + r_max, y + r_max)
    out = np.zeros(len(radii))
    if cand.size == 0:
        return out
    mask = np.isin(layer.seg_feature, cand)
    a = layer.seg_a[mask]
    b = layer.seg_b[mask]
    for i, r in enumerate(radii):
        out[i] = geodata.segment_disk_length(a, b, x, y, float(r)).sum()
    return out


def _window_cell_range(origin: float, cell: float, n: int, lo: float, hi: float):
    """Index range [i0, i1] of cells whose center lies in [lo, hi] (inclusive)."""
    i0 = int(np.ceil((lo - origin) / cell - 0.5))
    i1 = int(np.floor((hi - origin) / cell - 0.5))
    return max(i0, 0), min(i1, n - 1)


def landcover_fraction(grid: geodata.CategoricalGrid, category: int, x: float, y: float,
                       window_m: float) -> float:
    """Fraction of non-nodata cells of `category` in the square window."""
    if window_m <= 0:
        raise InvalidArgumentError("window_m must be > 0")
    counts, valid = landcover_counts(grid, x, y, window_m)
    if valid == 0:
        raise NodataError(
            f"no valid land-cover cell in {window_m} m window at ({x}, {y})"
        )
    return counts.get(int(category), 0) / valid


def landcover_counts(grid: geodata.CategoricalGrid, x: float, y: float,
                     window_m: float) -> tuple[dict[int, int], int]:
    """Per-category cell counts and valid-cell total in the square window."""
    half = window_m / 2.0
    c0, c1 = _window_cell_range(grid.origin_x, grid.cell_size, grid.n_cols, x - half, x + half)
    r0, r1 = _window_cell_range(grid.origin_y, grid.cell_size, grid.n_rows, y - half, y + half)
    if c0 > c1 or r0 > r1:
        return {}, 0
    block = grid.values[r0 : r1 + 1, c0 : c1 + 1]
    codes, counts = np.unique(block, return_counts=True)
    table = {int(c): int(n) for c, n in zip(codes, counts)}
    valid = int(sum(n for c, n in table.items() if c != grid.nodata))
    table.pop(int(grid.nodata), None)
    return table, valid


def distance_to_nearest(layer: geodata.FeatureLayer, x: float, y: float) -> float:
    """Exact minimum distance from (x, y) to any feature in the layer."""
    return layer.nearest_distance(x, y)


# ---------------------------------------------------------------------------
# Matrix assembly
# ---------------------------------------------------------------------------

def build_matrix(sites, specs, layers: dict | None = None, grids: dict | None = None,
                 categorical: dict | None = None, threads: int = 1) -> CovariateMatrix:
    """Evaluate every spec at every site and assemble the covariate matrix.

    `sites` is a MonitorTable (or anything exposing site_ids, x, y).
    Extraction failures (nodata, out of domain) are collected and raised
    together listing every (site, spec) pair.
    """
    layers = layers or {}
    grids = grids or {}
    categorical = categorical or {}
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise InvalidArgumentError(f"duplicate covariate names: {dupes}")
    site_ids = list(sites.site_ids)
    xs = np.asarray(sites.x, dtype=np.float64)
    ys = np.asarray(sites.y, dtype=np.float64)
    n = len(site_ids)
    values = np.empty((n, len(specs)))
    failures: list[tuple[str, str]] = []

    # Group buffer ladders by (kind, source) so each site queries each
    # layer once per group rather than once per buffer length.
    groups: dict[tuple[str, str], list[int]] = {}
    for j, spec in enumerate(specs):
        groups.setdefault((spec.kind, spec.source), []).append(j)

    def fill_group(item):
        (kind, source), cols = item
        block = np.empty((n, len(cols)))
        fails: list[tuple[str, str]] = []
        if kind == "coordinate_x":
            block[:, :] = xs[:, None]
        elif kind == "coordinate_y":
            block[:, :] = ys[:, None]
        elif kind == "grid_sample":
            grid = _lookup(grids, source, "grid")
            out, inside, touched = geodata.bilinear_sample_many(grid, xs, ys)
            bad = ~inside | touched
            for k, j in enumerate(cols):
                if np.any(bad):
                    fails.extend((site_ids[i], specs[j].name) for i in np.flatnonzero(bad))
                block[:, k] = np.where(bad, 0.0, out)
        elif kind == "point_count":
            layer = _lookup(layers, source, "layer")
            radii = np.array([specs[j].buffer_m for j in cols])
            for i in range(n):
                block[i] = count_points_ladder(layer, xs[i], ys[i], radii)
        elif kind == "line_length":
            layer = _lookup(layers, source, "layer")
            radii = np.array([specs[j].buffer_m for j in cols])
            for i in range(n):
                block[i] = line_length_ladder(layer, xs[i], ys[i], radii)
        elif kind == "distance_to_nearest":
            layer = _lookup(layers, source, "layer")
            for i in range(n):
                d = layer.nearest_distance(xs[i], ys[i])
                block[i, :] = d
        elif kind == "landcover_fraction":
            grid = _lookup(categorical, source, "categorical grid")
            by_window: dict[float, list[int]] = {}
            for k, j in enumerate(cols):
                by_window.setdefault(specs[j].buffer_m, []).append(k)
            for i in range(n):
                for window, ks in by_window.items():
                    counts, valid = landcover_counts(grid, xs[i], ys[i], window)
                    for k in ks:
                        spec = specs[cols[k]]
                        if valid == 0:
                            fails.append((site_ids[i], spec.name))
                            block[i, k] = 0.0
                        else:
                            block[i, k] = counts.get(int(spec.category), 0) / valid
        else:  # pragma: no cover - guarded by CovariateSpec validation
            raise InvalidArgumentError(f"unknown kind {kind!r}")
        return cols, block, fails

    from ._util import thread_map

    for cols, block, fails in thread_map(fill_group, groups.items(), threads):
        failures.extend(fails)
        for k, j in enumerate(cols):
            values[:, j] = block[:, k]

    if failures:
        failures.sort()
        shown = ", ".join(f"({s}, {c})" for s, c in failures[:8])
        more = "" if len(failures) <= 8 else f" and {len(failures) - 8} more"
        raise CovariateExtractionError(
            f"{len(failures)} (site, covariate) cells could not be evaluated: {shown}{more}",
            failures=failures,
        )
    return CovariateMatrix.from_values(site_ids, names, values)


def _lookup(table: dict, key: str, what: str):
    if key not in table:
        raise InvalidArgumentError(f"no {what} named {key!r} is loaded")
    return table[key]


# ---------------------------------------------------------------------------
# Covariate set definition file (JSON)
# ---------------------------------------------------------------------------

def specs_to_json(specs) -> list[dict]:
    return [s.to_dict() for s in specs]


def specs_from_json(items) -> list[CovariateSpec]:
    specs = [CovariateSpec.from_dict(d) for d in items]
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise InvalidArgumentError("duplicate covariate names in covariate set file")
    return specs


def write_specs(specs, path) -> None:
    import json

    Path(path).write_text(json.dumps(specs_to_json(specs), indent=2) + "\n")


def read_specs(path) -> list[CovariateSpec]:
    import json

    return specs_from_json(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Covariate rasterization (for gridded prediction)
# ---------------------------------------------------------------------------

def rasterize_covariates(specs, lattice: geodata.RasterGrid, layers: dict | None = None,
                         grids: dict | None = None, categorical: dict | None = None,
                         threads: int = 1) -> dict[str, geodata.RasterGrid]:
    """Evaluate each spec at every cell center of `lattice`.

    Same semantics as build_matrix cell-by-cell, but cells that cannot be
    evaluated become nodata instead of raising, since national lattices
    routinely extend past individual source grids.
    """
    layers = layers or {}
    grids = grids or {}
    categorical = categorical or {}
    xs, ys = lattice.center_meshgrid()
    n = xs.size
    out: dict[str, geodata.RasterGrid] = {}

    groups: dict[tuple[str, str], list[CovariateSpec]] = {}
    for spec in specs:
        groups.setdefault((spec.kind, spec.source), []).append(spec)

    def make(vals: np.ndarray) -> geodata.RasterGrid:
        return lattice.with_values(vals.reshape(lattice.n_rows, lattice.n_cols))

    for (kind, source), group in groups.items():
        if kind == "coordinate_x":
            for spec in group:
                out[spec.name] = make(xs.copy())
        elif kind == "coordinate_y":
            for spec in group:
                out[spec.name] = make(ys.copy())
        elif kind == "grid_sample":
            grid = _lookup(grids, source, "grid")
            sampled, inside, touched = geodata.bilinear_sample_many(grid, xs, ys)
            vals = np.where(inside & ~touched, sampled, lattice.nodata)
            for spec in group:
                out[spec.name] = make(vals.copy())
        elif kind == "point_count":
            layer = _lookup(layers, source, "layer")
            from scipy.spatial import cKDTree

            tree = cKDTree(layer.points_xy) if len(layer.points_xy) else None
            centers = np.column_stack([xs, ys])
            for spec in group:
                if tree is None:
                    counts = np.zeros(n)
                else:
                    counts = tree.query_ball_point(
                        centers, spec.buffer_m, return_length=True
                    ).astype(np.float64)
                out[spec.name] = make(counts)
        elif kind == "line_length":
            layer = _lookup(layers, source, "layer")
            radii = np.array([spec.buffer_m for spec in group])
            vals = np.empty((n, len(group)))

            def row(i):
                return line_length_ladder(layer, xs[i], ys[i], radii)

            rows = thread_map_rows(row, n, threads)
            vals[:, :] = rows
            for k, spec in enumerate(group):
                out[spec.name] = make(vals[:, k].copy())
        elif kind == "distance_to_nearest":
            layer = _lookup(layers, source, "layer")
            if layer.kind == geodata.POINTS and len(layer.points_xy):
                from scipy.spatial import cKDTree

                tree = cKDTree(layer.points_xy)
                d, _ = tree.query(np.column_stack([xs, ys]))
                vals = d.astype(np.float64)
            else:
                def dist(i):
                    return layer.nearest_distance(xs[i], ys[i])

                vals = np.array(thread_map_rows(dist, n, threads))
            for spec in group:
                out[spec.name] = make(vals.copy())
        elif kind == "landcover_fraction":
            grid = _lookup(categorical, source, "categorical grid")
            by_window: dict[float, list[CovariateSpec]] = {}
            for spec in group:
                by_window.setdefault(spec.buffer_m, []).append(spec)
            for window, specs_w in by_window.items():
                cats = sorted({int(s.category) for s in specs_w})
                fracs, valid = _window_fractions_many(grid, xs, ys, window, cats)
                for spec in specs_w:
                    col = cats.index(int(spec.category))
                    vals = np.where(valid > 0, fracs[:, col], lattice.nodata)
                    out[spec.name] = make(vals)
    return out


def thread_map_rows(fn, n: int, threads: int) -> list:
    from ._util import thread_map

    return thread_map(fn, range(n), threads)


def _window_fractions_many(grid: geodata.CategoricalGrid, xs, ys, window_m: float,
                           categories: list[int]):
    """Window fractions for many centers via summed-area tables.

    Exactly reproduces the per-site center-in-window counting rule.
    """
    half = window_m / 2.0
    nr, nc = grid.n_rows, grid.n_cols
    valid_cells = (grid.values != grid.nodata).astype(np.int64)
    sat_valid = np.zeros((nr + 1, nc + 1), dtype=np.int64)
    sat_valid[1:, 1:] = valid_cells.cumsum(axis=0).cumsum(axis=1)
    sats = []
    for cat in categories:
        ind = (grid.values == cat).astype(np.int64)
        s = np.zeros((nr + 1, nc + 1), dtype=np.int64)
        s[1:, 1:] = ind.cumsum(axis=0).cumsum(axis=1)
        sats.append(s)

    c0 = np.ceil((xs - half - grid.origin_x) / grid.cell_size - 0.5).astype(np.int64)
    c1 = np.floor((xs + half - grid.origin_x) / grid.cell_size - 0.5).astype(np.int64)
    r0 = np.ceil((ys - half - grid.origin_y) / grid.cell_size - 0.5).astype(np.int64)
    r1 = np.floor((ys + half - grid.origin_y) / grid.cell_size - 0.5).astype(np.int64)
    c0 = np.clip(c0, 0, nc)
    c1 = np.clip(c1, -1, nc - 1)
    r0 = np.clip(r0, 0, nr)
    r1 = np.clip(r1, -1, nr - 1)
    empty = (c0 > c1) | (r0 > r1)
    c0s, c1s = np.where(empty, 0, c0), np.where(empty, -1, c1)
    r0s, r1s = np.where(empty, 0, r0), np.where(empty, -1, r1)

    def rect_sum(sat):
        return (
            sat[r1s + 1, c1s + 1] - sat[r0s, c1s + 1] - sat[r1s + 1, c0s] + sat[r0s, c0s]
        )

    valid = np.where(empty, 0, rect_sum(sat_valid))
    fracs = np.zeros((xs.size, len(categories)))
    nz = valid > 0
    for k, sat in enumerate(sats):
        cnt = np.where(empty, 0, rect_sum(sat))
        fracs[nz, k] = cnt[nz] / valid[nz]
    return fracs, valid
