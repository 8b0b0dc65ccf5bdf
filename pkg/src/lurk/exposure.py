"""Gridded prediction and population exposure statistics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .geodata import RasterGrid
from .errors import InvalidArgumentError
from .kriging import KrigingModel
from .lur import LinearModel
from .recipes import FittedModel
from ._util import fmt_float

# WHO annual guideline/interim-target levels plus the 35 ug/m3 national
# standard and the 40 ug/m3 NO2 guideline.
DEFAULT_THRESHOLDS = (10.0, 15.0, 25.0, 35.0, 40.0)


@dataclass(frozen=True)
class PredictionSurface:
    concentration: RasterGrid
    variance: RasterGrid | None
    model_id: str
    n_floored: int  # negative predictions floored at zero


@dataclass(frozen=True)
class ExposureCurve:
    thresholds: tuple[float, ...]
    fraction_above: tuple[float, ...]
    pop_weighted_mean: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["threshold", "fraction_above"])
            for t, frac in zip(self.thresholds, self.fraction_above):
                w.writerow([fmt_float(t), fmt_float(frac)])

    def summary(self) -> dict:
        return {
            "pop_weighted_mean": self.pop_weighted_mean,
            "thresholds": list(self.thresholds),
            "fraction_above": list(self.fraction_above),
        }


def _model_parts(model):
    """Normalize LinearModel / KrigingModel / FittedModel to
    (required columns, trend-or-None, kriging-or-None, transform)."""
    if isinstance(model, KrigingModel):
        return model.drift.selected, model.drift, model, None
    if isinstance(model, LinearModel):
        return model.selected, model, None, None
    if isinstance(model, FittedModel):
        transform = model.pls.transform if model.pls is not None else None
        return model.required_columns, model.trend, model.kriging, transform
    raise InvalidArgumentError(f"cannot predict a grid from {type(model).__name__}")


def predict_grid(model, covariate_grids: dict[str, RasterGrid],
                 lattice: RasterGrid | None = None, with_variance: bool = False,
                 model_id: str = "", chunk: int = 4096) -> PredictionSurface:
    """Evaluate a fitted model at every cell of a shared lattice.

    One grid per required covariate, all on an identical lattice; cells
    where any covariate is nodata become nodata. Negative predictions are
    floored at zero and counted.
    """
    columns, trend, kriging_model, transform = _model_parts(model)
    if lattice is None:
        if not covariate_grids:
            raise InvalidArgumentError(
                "predict_grid needs covariate grids or an explicit lattice"
            )
        lattice = next(iter(covariate_grids.values()))
    missing = [c for c in columns if c not in covariate_grids]
    if missing:
        raise InvalidArgumentError(f"missing covariate grids: {missing}")
    bad = [name for name in columns if not lattice.same_lattice(covariate_grids[name])]
    if bad:
        raise InvalidArgumentError(f"grids not on the shared lattice: {bad}")

    n_cells = lattice.n_cols * lattice.n_rows
    valid = np.ones(n_cells, dtype=bool)
    cols = []
    for name in columns:
        g = covariate_grids[name]
        flat = g.values.ravel()
        valid &= flat != g.nodata
        cols.append(flat)
    X = np.column_stack(cols) if cols else np.empty((n_cells, 0))

    mean = np.full(n_cells, np.nan)
    var = np.full(n_cells, np.nan) if (with_variance and kriging_model is not None) else None
    idx = np.flatnonzero(valid)
    if idx.size:
        rows = X[idx]
        if transform is not None:
            rows = transform(rows)
        if kriging_model is not None:
            xs, ys = lattice.center_meshgrid()
            m, v = kriging_model.predict_many(
                xs[idx], ys[idx], rows,
                with_variance=var is not None, chunk=chunk,
            )
            mean[idx] = m
            if var is not None:
                var[idx] = v
        else:
            if rows.shape[1] == 0:
                mean[idx] = trend.intercept
            else:
                mean[idx] = trend.intercept + rows @ trend.coefficients
    neg = valid & (mean < 0.0)
    n_floored = int(neg.sum())
    mean[neg] = 0.0

    conc_vals = np.where(valid, mean, lattice.nodata)
    conc = lattice.with_values(conc_vals.reshape(lattice.n_rows, lattice.n_cols))
    var_grid = None
    if var is not None:
        var_vals = np.where(valid, var, lattice.nodata)
        var_grid = lattice.with_values(var_vals.reshape(lattice.n_rows, lattice.n_cols))
    return PredictionSurface(concentration=conc, variance=var_grid,
                             model_id=model_id, n_floored=n_floored)


def _shared_valid(surface: PredictionSurface, population: RasterGrid,
                  density_range=None):
    conc = surface.concentration
    if not conc.same_lattice(population):
        raise InvalidArgumentError("surface and population are not on the same lattice")
    c = conc.values.ravel()
    p = population.values.ravel()
    valid = (c != conc.nodata) & (p != population.nodata)
    if np.any(p[valid] < 0):
        raise InvalidArgumentError("population must be non-negative")
    if density_range is not None:
        # restrict to cells in a population-density band (per-cell counts on
        # an equal-area lattice are proportional to density)
        lo, hi = density_range
        if lo is not None:
            valid &= p >= lo
        if hi is not None:
            valid &= p < hi
    return c, p, valid


def population_weighted_mean(surface: PredictionSurface, population: RasterGrid,
                             density_range=None) -> float:
    """Population-weighted mean concentration over jointly valid cells.

    `density_range=(lo, hi)` restricts the statistic to cells whose
    population falls in [lo, hi); either bound may be None.
    """
    c, p, valid = _shared_valid(surface, population, density_range)
    total = float(p[valid].sum())
    if total <= 0:
        raise InvalidArgumentError("total population over valid cells is zero")
    return float((p[valid] * c[valid]).sum() / total)


def cumulative_exposure(surface: PredictionSurface, population: RasterGrid,
                        thresholds=DEFAULT_THRESHOLDS,
                        density_range=None) -> ExposureCurve:
    """Population fraction living above each threshold (strictly above)."""
    c, p, valid = _shared_valid(surface, population, density_range)
    total = float(p[valid].sum())
    if total <= 0:
        raise InvalidArgumentError("total population over valid cells is zero")
    ts = sorted(float(t) for t in thresholds)
    fractions = [float(p[valid & (c > t)].sum() / total) for t in ts]
    return ExposureCurve(
        thresholds=tuple(ts),
        fraction_above=tuple(fractions),
        pop_weighted_mean=float((p[valid] * c[valid]).sum() / total),
    )


def window_variance(surface: PredictionSurface, window_cells: int) -> RasterGrid:
    """Population variance of valid cells in a centered square window.

    Edge windows use the available (partial) neighborhood; cells that are
    nodata in the surface stay nodata in the output.
    """
    if window_cells < 1 or window_cells % 2 == 0:
        raise InvalidArgumentError("window_cells must be a positive odd number")
    conc = surface.concentration
    vals = conc.values
    valid = vals != conc.nodata
    # Center on the global mean before squaring to keep E[x^2]-E[x]^2 stable.
    offset = float(vals[valid].mean()) if np.any(valid) else 0.0
    v = np.where(valid, vals - offset, 0.0)
    nr, nc = conc.n_rows, conc.n_cols
    half = window_cells // 2

    def sat(arr):
        s = np.zeros((nr + 1, nc + 1))
        s[1:, 1:] = arr.cumsum(axis=0).cumsum(axis=1)
        return s

    s_cnt = sat(valid.astype(np.float64))
    s_v = sat(v)
    s_v2 = sat(v * v)
    rows = np.arange(nr)
    cols = np.arange(nc)
    r0 = np.maximum(rows - half, 0)
    r1 = np.minimum(rows + half, nr - 1)
    c0 = np.maximum(cols - half, 0)
    c1 = np.minimum(cols + half, nc - 1)

    def rect(s):
        return (s[r1 + 1][:, c1 + 1] - s[r0][:, c1 + 1]
                - s[r1 + 1][:, c0] + s[r0][:, c0])

    cnt = rect(s_cnt)
    sum1 = rect(s_v)
    sum2 = rect(s_v2)
    with np.errstate(divide="ignore", invalid="ignore"):
        var = np.where(cnt > 0, np.maximum(sum2 / cnt - (sum1 / cnt) ** 2, 0.0), 0.0)
    out = np.where(valid, var, conc.nodata)
    return conc.with_values(out)
