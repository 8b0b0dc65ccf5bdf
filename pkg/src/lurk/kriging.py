"""Second-stage spatial smoothing: residual variograms and universal
kriging with the fitted linear trend as external drift.

The kriging system is global (all training sites in one bordered solve),
built from the residual covariance c1 * exp(-h / a) with the nugget added
on the diagonal, and unbiasedness constraints on [1, X(s)]. The variogram
is fitted once on the trend residuals; no GLS iteration.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve
from scipy.optimize import least_squares
from scipy.spatial.distance import cdist, pdist

from .covariates import CovariateMatrix
from .errors import (
    EmptyVariogramError,
    InvalidArgumentError,
    SingularKrigingError,
    VariogramFitError,
)
from .lur import LinearModel
from .monitors import MonitorTable

log = logging.getLogger(__name__)

DEFAULT_N_BINS = 15


@dataclass(frozen=True)
class VariogramModel:
    """Exponential variogram: gamma(h) = nugget + psill * (1 - exp(-h/a))
    for h > 0, gamma(0) = 0."""

    nugget: float
    partial_sill: float
    range_m: float

    def __post_init__(self):
        if self.nugget < 0 or self.partial_sill < 0 or self.range_m <= 0:
            raise InvalidArgumentError(
                "variogram requires nugget >= 0, partial_sill >= 0, range > 0"
            )

    @property
    def sill(self) -> float:
        return self.nugget + self.partial_sill

    def gamma(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=np.float64)
        g = self.nugget + self.partial_sill * (1.0 - np.exp(-h / self.range_m))
        return np.where(h > 0, g, 0.0)

    def covariance(self, h) -> np.ndarray:
        """Residual covariance between distinct locations; the nugget is
        applied only on the kriging system diagonal."""
        h = np.asarray(h, dtype=np.float64)
        return self.partial_sill * np.exp(-h / self.range_m)

    def to_dict(self) -> dict:
        return {"nugget": self.nugget, "partial_sill": self.partial_sill,
                "range_m": self.range_m}

    @classmethod
    def from_dict(cls, d: dict) -> "VariogramModel":
        return cls(float(d["nugget"]), float(d["partial_sill"]), float(d["range_m"]))


@dataclass(frozen=True)
class EmpiricalVariogram:
    lag_centers: np.ndarray
    semivariances: np.ndarray
    n_pairs: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.lag_centers) <= 0):
            raise InvalidArgumentError("lag centers must be strictly increasing")
        if np.any(self.n_pairs <= 0):
            raise InvalidArgumentError("retained bins must have n_pairs > 0")


def empirical_variogram(residuals, coords, n_bins: int = DEFAULT_N_BINS,
                        max_lag: float | None = None) -> EmpiricalVariogram:
    """Equal-width-bin empirical semivariogram of per-site residuals.

    Semivariance per bin is half the mean squared residual difference over
    site pairs whose separation falls in the bin; empty bins are dropped.
    `max_lag` defaults to half the maximum pairwise distance.
    """
    residuals = np.asarray(residuals, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64)
    n = len(residuals)
    if n < 2:
        raise InvalidArgumentError("need at least 2 sites")
    if n_bins < 1:
        raise InvalidArgumentError("n_bins must be >= 1")
    d = pdist(coords)
    if max_lag is None:
        max_lag = float(d.max()) / 2.0
    if max_lag <= 0:
        raise InvalidArgumentError("max_lag must be > 0")
    mask = d <= max_lag
    if not np.any(mask):
        raise EmptyVariogramError(f"no site pair within max_lag={max_lag}")
    sq = pdist(residuals[:, None], metric="sqeuclidean")
    width = max_lag / n_bins
    idx = np.minimum((d[mask] / width).astype(np.int64), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    sums = np.bincount(idx, weights=sq[mask], minlength=n_bins)
    keep = counts > 0
    centers = (np.arange(n_bins) + 0.5) * width
    return EmpiricalVariogram(
        lag_centers=centers[keep],
        semivariances=0.5 * sums[keep] / counts[keep],
        n_pairs=counts[keep],
    )


def fit_exponential(ev: EmpiricalVariogram) -> VariogramModel:
    """Fit (nugget, partial sill, range) by weighted nonlinear least
    squares with multiple bounded starts.

    Bin weights are n_pairs / lag^2 (the gstat default): pair counts
    stabilize sparse bins while the 1/lag^2 factor keeps the short-lag
    structure, which carries all nugget information, from being drowned
    out by the huge pair counts at long range.
    """
    if len(ev.lag_centers) < 3:
        raise InvalidArgumentError("need at least 3 non-empty variogram bins")
    lags = ev.lag_centers
    emp = ev.semivariances
    wts = np.sqrt(ev.n_pairs.astype(np.float64)) / lags
    wts = wts / wts.max()
    min_lag = float(lags[0])
    max_lag = float(lags[-1])
    lo = np.array([0.0, 0.0, min_lag / 10.0])
    hi = np.array([np.inf, np.inf, 10.0 * max_lag])
    level = float(np.max(emp))
    if level <= 0:
        # Degenerate all-zero variogram (e.g. perfectly flat residuals).
        return VariogramModel(nugget=0.0, partial_sill=0.0, range_m=max_lag)

    def resid(params):
        c0, c1, a = params
        model = c0 + c1 * (1.0 - np.exp(-lags / a))
        return wts * (model - emp)

    starts = []
    for a0 in (max_lag / 20.0, max_lag / 4.0, max_lag):
        a0 = min(max(a0, lo[2]), hi[2])
        starts.append([0.0, level, a0])
        starts.append([0.1 * level, 0.9 * level, a0])
    best = None
    failures = []
    for x0 in starts:
        try:
            res = least_squares(
                resid, x0, bounds=(lo, hi), method="trf",
                x_scale=[max(level, 1e-12), max(level, 1e-12), max_lag],
                xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=2000,
            )
        except Exception as exc:  # pragma: no cover - optimizer crash
            failures.append(f"start {x0}: {exc}")
            continue
        if not res.success and not np.isfinite(res.cost):
            failures.append(f"start {x0}: {res.message}")
            continue
        if best is None or res.cost < best.cost:
            best = res
    if best is None:
        raise VariogramFitError(
            "variogram fit failed for every start: " + "; ".join(failures)
        )
    c0, c1, a = best.x
    return VariogramModel(nugget=float(c0), partial_sill=float(c1), range_m=float(a))


@dataclass(frozen=True)
class KrigingPrediction:
    mean: float
    variance: float


class KrigingModel:
    """Fitted drift + residual variogram + training state.

    The bordered system [[C, F], [F', 0]] is factorized once at
    construction; the factorization and dual weights are immutable
    afterwards, so prediction is a pure read-only operation safe for
    parallel fan-out over grid cells.
    """

    def __init__(self, drift: LinearModel, variogram: VariogramModel,
                 coords: np.ndarray, x_rows: np.ndarray, y: np.ndarray):
        self.drift = drift
        self.variogram = variogram
        self.coords = np.ascontiguousarray(np.asarray(coords, dtype=np.float64))
        self.x_rows = np.ascontiguousarray(np.asarray(x_rows, dtype=np.float64))
        self.y = np.ascontiguousarray(np.asarray(y, dtype=np.float64))
        n = len(self.y)
        if self.coords.shape != (n, 2) or self.x_rows.shape[0] != n:
            raise InvalidArgumentError("training arrays have inconsistent shapes")
        self._assemble()

    def _assemble(self):
        n = len(self.y)
        p = self.x_rows.shape[1]
        d = cdist(self.coords, self.coords)
        # Keep the system nonsingular when the fitted variogram collapses
        # to zero (flat residuals): with a pure-nugget covariance the
        # predictor is the GLS (= OLS) drift regardless of the nugget size.
        nugget = self.variogram.nugget
        if nugget + self.variogram.partial_sill <= 0:
            nugget = 1e-4 * max(1.0, float(np.var(self.y)))
        cov = self.variogram.covariance(d)
        cov[np.diag_indices(n)] += nugget
        # Standardized drift columns keep the bordered system balanced;
        # [1, X] and [1, (X - m)/s] span the same constraint space, so
        # predictions are unchanged.
        self._x_shift = self.x_rows.mean(axis=0) if n else np.zeros(p)
        sd = self.x_rows.std(axis=0) if n else np.ones(p)
        self._x_scale = np.where(sd > 0, sd, 1.0)
        f = np.column_stack([np.ones(n),
                             (self.x_rows - self._x_shift) / self._x_scale])
        m = n + p + 1
        a = np.zeros((m, m))
        a[:n, :n] = cov
        a[:n, n:] = f
        a[n:, :n] = f.T
        self._system_nugget = nugget
        self._a_norm = float(np.abs(a).max())
        rhs = np.concatenate([self.y, np.zeros(p + 1)])
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", LinAlgWarning)
            self._lu = lu_factor(a, check_finite=False)
            dual = lu_solve(self._lu, rhs, check_finite=False)
            residual = a @ dual - rhs
        denom = self._a_norm * float(np.abs(dual).sum()) + float(np.abs(rhs).sum()) + 1e-300
        if not np.all(np.isfinite(dual)) or float(np.abs(residual).max()) > 1e-8 * denom:
            dup = int(np.sum(pdist(self.coords) == 0.0))
            raise SingularKrigingError(
                "kriging system is singular "
                f"({dup} duplicate site pair(s); check drift columns for collinearity)"
            )
        self._dual = dual

    @property
    def n_sites(self) -> int:
        return len(self.y)

    @property
    def adjusted_intercept(self) -> float:
        """Drift intercept re-estimated under the residual covariance."""
        w = self._dual[self.n_sites :]
        return float(w[0] - np.sum(w[1:] * self._x_shift / self._x_scale))

    @property
    def adjusted_coefficients(self) -> np.ndarray:
        return self._dual[self.n_sites + 1 :] / self._x_scale

    def adjusted_trend(self, x_rows) -> np.ndarray:
        """Trend-only prediction with the covariance-adjusted coefficients;
        the far-field limit of the kriging predictor."""
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
        return self.adjusted_intercept + x_rows @ self.adjusted_coefficients

    def _rhs(self, xs, ys, x_rows) -> np.ndarray:
        pts = np.column_stack([np.asarray(xs, dtype=np.float64),
                               np.asarray(ys, dtype=np.float64)])
        d = cdist(self.coords, pts)
        b = np.empty((self.n_sites + 1 + self.x_rows.shape[1], len(pts)))
        b[: self.n_sites] = self.variogram.covariance(d)
        b[self.n_sites] = 1.0
        x_std = (np.atleast_2d(x_rows) - self._x_shift) / self._x_scale
        b[self.n_sites + 1 :] = x_std.T
        return b

    def predict_many(self, xs, ys, x_rows, with_variance: bool = False,
                     chunk: int = 4096):
        """Kriging mean (and optionally variance) at many points."""
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
        if x_rows.shape[1] != self.x_rows.shape[1]:
            raise InvalidArgumentError(
                f"x_rows must supply the drift's {self.x_rows.shape[1]} columns"
            )
        m = len(xs)
        mean = np.empty(m)
        var = np.empty(m) if with_variance else None
        sill = self.variogram.sill
        for s in range(0, m, chunk):
            e = min(s + chunk, m)
            b = self._rhs(xs[s:e], ys[s:e], x_rows[s:e])
            mean[s:e] = b.T @ self._dual
            if with_variance:
                sol = lu_solve(self._lu, b, check_finite=False)
                var[s:e] = np.maximum(sill - np.einsum("ij,ij->j", b, sol), 0.0)
        return (mean, var) if with_variance else (mean, None)

    def to_dict(self) -> dict:
        return {
            "drift": self.drift.to_dict(),
            "variogram": self.variogram.to_dict(),
            "training": {
                "coords": self.coords.tolist(),
                "x_rows": self.x_rows.tolist(),
                "y": self.y.tolist(),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KrigingModel":
        return cls(
            drift=LinearModel.from_dict(d["drift"]),
            variogram=VariogramModel.from_dict(d["variogram"]),
            coords=np.array(d["training"]["coords"]),
            x_rows=np.array(d["training"]["x_rows"]),
            y=np.array(d["training"]["y"]),
        )


def uk_fit(drift: LinearModel, sites: MonitorTable, matrix: CovariateMatrix,
           n_bins: int = DEFAULT_N_BINS, max_lag: float | None = None) -> KrigingModel:
    """Assemble a KrigingModel from a fitted drift and its training data.

    The empirical variogram of the drift residuals is fitted with the
    exponential model. Sites sharing exact coordinates are averaged into
    one site (with a logged warning) to keep the system nonsingular.
    """
    y = np.asarray(sites.annual_mean, dtype=np.float64)
    if len(y) != matrix.n_sites:
        raise InvalidArgumentError("sites and matrix row counts differ")
    x_sel = matrix.select(drift.selected) if drift.selected else np.empty((len(y), 0))
    resid = y - drift.predict(matrix, n_rows=len(y))
    if len(drift.residuals) != len(y) or not np.allclose(
        resid, drift.residuals, atol=1e-8 * (1.0 + float(np.abs(y).max()))
    ):
        raise InvalidArgumentError(
            "drift was not trained on exactly these sites and columns"
        )
    coords = sites.coords
    uniq, inverse = np.unique(coords, axis=0, return_inverse=True)
    if len(uniq) < len(coords):
        log.warning("averaging %d sites sharing coordinates with another site",
                    len(coords) - len(uniq))
        y_u = np.zeros(len(uniq))
        x_u = np.zeros((len(uniq), x_sel.shape[1]))
        cnt = np.bincount(inverse)
        np.add.at(y_u, inverse, y)
        np.add.at(x_u, inverse, x_sel)
        y_u /= cnt
        x_u /= cnt[:, None]
        coords_u = uniq
        resid_u = y_u - (drift.intercept + x_u @ drift.coefficients
                         if drift.selected else np.full(len(uniq), drift.intercept))
    else:
        coords_u, x_u, y_u, resid_u = coords, x_sel, y, resid
    ev = empirical_variogram(resid_u, coords_u, n_bins=n_bins, max_lag=max_lag)
    variogram = fit_exponential(ev)
    return KrigingModel(drift=drift, variogram=variogram, coords=coords_u,
                        x_rows=x_u, y=y_u)


def uk_predict(model: KrigingModel, x: float, y: float, x_row) -> KrigingPrediction:
    """Universal-kriging mean and variance at one location."""
    x_row = np.atleast_2d(np.asarray(x_row, dtype=np.float64))
    mean, var = model.predict_many([x], [y], x_row, with_variance=True)
    return KrigingPrediction(mean=float(mean[0]), variance=float(var[0]))
