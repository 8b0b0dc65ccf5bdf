"""Trend modeling: OLS, supervised forward stepwise selection, PLS, and
regression diagnostics.

The forward procedure adds the variable most correlated with the response
first, then repeatedly adds the admissible variable giving the largest
adjusted-R2 improvement, where admissible means: entering VIF below the
cap, entering coefficient p-value below the cap, and no previously
selected coefficient flipping sign relative to its sign at entry. It
stops when the best admissible gain falls below the configured minimum.
Ties always break toward the lowest column index, so selection is fully
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.linalg import qr, solve_triangular

from .covariates import CovariateMatrix
from .errors import (
    EmptyModelError,
    InvalidArgumentError,
    SingularDesignError,
    ZeroVarianceError,
)

_RANK_TOL = 1e-10


@dataclass(frozen=True)
class OlsFit:
    intercept: float
    coefficients: np.ndarray
    fitted: np.ndarray
    residuals: np.ndarray
    r2: float
    adj_r2: float
    p_values: np.ndarray  # two-sided t-test per slope
    intercept_p: float
    sigma2: float
    n: int
    p: int


def ols_fit(X, y, names=None) -> OlsFit:
    """Least-squares fit of y on [1, X] with coefficient t-test p-values.

    Raises SingularDesignError naming the dependent columns when the
    design is rank deficient, and requires n > p + 1.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 1 and X.shape[1] > 1 and len(np.atleast_1d(y)) > 1:
        X = X.T
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    if n != len(y):
        raise InvalidArgumentError("X and y must have the same number of rows")
    if n <= p + 1:
        raise InvalidArgumentError(f"need n > p + 1 (n={n}, p={p})")
    A = np.column_stack([np.ones(n), X])
    Q, R, piv = qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(n, p + 1) * np.finfo(float).eps * (diag[0] if diag[0] > 0 else 1.0)
    rank = int(np.sum(diag > max(tol, _RANK_TOL * diag[0])))
    if rank < p + 1:
        dep = sorted(piv[rank:].tolist())
        labels = [("intercept" if j == 0 else (names[j - 1] if names else f"col{j - 1}"))
                  for j in dep]
        raise SingularDesignError(
            f"design matrix is rank deficient; dependent columns: {labels}",
            dependent_columns=labels,
        )
    beta_piv = solve_triangular(R, Q.T @ y)
    beta = np.empty(p + 1)
    beta[piv] = beta_piv
    fitted = A @ beta
    resid = y - fitted
    rss = float(resid @ resid)
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        raise ZeroVarianceError("response has zero variance")
    r2 = 1.0 - rss / sst
    df = n - p - 1
    adj = 1.0 - (1.0 - r2) * (n - 1) / df
    sigma2 = rss / df
    r_inv = solve_triangular(R, np.eye(p + 1))
    diag_cov_piv = np.sum(r_inv**2, axis=1)
    diag_cov = np.empty(p + 1)
    diag_cov[piv] = diag_cov_piv
    se = np.sqrt(np.maximum(sigma2 * diag_cov, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, beta / se, np.inf * np.sign(beta + (beta == 0)))
    pvals = 2.0 * stats.t.sf(np.abs(t), df)
    return OlsFit(
        intercept=float(beta[0]),
        coefficients=beta[1:].copy(),
        fitted=fitted,
        residuals=resid,
        r2=r2,
        adj_r2=adj,
        p_values=pvals[1:].copy(),
        intercept_p=float(pvals[0]),
        sigma2=sigma2,
        n=n,
        p=p,
    )


def vif(candidate, included) -> float:
    """Variance inflation factor of `candidate` against `included` columns.

    1 / (1 - R^2) of regressing the candidate on the included set with an
    intercept; 1.0 for an empty set, +inf under perfect collinearity.
    """
    candidate = np.asarray(candidate, dtype=np.float64)
    ss = float(np.sum((candidate - candidate.mean()) ** 2))
    if ss == 0.0:
        return np.inf
    included = np.asarray(included, dtype=np.float64)
    if included.size == 0:
        return 1.0
    if included.ndim == 1:
        included = included[:, None]
    A = np.column_stack([np.ones(len(candidate)), included])
    coef, *_ = np.linalg.lstsq(A, candidate, rcond=None)
    rss = float(np.sum((candidate - A @ coef) ** 2))
    if rss <= 1e-12 * ss:
        return np.inf
    return ss / rss


@dataclass(frozen=True)
class StepwiseConfig:
    vif_max: float = 5.0
    p_max: float = 0.05
    min_adj_r2_gain: float = 0.005
    criterion: str = "adj_r2"  # adj_r2 | aic | cv10_r2 | f_value
    direction: str = "forward"  # forward | backward
    cv_folds: int = 10
    cv_seed: int = 0

    def __post_init__(self):
        if not self.vif_max > 1:
            raise InvalidArgumentError("vif_max must be > 1")
        if not 0 < self.p_max < 1:
            raise InvalidArgumentError("p_max must be in (0, 1)")
        if self.min_adj_r2_gain < 0:
            raise InvalidArgumentError("min_adj_r2_gain must be >= 0")
        if self.criterion not in ("adj_r2", "aic", "cv10_r2", "f_value"):
            raise InvalidArgumentError(f"unknown criterion {self.criterion!r}")
        if self.direction not in ("forward", "backward"):
            raise InvalidArgumentError(f"unknown direction {self.direction!r}")

    def to_dict(self) -> dict:
        return {
            "vif_max": self.vif_max,
            "p_max": self.p_max,
            "min_adj_r2_gain": self.min_adj_r2_gain,
            "criterion": self.criterion,
            "direction": self.direction,
        }


@dataclass(frozen=True)
class LinearModel:
    """A fitted trend model over named covariate columns."""

    selected: tuple[str, ...]
    intercept: float
    coefficients: np.ndarray
    entry_signs: np.ndarray
    r2: float
    adj_r2: float
    residuals: np.ndarray
    p_values: np.ndarray
    n: int
    config: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return len(self.selected)

    def design(self, source) -> np.ndarray:
        if hasattr(source, "select"):
            return source.select(self.selected)
        if isinstance(source, dict):
            return np.column_stack([np.asarray(source[name], dtype=np.float64)
                                    for name in self.selected]) if self.selected else \
                np.empty((_dict_len(source), 0))
        arr = np.asarray(source, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.shape[1] != len(self.selected):
            raise InvalidArgumentError(
                f"expected {len(self.selected)} columns, got {arr.shape[1]}"
            )
        return arr

    def predict(self, source, n_rows: int | None = None) -> np.ndarray:
        if not self.selected:
            if n_rows is None:
                n_rows = len(self.design(source)) if source is not None else 1
            return np.full(n_rows, self.intercept)
        X = self.design(source)
        return self.intercept + X @ self.coefficients

    def to_dict(self) -> dict:
        return {
            "selected": list(self.selected),
            "intercept": self.intercept,
            "coefficients": self.coefficients.tolist(),
            "entry_signs": self.entry_signs.tolist(),
            "fit_stats": {
                "r2": self.r2,
                "adj_r2": self.adj_r2,
                "residuals": self.residuals.tolist(),
            },
            "n": self.n,
            "p": self.p,
            "p_values": self.p_values.tolist(),
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        return cls(
            selected=tuple(d["selected"]),
            intercept=float(d["intercept"]),
            coefficients=np.array(d["coefficients"], dtype=np.float64),
            entry_signs=np.array(d["entry_signs"], dtype=np.float64),
            r2=float(d["fit_stats"]["r2"]),
            adj_r2=float(d["fit_stats"]["adj_r2"]),
            residuals=np.array(d["fit_stats"]["residuals"], dtype=np.float64),
            p_values=np.array(d.get("p_values", []), dtype=np.float64),
            n=int(d["n"]),
            config=d.get("config", {}),
        )


def _dict_len(source: dict) -> int:
    for v in source.values():
        return len(np.atleast_1d(v))
    return 1


def mean_model(y) -> LinearModel:
    """Intercept-only model (training-mean predictor)."""
    y = np.asarray(y, dtype=np.float64)
    if len(y) < 2:
        raise InvalidArgumentError("need at least 2 observations")
    return LinearModel(
        selected=(),
        intercept=float(y.mean()),
        coefficients=np.empty(0),
        entry_signs=np.empty(0),
        r2=0.0,
        adj_r2=0.0,
        residuals=y - y.mean(),
        p_values=np.empty(0),
        n=len(y),
        config={"selection": "mean"},
    )


def fit_linear_model(matrix: CovariateMatrix, y, names, config=None) -> LinearModel:
    """OLS on a fixed, ordered set of named columns (no selection)."""
    names = list(names)
    fit = ols_fit(matrix.select(names), np.asarray(y, dtype=np.float64), names=names)
    return LinearModel(
        selected=tuple(names),
        intercept=fit.intercept,
        coefficients=fit.coefficients,
        entry_signs=np.sign(fit.coefficients),
        r2=fit.r2,
        adj_r2=fit.adj_r2,
        residuals=fit.residuals,
        p_values=fit.p_values,
        n=fit.n,
        config=dict(config or {}),
    )


# ---------------------------------------------------------------------------
# Forward stepwise engine
# ---------------------------------------------------------------------------

class _QrState:
    """Incremental thin-QR over [1, selected columns].

    Candidate evaluation (VIF, entering p-value, adjusted R2, tentative
    coefficient signs) runs against this factorization; the committed
    model is refit once at the end through ols_fit.
    """

    def __init__(self, y: np.ndarray):
        self.n = len(y)
        self.y = y
        q0 = np.full((self.n, 1), 1.0 / np.sqrt(self.n))
        self.Q = q0
        self.R = np.array([[np.sqrt(float(self.n))]])
        self.qty = np.array([q0[:, 0] @ y])
        self.update_residual()

    def update_residual(self):
        self.ry = self.y - self.Q @ self.qty
        self.rss = float(self.ry @ self.ry)

    def residualize(self, cols: np.ndarray):
        u = self.Q.T @ cols
        res = cols - self.Q @ u
        u2 = self.Q.T @ res
        res -= self.Q @ u2
        return res, u + u2

    def tentative_coefficients(self, u_col, rho, g_over_rho):
        m = self.R.shape[0]
        r_aug = np.zeros((m + 1, m + 1))
        r_aug[:m, :m] = self.R
        r_aug[:m, m] = u_col
        r_aug[m, m] = rho
        rhs = np.concatenate([self.qty, [g_over_rho]])
        return solve_triangular(r_aug, rhs)

    def append(self, res_col, u_col, rho, g_over_rho):
        m = self.R.shape[0]
        r_new = np.zeros((m + 1, m + 1))
        r_new[:m, :m] = self.R
        r_new[:m, m] = u_col
        r_new[m, m] = rho
        self.R = r_new
        self.Q = np.column_stack([self.Q, res_col / rho])
        self.qty = np.concatenate([self.qty, [g_over_rho]])
        self.update_residual()


def _criterion_value(criterion, rss_new, k_new, n, sst, cv_metric=None):
    df = n - k_new - 1
    if criterion == "adj_r2":
        return 1.0 - (rss_new / df) / (sst / (n - 1))
    if criterion == "aic":
        return -(n * np.log(max(rss_new, 1e-300) / n) + 2.0 * (k_new + 2))
    if criterion == "f_value":
        if rss_new <= 0:
            return np.inf
        return ((sst - rss_new) / k_new) / (rss_new / df)
    if criterion == "cv10_r2":
        return cv_metric
    raise InvalidArgumentError(criterion)


def stepwise_select(matrix: CovariateMatrix, y, cfg: StepwiseConfig | None = None) -> LinearModel:
    """Supervised stepwise variable selection over a covariate matrix.

    Zero-variance columns are never considered. Multiple buffer lengths
    of one base variable may enter, as long as each passes the
    admissibility rules on its own.
    """
    cfg = cfg or StepwiseConfig()
    y = np.asarray(y, dtype=np.float64)
    if len(y) != matrix.n_sites:
        raise InvalidArgumentError("response length does not match matrix rows")
    if cfg.direction == "backward":
        return _backward_select(matrix, y, cfg)

    X = matrix.values
    names = matrix.columns
    n, ptot = X.shape
    sds = X.std(axis=0)
    usable = np.flatnonzero(~matrix.zero_variance & (sds > 0))
    if usable.size == 0:
        raise EmptyModelError("no non-constant candidate columns")
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        raise ZeroVarianceError("response has zero variance")

    ss_centered = np.sum((X - X.mean(axis=0)) ** 2, axis=0)
    state = _QrState(y)
    selected: list[int] = []
    entry_signs: list[float] = []
    entry_pvalues: list[float] = []
    cv_folds = None
    if cfg.criterion == "cv10_r2":
        rng = np.random.default_rng(cfg.cv_seed)
        order = rng.permutation(n)
        cv_folds = np.empty(n, dtype=np.int64)
        cv_folds[order] = np.arange(n) % cfg.cv_folds

    # Step 1: highest absolute Pearson correlation with the response.
    yc = y - y.mean()
    with np.errstate(invalid="ignore"):
        corr = np.zeros(ptot)
        corr[usable] = np.abs((X[:, usable] - X[:, usable].mean(axis=0)).T @ yc) / (
            np.sqrt(ss_centered[usable]) * np.sqrt(sst)
        )
    first = int(usable[np.argmax(corr[usable])])
    res, u = state.residualize(X[:, [first]])
    rho = float(np.linalg.norm(res[:, 0]))
    g = float(res[:, 0] @ state.ry)
    rss_new = max(state.rss - (g / rho) ** 2, 0.0)
    df = n - 2
    if df < 1:
        raise InvalidArgumentError("too few observations for selection")
    p_first = _entering_pvalue(g, rho, rss_new, df)
    if not p_first < cfg.p_max:
        raise EmptyModelError(
            f"no admissible first variable (best candidate {names[first]!r} "
            f"has p={p_first:.3g})"
        )
    state.append(res[:, 0], u[:, 0], rho, g / rho)
    selected.append(first)
    beta1 = solve_triangular(state.R, state.qty)
    entry_signs.append(float(np.sign(beta1[-1])))
    entry_pvalues.append(p_first)

    while True:
        remaining = np.array([j for j in usable if j not in selected], dtype=np.int64)
        if remaining.size == 0:
            break
        k_new = len(selected) + 1
        df_new = n - k_new - 1
        if df_new < 1:
            break
        res, u = state.residualize(X[:, remaining])
        rho2 = np.einsum("ij,ij->j", res, res)
        g = res.T @ state.ry
        with np.errstate(divide="ignore", invalid="ignore"):
            vifs = np.where(rho2 > 0, ss_centered[remaining] / rho2, np.inf)
        best = None  # (metric, j, local_idx, rss_new, adj_new)
        adj_cur = 1.0 - (state.rss / (n - len(selected) - 1)) / (sst / (n - 1))
        for local, j in enumerate(remaining):
            if not vifs[local] < cfg.vif_max:
                continue
            if rho2[local] <= 0:
                continue
            rho_j = float(np.sqrt(rho2[local]))
            rss_new = max(state.rss - (g[local] / rho_j) ** 2, 0.0)
            p_val = _entering_pvalue(float(g[local]), rho_j, rss_new, df_new)
            if not p_val < cfg.p_max:
                continue
            beta = state.tentative_coefficients(u[:, local], rho_j, g[local] / rho_j)
            signs_now = np.sign(beta[1:-1])
            if np.any(signs_now != np.asarray(entry_signs)):
                continue
            cv_metric = None
            if cfg.criterion == "cv10_r2":
                cv_metric = _cv_r2(X[:, selected + [int(j)]], y, cv_folds, cfg.cv_folds)
            metric = _criterion_value(cfg.criterion, rss_new, k_new, n, sst, cv_metric)
            if best is None or metric > best[0]:
                adj_new = 1.0 - (rss_new / df_new) / (sst / (n - 1))
                best = (metric, int(j), local, rss_new, adj_new, p_val, float(np.sign(beta[-1])))
        if best is None:
            break
        _, j, local, rss_new, adj_new, p_val, sign_new = best
        if adj_new - adj_cur < cfg.min_adj_r2_gain:
            break
        rho_j = float(np.sqrt(rho2[local]))
        state.append(res[:, local], u[:, local], rho_j, g[local] / rho_j)
        selected.append(j)
        entry_signs.append(sign_new)
        entry_pvalues.append(p_val)

    names_sel = [names[j] for j in selected]
    fit = ols_fit(X[:, selected], y, names=names_sel)
    return LinearModel(
        selected=tuple(names_sel),
        intercept=fit.intercept,
        coefficients=fit.coefficients,
        entry_signs=np.array(entry_signs),
        r2=fit.r2,
        adj_r2=fit.adj_r2,
        residuals=fit.residuals,
        p_values=fit.p_values,
        n=n,
        config={"selection": "stepwise", **cfg.to_dict(),
                "entry_p_values": entry_pvalues},
    )


def _entering_pvalue(g, rho, rss_new, df):
    if rss_new <= 0:
        return 0.0
    t2 = (g / rho) ** 2 / (rss_new / df)
    return float(2.0 * stats.t.sf(np.sqrt(t2), df))


def _cv_r2(Xsub, y, fold_of, k):
    n = len(y)
    pred = np.empty(n)
    for f in range(k):
        test = fold_of == f
        train = ~test
        A = np.column_stack([np.ones(train.sum()), Xsub[train]])
        coef, *_ = np.linalg.lstsq(A, y[train], rcond=None)
        At = np.column_stack([np.ones(test.sum()), Xsub[test]])
        pred[test] = At @ coef
    sst = np.sum((y - y.mean()) ** 2)
    return 1.0 - np.sum((y - pred) ** 2) / sst


def _backward_select(matrix: CovariateMatrix, y, cfg: StepwiseConfig) -> LinearModel:
    """Backward elimination: drop worst-p columns, then any column whose
    removal does not reduce adjusted R2. Entry signs are final signs."""
    names = list(matrix.columns)
    usable = [i for i in range(len(names)) if not matrix.zero_variance[i]]
    current = list(usable)
    if not current:
        raise EmptyModelError("no non-constant candidate columns")
    while True:
        fit = ols_fit(matrix.values[:, current], y, names=[names[i] for i in current])
        worst = int(np.argmax(fit.p_values))
        if fit.p_values[worst] >= cfg.p_max:
            if len(current) == 1:
                raise EmptyModelError("backward elimination removed every variable")
            current.pop(worst)
            continue
        if len(current) > 1:
            best_drop, best_adj = None, fit.adj_r2
            for k in range(len(current)):
                trial = current[:k] + current[k + 1 :]
                f2 = ols_fit(matrix.values[:, trial], y)
                if f2.adj_r2 >= best_adj:
                    best_drop, best_adj = k, f2.adj_r2
            if best_drop is not None:
                current.pop(best_drop)
                continue
        break
    names_sel = [names[i] for i in current]
    return LinearModel(
        selected=tuple(names_sel),
        intercept=fit.intercept,
        coefficients=fit.coefficients,
        entry_signs=np.sign(fit.coefficients),
        r2=fit.r2,
        adj_r2=fit.adj_r2,
        residuals=fit.residuals,
        p_values=fit.p_values,
        n=fit.n,
        config={"selection": "stepwise", **cfg.to_dict()},
    )


# ---------------------------------------------------------------------------
# Partial least squares (PLS1)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlsModel:
    """PLS1 regression on centered, unit-variance columns.

    `weights`, `loadings` are (p, K); `score_coefficients` (K,) regress
    the response on component scores; `rotations` map standardized inputs
    directly to scores. `n_components` is the operating truncation.
    """

    columns: tuple[str, ...]
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    weights: np.ndarray
    loadings: np.ndarray
    score_coefficients: np.ndarray
    rotations: np.ndarray
    n_components: int

    @property
    def max_components(self) -> int:
        return self.weights.shape[1]

    def _standardize(self, source) -> np.ndarray:
        if hasattr(source, "select"):
            X = source.select(self.columns)
        else:
            X = np.asarray(source, dtype=np.float64)
        return (X - self.x_mean) / self.x_scale

    def transform(self, source, k: int | None = None) -> np.ndarray:
        k = self.n_components if k is None else k
        return self._standardize(source) @ self.rotations[:, :k]

    def predict(self, source, k: int | None = None) -> np.ndarray:
        k = self.n_components if k is None else k
        beta = self.rotations[:, :k] @ self.score_coefficients[:k]
        return self.y_mean + self._standardize(source) @ beta

    def with_components(self, k: int) -> "PlsModel":
        if not 1 <= k <= self.max_components:
            raise InvalidArgumentError(f"k must be in [1, {self.max_components}]")
        return PlsModel(
            self.columns, self.x_mean, self.x_scale, self.y_mean,
            self.weights, self.loadings, self.score_coefficients, self.rotations, k,
        )

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "y_mean": self.y_mean,
            "weights": self.weights.tolist(),
            "loadings": self.loadings.tolist(),
            "score_coefficients": self.score_coefficients.tolist(),
            "rotations": self.rotations.tolist(),
            "n_components": self.n_components,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PlsModel":
        return cls(
            columns=tuple(d["columns"]),
            x_mean=np.array(d["x_mean"]),
            x_scale=np.array(d["x_scale"]),
            y_mean=float(d["y_mean"]),
            weights=np.array(d["weights"]),
            loadings=np.array(d["loadings"]),
            score_coefficients=np.array(d["score_coefficients"]),
            rotations=np.array(d["rotations"]),
            n_components=int(d["n_components"]),
        )


@dataclass(frozen=True)
class PlsFit:
    model: PlsModel  # truncated at the selected component count
    rmsep: np.ndarray  # pooled CV RMSEP per component count (1..K)
    rmsep_se: np.ndarray  # fold-to-fold standard error per component count
    n_components: int


def _pls1_path(X0: np.ndarray, y0: np.ndarray, max_k: int):
    """Score-deflation PLS1; returns weight/loading matrices and score
    coefficients, stopping early when no signal remains."""
    n, p = X0.shape
    Xk = X0.copy()
    yk = y0.copy()
    scale0 = float(np.linalg.norm(X0.T @ y0)) or 1.0
    W, P, q = [], [], []
    for _ in range(max_k):
        w = Xk.T @ yk
        nw = float(np.linalg.norm(w))
        if nw <= 1e-12 * scale0:
            break
        w = w / nw
        t = Xk @ w
        tt = float(t @ t)
        if tt <= 1e-24 * n:
            break
        pk = Xk.T @ t / tt
        qk = float(yk @ t / tt)
        Xk = Xk - np.outer(t, pk)
        yk = yk - qk * t
        W.append(w)
        P.append(pk)
        q.append(qk)
    if not W:
        raise ZeroVarianceError("response carries no signal over the given columns")
    W = np.column_stack(W)
    P = np.column_stack(P)
    q = np.array(q)
    rotations = W @ np.linalg.inv(P.T @ W)
    return W, P, q, rotations


def pls_fit(matrix: CovariateMatrix, y, max_components: int, n_folds: int = 10,
            seed: int = 0) -> PlsFit:
    """Fit a PLS1 component family and pick the component count by the
    one-standard-error rule on 10-fold CV RMSEP (the most parsimonious
    model not significantly worse than the RMSEP minimum)."""
    y = np.asarray(y, dtype=np.float64)
    X = matrix.values
    n, p = X.shape
    if np.var(y) == 0:
        raise ZeroVarianceError("response has zero variance")
    if max_components < 1:
        raise InvalidArgumentError("max_components must be >= 1")
    if max_components > min(n - 1, p):
        raise InvalidArgumentError(
            f"max_components={max_components} exceeds the design capacity "
            f"min(n - 1, p) = {min(n - 1, p)}"
        )
    x_mean = X.mean(axis=0)
    x_scale = X.std(axis=0, ddof=1)
    x_scale = np.where(x_scale > 0, x_scale, 1.0)
    X0 = (X - x_mean) / x_scale
    y_mean = float(y.mean())
    W, P, q, rotations = _pls1_path(X0, y - y_mean, max_components)
    K = W.shape[1]

    rng = np.random.default_rng(seed)
    n_folds_eff = min(n_folds, n)
    order = rng.permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[order] = np.arange(n) % n_folds_eff

    sq_err = np.full((n, K), np.nan)
    for f in range(n_folds_eff):
        test = fold_of == f
        train = ~test
        Xt = X[train]
        mt = Xt.mean(axis=0)
        st = Xt.std(axis=0, ddof=1)
        st = np.where(st > 0, st, 1.0)
        X0t = (Xt - mt) / st
        ymt = float(y[train].mean())
        try:
            Wf, Pf, qf, Rf = _pls1_path(X0t, y[train] - ymt, K)
        except ZeroVarianceError:
            continue
        Kf = Rf.shape[1]
        Xv = (X[test] - mt) / st
        for k in range(1, K + 1):
            kk = min(k, Kf)
            beta = Rf[:, :kk] @ qf[:kk]
            pred = ymt + Xv @ beta
            sq_err[test, k - 1] = (y[test] - pred) ** 2
    rmsep = np.sqrt(np.nanmean(sq_err, axis=0))
    fold_rmsep = np.empty((n_folds_eff, K))
    for f in range(n_folds_eff):
        fold_rmsep[f] = np.sqrt(np.nanmean(sq_err[fold_of == f], axis=0))
    se = fold_rmsep.std(axis=0, ddof=1) / np.sqrt(n_folds_eff) if n_folds_eff > 1 \
        else np.zeros(K)
    k_min = int(np.argmin(rmsep))
    threshold = rmsep[k_min] + se[k_min]
    k_star = int(np.argmax(rmsep <= threshold)) + 1
    model = PlsModel(
        columns=tuple(matrix.columns),
        x_mean=x_mean,
        x_scale=x_scale,
        y_mean=y_mean,
        weights=W,
        loadings=P,
        score_coefficients=q,
        rotations=rotations,
        n_components=k_star,
    )
    return PlsFit(model=model, rmsep=rmsep, rmsep_se=se, n_components=k_star)


# ---------------------------------------------------------------------------
# Spatial autocorrelation diagnostic
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MoransI:
    i: float
    expected_i: float


def morans_i(residuals, coords, min_distance: float = 1000.0) -> MoransI:
    """Global Moran's I with inverse-distance, row-standardized weights.

    Coincident or near-coincident sites have their weight capped at the
    value for `min_distance` (default one grid cell) rather than erroring.
    """
    z = np.asarray(residuals, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64)
    n = len(z)
    if n < 3:
        raise InvalidArgumentError("Moran's I needs at least 3 sites")
    z = z - z.mean()
    denom = float(z @ z)
    if denom == 0.0:
        raise ZeroVarianceError("residuals have zero variance")
    d = np.sqrt(
        (coords[:, 0][:, None] - coords[:, 0][None, :]) ** 2
        + (coords[:, 1][:, None] - coords[:, 1][None, :]) ** 2
    )
    w = 1.0 / np.maximum(d, min_distance)
    np.fill_diagonal(w, 0.0)
    w /= w.sum(axis=1, keepdims=True)
    s0 = w.sum()
    i = (n / s0) * float(z @ w @ z) / denom
    return MoransI(i=i, expected_i=-1.0 / (n - 1))
