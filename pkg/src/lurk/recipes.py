"""Model recipes: which trend stage to run and whether to add kriging.

A recipe names one member of the model family grid (selection method x
kriging on/off x covariate exclusions). Fitting a recipe runs the FULL
pipeline on the data it is given, so cross-validation can re-run
selection and variogram fitting inside every training fold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .covariates import CovariateMatrix
from .errors import InvalidArgumentError
from .kriging import KrigingModel, uk_fit
from .lur import (
    LinearModel,
    PlsModel,
    StepwiseConfig,
    fit_linear_model,
    mean_model,
    pls_fit,
    stepwise_select,
)
from .monitors import MonitorTable
from ._util import stage_seed

SELECTIONS = ("stepwise", "pls", "mean")


@dataclass(frozen=True)
class ModelRecipe:
    selection: str = "stepwise"
    kriging: bool = False
    exclude: tuple[str, ...] = ()
    stepwise: StepwiseConfig = field(default_factory=StepwiseConfig)
    max_components: int = 10
    variogram_bins: int = 15
    variogram_max_lag: float | None = None

    def __post_init__(self):
        if self.selection not in SELECTIONS:
            raise InvalidArgumentError(f"unknown selection {self.selection!r}")
        object.__setattr__(self, "exclude", tuple(self.exclude))

    def label(self) -> str:
        parts = [self.selection]
        if self.exclude:
            parts.append("excl-" + "+".join(self.exclude))
        parts.append("uk" if self.kriging else "no-uk")
        return "_".join(parts)

    def to_dict(self) -> dict:
        return {
            "selection": self.selection,
            "kriging": self.kriging,
            "exclude": list(self.exclude),
            "stepwise": self.stepwise.to_dict(),
            "max_components": self.max_components,
            "variogram_bins": self.variogram_bins,
            "variogram_max_lag": self.variogram_max_lag,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelRecipe":
        sw = d.get("stepwise", {})
        return cls(
            selection=d.get("selection", "stepwise"),
            kriging=bool(d.get("kriging", False)),
            exclude=tuple(d.get("exclude", ())),
            stepwise=StepwiseConfig(**sw) if sw else StepwiseConfig(),
            max_components=int(d.get("max_components", 10)),
            variogram_bins=int(d.get("variogram_bins", 15)),
            variogram_max_lag=d.get("variogram_max_lag"),
        )


@dataclass
class FittedModel:
    """A fitted recipe: trend model, optional PLS transform, optional
    kriging stage. Immutable by convention once returned."""

    recipe: ModelRecipe
    trend: LinearModel
    pls: PlsModel | None
    kriging: KrigingModel | None

    @property
    def required_columns(self) -> tuple[str, ...]:
        """Covariate columns needed to predict at new locations."""
        if self.pls is not None:
            return self.pls.columns
        return self.trend.selected

    def design_rows(self, matrix_like) -> np.ndarray:
        if self.pls is not None:
            return self.pls.transform(matrix_like)
        if not self.trend.selected:
            return np.empty((_rows_of(matrix_like), 0))
        return self.trend.design(matrix_like)

    def predict(self, matrix_like, coords=None) -> np.ndarray:
        rows = self.design_rows(matrix_like)
        if self.kriging is not None:
            if coords is None:
                raise InvalidArgumentError("kriging prediction needs coordinates")
            coords = np.asarray(coords, dtype=np.float64)
            mean, _ = self.kriging.predict_many(coords[:, 0], coords[:, 1], rows)
            return mean
        if rows.shape[1] == 0:
            return np.full(len(rows), self.trend.intercept)
        return self.trend.intercept + rows @ self.trend.coefficients

    def to_dict(self) -> dict:
        return {
            "recipe": self.recipe.to_dict(),
            "trend": self.trend.to_dict(),
            "pls": self.pls.to_dict() if self.pls is not None else None,
            "kriging": self.kriging.to_dict() if self.kriging is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedModel":
        return cls(
            recipe=ModelRecipe.from_dict(d["recipe"]),
            trend=LinearModel.from_dict(d["trend"]),
            pls=PlsModel.from_dict(d["pls"]) if d.get("pls") else None,
            kriging=KrigingModel.from_dict(d["kriging"]) if d.get("kriging") else None,
        )


def _rows_of(matrix_like) -> int:
    if hasattr(matrix_like, "n_sites"):
        return matrix_like.n_sites
    return len(np.atleast_2d(np.asarray(matrix_like)))


def fit_recipe(recipe: ModelRecipe, sites: MonitorTable, matrix: CovariateMatrix,
               seed: int = 0) -> FittedModel:
    """Fit a recipe end to end on the given sites."""
    if len(sites) != matrix.n_sites:
        raise InvalidArgumentError("sites and matrix row counts differ")
    work = matrix.drop_columns(recipe.exclude) if recipe.exclude else matrix
    y = sites.annual_mean
    pls_model = None
    if recipe.selection == "stepwise":
        trend = stepwise_select(work, y, recipe.stepwise)
        drift_matrix = work
    elif recipe.selection == "mean":
        trend = mean_model(y)
        drift_matrix = work
    else:  # pls
        n_usable = int(np.sum(~work.zero_variance))
        max_k = min(recipe.max_components, max(n_usable, 1), len(sites) - 1)
        fit = pls_fit(work, y, max_components=max_k,
                      seed=stage_seed(seed, "pls-cv"))
        pls_model = fit.model
        scores = pls_model.transform(work)
        score_names = [f"pls_{k + 1}" for k in range(scores.shape[1])]
        drift_matrix = CovariateMatrix.from_values(work.site_ids, score_names, scores)
        trend = fit_linear_model(drift_matrix, y, score_names,
                                 config={"selection": "pls",
                                         "n_components": pls_model.n_components})
    kriging_model = None
    if recipe.kriging:
        kriging_model = uk_fit(trend, sites, drift_matrix,
                               n_bins=recipe.variogram_bins,
                               max_lag=recipe.variogram_max_lag)
    return FittedModel(recipe=recipe, trend=trend, pls=pls_model,
                       kriging=kriging_model)
