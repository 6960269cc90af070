"""Linear-model backbone: OLS with inference, stepwise selection, and
optimal scaling of categorical predictors.

Categorical predictors enter a fit through a Quantification (a label to
number mapping).  A binary variable without one is coded 0/1 by category
order.  The optimal-scaling fit (``catreg_fit``) alternates OLS with
per-category least-squares updates of the quantifications until R^2 stops
improving; ordinal variables are projected monotone by pool-adjacent-
violators inside each pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._errors import ConfigError, ConvergenceError, DataError, NumericalError
from .dataset import Dataset, listwise_complete, sample_sd
from .numerics import solve_least_squares, t_cdf, unscaled_covariance

__all__ = [
    "Quantification",
    "ModelTerm",
    "LinearModel",
    "StepwiseStep",
    "StepwiseTrace",
    "CatregResult",
    "ols_fit",
    "stepwise_fit",
    "catreg_fit",
    "model_predict",
]

QUANTIFICATION_SOURCES = ("initial", "catreg", "recalibrated")


@dataclass(frozen=True)
class Quantification:
    """Numeric values standing in for one categorical variable's labels."""

    variable: str
    mapping: dict[str, float]
    source: str = "initial"

    def __post_init__(self):
        if self.source not in QUANTIFICATION_SOURCES:
            raise ConfigError(f"unknown quantification source {self.source!r}")
        if not self.mapping:
            raise ConfigError(f"empty quantification for {self.variable!r}")
        object.__setattr__(self, "mapping", dict(self.mapping))

    def values_for(self, labels: Sequence[str | None]) -> np.ndarray:
        out = np.empty(len(labels))
        for i, label in enumerate(labels):
            if label is None:
                out[i] = np.nan
            else:
                try:
                    out[i] = self.mapping[label]
                except KeyError:
                    raise DataError(
                        f"no quantification value for category {label!r} "
                        f"of {self.variable!r}"
                    ) from None
        return out


@dataclass(frozen=True)
class ModelTerm:
    variable: str
    coefficient: float
    std_coefficient: float
    std_error: float
    t_value: float
    p_value: float


@dataclass(frozen=True)
class LinearModel:
    """A fitted linear model plus the codings needed to reuse it on rows.

    ``codings`` stores, for every categorical term, the label to number
    mapping actually used at fit time (a supplied quantification or the 0/1
    binary coding), so prediction never has to re-derive schema state.
    ``response_transform`` records how the response column had been
    transformed before fitting ('none', 'ln', or 'ln1p').
    """

    response: str
    response_transform: str
    intercept: float
    intercept_p: float
    terms: tuple[ModelTerm, ...]
    r_squared: float
    n: int
    codings: dict[str, dict[str, float]] = field(default_factory=dict)

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(t.variable for t in self.terms)

    def term(self, variable: str) -> ModelTerm:
        for t in self.terms:
            if t.variable == variable:
                return t
        raise DataError(f"model has no term for {variable!r}")

    def formula(self) -> str:
        resp = self.response
        if self.response_transform == "ln":
            resp = f"ln({resp})"
        elif self.response_transform == "ln1p":
            resp = f"ln1p({resp})"
        parts = [f"{resp} = {self.intercept:.4g}"]
        for t in self.terms:
            sign = "-" if t.coefficient < 0 else "+"
            parts.append(f"{sign} {abs(t.coefficient):.4g}*{t.variable}")
        return " ".join(parts)

    def to_dict(self) -> dict:
        return {
            "response": self.response,
            "response_transform": self.response_transform,
            "intercept": self.intercept,
            "intercept_p": self.intercept_p,
            "r_squared": self.r_squared,
            "n": self.n,
            "terms": [
                {
                    "variable": t.variable,
                    "coefficient": t.coefficient,
                    "std_coefficient": t.std_coefficient,
                    "std_error": t.std_error,
                    "t_value": t.t_value,
                    "p_value": t.p_value,
                }
                for t in self.terms
            ],
            "codings": {k: dict(v) for k, v in self.codings.items()},
            "formula": self.formula(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LinearModel":
        return cls(
            response=data["response"],
            response_transform=data["response_transform"],
            intercept=data["intercept"],
            intercept_p=data["intercept_p"],
            terms=tuple(
                ModelTerm(
                    variable=t["variable"],
                    coefficient=t["coefficient"],
                    std_coefficient=t["std_coefficient"],
                    std_error=t["std_error"],
                    t_value=t["t_value"],
                    p_value=t["p_value"],
                )
                for t in data["terms"]
            ),
            r_squared=data["r_squared"],
            n=data["n"],
            codings={k: dict(v) for k, v in data.get("codings", {}).items()},
        )


def design_columns(
    ds: Dataset,
    predictors: Sequence[str],
    quantifications: dict[str, Quantification] | None = None,
) -> tuple[np.ndarray, dict[str, dict[str, float]]]:
    """Numeric design columns for the given predictors, plus codings used.

    Rows must already be listwise complete for the predictors.  Categorical
    predictors need a quantification unless binary, in which case they are
    coded 0/1 by category order.
    """
    quantifications = quantifications or {}
    cols = []
    codings: dict[str, dict[str, float]] = {}
    for name in predictors:
        spec = ds.spec(name)
        if spec.kind == "numeric":
            cols.append(ds.columns[name].astype(float))
            continue
        quant = quantifications.get(name)
        if quant is not None:
            mapping = dict(quant.mapping)
        elif spec.kind == "binary" or len(spec.categories) == 2:
            mapping = {label: float(i) for i, label in enumerate(spec.categories)}
        else:
            raise DataError(
                f"categorical predictor {name!r} has {len(spec.categories)} "
                f"categories and no quantification"
            )
        codings[name] = mapping
        labels = ds.labels(name)
        vals = np.empty(ds.row_count)
        for i, label in enumerate(labels):
            if label is None:
                raise DataError(f"missing value in categorical predictor {name!r}")
            if label not in mapping:
                raise DataError(
                    f"no quantification value for category {label!r} of {name!r}"
                )
            vals[i] = mapping[label]
        cols.append(vals)
    matrix = np.column_stack(cols) if cols else np.empty((ds.row_count, 0))
    return matrix, codings


def _response_values(ds: Dataset, response: str) -> np.ndarray:
    spec = ds.spec(response)
    if spec.is_categorical:
        raise DataError(f"response {response!r} must be numeric")
    return ds.columns[response].astype(float)


def ols_fit(
    ds: Dataset,
    response: str,
    predictors: Sequence[str],
    quantifications: dict[str, Quantification] | None = None,
    response_transform: str = "none",
) -> LinearModel:
    """Ordinary least squares with t-based inference per coefficient.

    Standardized coefficients use sample (n-1) standard deviations.  The
    dataset is reduced to rows listwise complete over the response and all
    predictors before fitting.
    """
    predictors = list(predictors)
    data = listwise_complete(ds, [response] + predictors)
    n = data.row_count
    p = len(predictors)
    if n <= p + 1:
        raise DataError(
            f"OLS needs more than {p + 1} complete rows for {p} predictors, got {n}"
        )
    y = _response_values(data, response)
    x, codings = design_columns(data, predictors, quantifications)
    design = np.column_stack([np.ones(n), x])
    try:
        sol = solve_least_squares(design, y)
    except NumericalError as err:
        col = getattr(err, "column", None)
        if col is not None:
            name = "intercept" if col == 0 else predictors[col - 1]
            named = NumericalError(
                f"collinear design: {name!r} is linearly dependent on the other terms"
            )
            named.variable = name
            raise named from None
        raise
    coef = sol.coefficients
    rss = sol.residual_sum_squares
    sd_y = sample_sd(y)
    tss = float(((y - y.mean()) ** 2).sum())
    if tss == 0.0:
        raise DataError(f"response {response!r} has zero variance on the fit rows")
    r_squared = 1.0 - rss / tss

    df = n - p - 1
    sigma2 = rss / df
    cov = sigma2 * unscaled_covariance(design)
    ses = np.sqrt(np.maximum(np.diag(cov), 0.0))

    def _p_of(b: float, se: float) -> float:
        if se == 0.0:
            return 1.0 if b == 0.0 else 0.0
        return 2.0 * (1.0 - t_cdf(abs(b / se), df))

    terms = []
    for j, name in enumerate(predictors, start=1):
        b = float(coef[j])
        se = float(ses[j])
        t = math.inf if se == 0.0 and b != 0.0 else (0.0 if se == 0.0 else b / se)
        beta = b * sample_sd(x[:, j - 1]) / sd_y
        terms.append(
            ModelTerm(
                variable=name,
                coefficient=b,
                std_coefficient=float(beta),
                std_error=se,
                t_value=float(t),
                p_value=_p_of(b, se),
            )
        )
    return LinearModel(
        response=response,
        response_transform=response_transform,
        intercept=float(coef[0]),
        intercept_p=_p_of(float(coef[0]), float(ses[0])),
        terms=tuple(terms),
        r_squared=float(r_squared),
        n=n,
        codings=codings,
    )


# ---------------------------------------------------------------------------
# stepwise selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepwiseStep:
    action: str  # 'enter' or 'remove'
    variable: str
    p_value: float


@dataclass(frozen=True)
class StepwiseTrace:
    steps: tuple[StepwiseStep, ...]
    included: tuple[str, ...]
    final_model: LinearModel


def stepwise_fit(
    ds: Dataset,
    response: str,
    candidates: Sequence[str],
    p_enter: float = 0.05,
    p_remove: float = 0.10,
    quantifications: dict[str, Quantification] | None = None,
    response_transform: str = "none",
) -> StepwiseTrace:
    """Forward-entry stepwise regression with backward removal.

    Each pass enters the excluded candidate with the smallest p below
    ``p_enter`` (ties break on candidate order), then removes included
    variables whose p exceeds ``p_remove`` (largest first) until none does.
    Rows are fixed up front: listwise complete over the response and every
    candidate, so all fits see the same data.  The procedure stops when a
    full pass changes nothing or after 2 * len(candidates) actions.
    """
    if not candidates:
        raise ConfigError("stepwise needs at least one candidate")
    if p_enter > p_remove:
        raise ConfigError(
            f"p_enter ({p_enter}) must not exceed p_remove ({p_remove})"
        )
    candidates = list(candidates)
    data = listwise_complete(ds, [response] + candidates)

    def _fit(variables: list[str]) -> LinearModel:
        return ols_fit(
            data, response, variables, quantifications, response_transform
        )

    included: list[str] = []
    steps: list[StepwiseStep] = []
    max_actions = 2 * len(candidates)
    while len(steps) < max_actions:
        changed = False
        # entry
        best_var, best_p = None, None
        for var in candidates:
            if var in included:
                continue
            try:
                trial = _fit(included + [var])
            except NumericalError:
                continue  # collinear with current model, ineligible
            p = trial.term(var).p_value
            if p < p_enter and (best_p is None or p < best_p):
                best_var, best_p = var, p
        if best_var is not None:
            included.append(best_var)
            steps.append(StepwiseStep("enter", best_var, best_p))
            changed = True
        # removal sweep
        while included and len(steps) < max_actions:
            model = _fit(included)
            worst = max(model.terms, key=lambda t: t.p_value)
            if worst.p_value > p_remove:
                included.remove(worst.variable)
                steps.append(StepwiseStep("remove", worst.variable, worst.p_value))
                changed = True
            else:
                break
        if not changed:
            break
    return StepwiseTrace(
        steps=tuple(steps),
        included=tuple(included),
        final_model=_fit(included),
    )


# ---------------------------------------------------------------------------
# optimal scaling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CatregResult:
    model: LinearModel
    quantifications: tuple[Quantification, ...]
    iterations: int
    r_squared_path: tuple[float, ...]


def _pav_weighted(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted least-squares projection onto nondecreasing sequences."""
    blocks = [[float(v), float(w)] for v, w in zip(values, weights)]
    merged: list[list[float]] = []
    counts: list[int] = []
    for v, w in blocks:
        merged.append([v, w])
        counts.append(1)
        while len(merged) > 1 and merged[-2][0] > merged[-1][0]:
            v2, w2 = merged.pop()
            c2 = counts.pop()
            v1, w1 = merged[-1]
            total = w1 + w2
            merged[-1] = [(v1 * w1 + v2 * w2) / total if total > 0 else 0.0, total]
            counts[-1] += c2
        # zero-weight categories just follow their block
    out = np.empty(values.size)
    pos = 0
    for (v, _), c in zip(merged, counts):
        out[pos : pos + c] = v
        pos += c
    return out


def _monotone_projection(means: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Best monotone fit to the category means, in either direction."""
    up = _pav_weighted(means, weights)
    down = -_pav_weighted(-means, weights)
    err_up = float(weights @ (means - up) ** 2)
    err_down = float(weights @ (means - down) ** 2)
    return up if err_up <= err_down else down


def _standardize(col: np.ndarray) -> np.ndarray | None:
    centered = col - col.mean()
    var = float(np.mean(centered**2))
    if var <= 0.0:
        return None
    return centered / math.sqrt(var)


def catreg_fit(
    ds: Dataset,
    response: str,
    predictors: Sequence[str],
    scaling: dict[str, str] | None = None,
    tol: float = 1e-8,
    max_iter: int = 500,
    response_transform: str = "none",
) -> CatregResult:
    """Alternating-least-squares optimal scaling regression.

    Categorical predictors get data-driven quantifications: each pass runs
    OLS on the current quantified columns, then per variable (in the order
    given) replaces each category's value with the category mean of the
    working target (current residual plus that variable's own contribution),
    projects ordinal variables monotone, restandardizes to mean 0 and
    variance 1 over the fit rows, and re-estimates that variable's
    coefficient.  R^2 never decreases; iteration stops when it improves by
    less than ``tol``.
    """
    scaling = scaling or {}
    for name, level in scaling.items():
        if level not in ("nominal", "ordinal"):
            raise ConfigError(f"unknown scaling level {level!r} for {name!r}")
    predictors = list(predictors)
    data = listwise_complete(ds, [response] + predictors)
    n = data.row_count
    p = len(predictors)
    if n <= p + 1:
        raise DataError(
            f"optimal scaling needs more than {p + 1} complete rows, got {n}"
        )
    y = _response_values(data, response)

    numeric = [v for v in predictors if data.spec(v).kind == "numeric"]
    categorical = [v for v in predictors if data.spec(v).is_categorical]
    if not categorical:
        raise ConfigError("optimal scaling needs at least one categorical predictor")

    codes: dict[str, np.ndarray] = {}
    k_of: dict[str, int] = {}
    counts: dict[str, np.ndarray] = {}
    for name in categorical:
        spec = data.spec(name)
        codes[name] = data.columns[name].astype(np.int64)
        k = len(spec.categories)
        k_of[name] = k
        cnt = np.bincount(codes[name], minlength=k).astype(float)
        empty = [spec.categories[i] for i in range(k) if cnt[i] == 0]
        if empty:
            raise DataError(
                f"categories of {name!r} with zero training rows: {empty}"
            )
        counts[name] = cnt

    # initial quantification: standardized category index
    z: dict[str, np.ndarray] = {}
    for name in categorical:
        col = _standardize(codes[name].astype(float))
        if col is None:
            raise DataError(f"predictor {name!r} is constant on the fit rows")
        z[name] = col

    numeric_block = (
        np.column_stack([data.columns[v].astype(float) for v in numeric])
        if numeric
        else np.empty((n, 0))
    )
    tss = float(((y - y.mean()) ** 2).sum())
    if tss == 0.0:
        raise DataError(f"response {response!r} has zero variance on the fit rows")

    def _design() -> np.ndarray:
        cols = [np.ones(n), numeric_block] + [z[v][:, None] for v in categorical]
        return np.hstack([c if c.ndim == 2 else c[:, None] for c in cols])

    cat_positions = {v: 1 + len(numeric) + i for i, v in enumerate(categorical)}

    r2_path: list[float] = []
    previous_r2 = -math.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        design = _design()
        sol = solve_least_squares(design, y)
        coef = sol.coefficients.copy()
        r2 = 1.0 - sol.residual_sum_squares / tss
        r2_path.append(float(r2))
        if r2 - previous_r2 < tol and iterations > 1:
            break
        previous_r2 = r2

        residual = y - design @ coef
        for name in categorical:
            b = float(coef[cat_positions[name]])
            working = residual + b * z[name]
            sums = np.bincount(codes[name], weights=working, minlength=k_of[name])
            means = sums / counts[name]
            if name in scaling and scaling[name] == "ordinal":
                means = _monotone_projection(means, counts[name])
            col = _standardize(means[codes[name]])
            if col is None:
                continue  # no usable signal this pass; keep previous values
            new_b = float(col @ working) / n  # population-variance-1 column
            residual = working - new_b * col
            z[name] = col
            coef[cat_positions[name]] = new_b

    if iterations == max_iter and len(r2_path) >= 2 and r2_path[-1] - r2_path[-2] >= tol:
        raise ConvergenceError(
            f"optimal scaling did not converge within {max_iter} iterations"
        )

    quantifications = []
    quant_map: dict[str, Quantification] = {}
    for name in categorical:
        spec = data.spec(name)
        per_category = np.full(k_of[name], np.nan)
        for code in range(k_of[name]):
            rows = codes[name] == code
            per_category[code] = float(z[name][rows][0])
        quant = Quantification(
            variable=name,
            mapping={spec.categories[i]: float(per_category[i]) for i in range(k_of[name])},
            source="catreg",
        )
        quantifications.append(quant)
        quant_map[name] = quant

    model = ols_fit(data, response, predictors, quant_map, response_transform)
    return CatregResult(
        model=model,
        quantifications=tuple(quantifications),
        iterations=iterations,
        r_squared_path=tuple(r2_path),
    )


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


def back_transform_value(value: float, transform: str) -> float:
    if transform == "ln":
        return math.exp(value)
    if transform == "ln1p":
        return math.expm1(value)
    raise DataError(
        f"back-transform undefined for response transform {transform!r}"
    )


def model_predict(
    model: LinearModel,
    quantifications: dict[str, Quantification] | None,
    row: dict,
    back_transform: bool = False,
) -> float:
    """Evaluate the linear predictor on one row.

    ``row`` maps variable names to numeric values (modeling scale) or, for
    categorical terms, category labels.  Labels are resolved through the
    supplied quantifications first, then the model's fit-time codings.  With
    ``back_transform`` the ln-scale prediction is exponentiated back to a
    raw count, which requires a log-transformed response.
    """
    quantifications = quantifications or {}
    total = model.intercept
    for term in model.terms:
        if term.variable not in row:
            raise DataError(f"row is missing model variable {term.variable!r}")
        raw = row[term.variable]
        if isinstance(raw, str):
            quant = quantifications.get(term.variable)
            mapping = quant.mapping if quant is not None else model.codings.get(term.variable)
            if mapping is None or raw not in mapping:
                raise DataError(
                    f"no quantification value for category {raw!r} of {term.variable!r}"
                )
            value = float(mapping[raw])
        else:
            value = float(raw)
        total += term.coefficient * value
    if back_transform:
        return back_transform_value(total, model.response_transform)
    return total
