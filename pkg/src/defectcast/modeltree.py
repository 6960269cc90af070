"""Piecewise-linear model trees grown by standard-deviation reduction.

Each internal node splits on one predictor: numeric columns at a midpoint
between consecutive distinct values, categorical columns on a label subset
chosen from prefixes of the categories ordered by mean response.  Growth
stops when a node's spread falls below an absolute floor (a fraction of the
root spread) or when no split leaves both children at the minimum leaf
size.  Each leaf carries its own least-squares model over the numeric and
quantified predictors, with linearly dependent columns dropped one at a
time until the fit succeeds.

Node spread is the population standard deviation, which makes the
reduction score of every candidate split nonnegative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._errors import ConfigError, DataError, NumericalError
from .dataset import Dataset, listwise_complete
from .regression import (
    LinearModel,
    Quantification,
    back_transform_value,
    model_predict,
    ols_fit,
)

__all__ = ["TreeNode", "ModelTree", "fit_model_tree", "predict_tree"]


def _pop_sd(values: np.ndarray) -> float:
    return float(np.sqrt(np.mean((values - values.mean()) ** 2)))


@dataclass(frozen=True)
class TreeNode:
    """One tree node; a leaf iff ``model`` is set, a split otherwise."""

    n: int
    sd: float
    model: LinearModel | None = None
    variable: str | None = None
    threshold: float | None = None
    left_labels: tuple[str, ...] | None = None
    right_labels: tuple[str, ...] | None = None
    sd_reduction: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.model is not None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"kind": "leaf", "n": self.n, "sd": self.sd, "model": self.model.to_dict()}
        out = {
            "kind": "split",
            "n": self.n,
            "sd": self.sd,
            "variable": self.variable,
            "sd_reduction": self.sd_reduction,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }
        if self.threshold is not None:
            out["threshold"] = self.threshold
        else:
            out["left_labels"] = list(self.left_labels)
            out["right_labels"] = list(self.right_labels)
        return out


@dataclass(frozen=True)
class ModelTree:
    response: str
    response_transform: str
    predictors: tuple[str, ...]
    root: TreeNode
    min_leaf_size: int
    sd_floor: float

    @property
    def leaf_count(self) -> int:
        def count(node: TreeNode) -> int:
            if node.is_leaf:
                return 1
            return count(node.left) + count(node.right)

        return count(self.root)

    @property
    def depth(self) -> int:
        def down(node: TreeNode) -> int:
            if node.is_leaf:
                return 0
            return 1 + max(down(node.left), down(node.right))

        return down(self.root)

    def to_dict(self) -> dict:
        return {
            "response": self.response,
            "response_transform": self.response_transform,
            "predictors": list(self.predictors),
            "min_leaf_size": self.min_leaf_size,
            "sd_floor": self.sd_floor,
            "leaf_count": self.leaf_count,
            "depth": self.depth,
            "root": self.root.to_dict(),
        }

    def to_text(self) -> str:
        lines: list[str] = []

        def walk(node: TreeNode, depth: int) -> None:
            pad = "  " * depth
            if node.is_leaf:
                lines.append(
                    f"{pad}leaf: {node.model.formula()} "
                    f"(n={node.n}, sd={node.sd:.4g})"
                )
                return
            if node.threshold is not None:
                cond = f"{node.variable} < {node.threshold!r}"
            else:
                cond = f"{node.variable} in {{{', '.join(node.left_labels)}}}"
            lines.append(f"{pad}if {cond} (n={node.n}, sd={node.sd:.4g})")
            walk(node.left, depth + 1)
            lines.append(f"{pad}else")
            walk(node.right, depth + 1)

        walk(self.root, 0)
        return "\n".join(lines) + "\n"


def _split_candidates_numeric(values: np.ndarray):
    """Midpoints between consecutive distinct values, ascending."""
    distinct = np.unique(values)
    return [(distinct[i] + distinct[i + 1]) / 2.0 for i in range(distinct.size - 1)]


def _category_order(codes: np.ndarray, y: np.ndarray) -> list[int]:
    """Codes present in the node, ordered by mean response then code."""
    present = np.unique(codes)
    means = [(float(y[codes == c].mean()), int(c)) for c in present]
    means.sort()
    return [c for _, c in means]


def _leaf_fit(ds, response, leaf_values, quantifications, response_transform):
    """Leaf OLS with dependent columns dropped until the solve succeeds.

    ``leaf_values`` maps each usable regressor to its numeric values on the
    leaf rows.  Columns constant within the leaf are excluded up front (the
    intercept already covers them); remaining dependent columns are removed
    one at a time, the solver-named one when possible, the last otherwise.
    """
    active = [v for v, vals in leaf_values.items() if np.unique(vals).size > 1]
    n = ds.row_count
    while active and n <= len(active) + 1:
        active.pop()
    while True:
        try:
            return ols_fit(ds, response, active, quantifications, response_transform)
        except NumericalError as err:
            if not active:
                raise
            name = getattr(err, "variable", None)
            if name in active:
                active.remove(name)
            else:
                active.pop()
        except DataError as err:
            if "zero variance" not in str(err):
                raise
            y = ds.columns[response].astype(float)
            return LinearModel(
                response=response,
                response_transform=response_transform,
                intercept=float(y.mean()),
                intercept_p=0.0,
                terms=(),
                r_squared=0.0,
                n=n,
                codings={},
            )


def fit_model_tree(
    ds: Dataset,
    response: str,
    predictors: list[str],
    quantifications: dict[str, Quantification] | None = None,
    min_leaf_size: int | None = None,
    sd_fraction: float = 0.05,
    response_transform: str = "none",
) -> ModelTree:
    """Grow a model tree on rows listwise complete over all variables.

    ``min_leaf_size`` defaults to max(4, ceil(0.1 * n)).  Numeric and
    quantified categorical predictors supply threshold splits and leaf
    regressors; categorical predictors without a quantification supply
    subset splits only.
    """
    if not predictors:
        raise ConfigError("model tree needs at least one predictor")
    if not (0.0 < sd_fraction < 1.0):
        raise ConfigError(f"sd_fraction must be in (0, 1), got {sd_fraction}")
    quantifications = quantifications or {}
    data = listwise_complete(ds, [response] + list(predictors))
    n = data.row_count
    if min_leaf_size is None:
        min_leaf_size = max(4, math.ceil(0.1 * n))
    if min_leaf_size < 2:
        raise ConfigError(f"min_leaf_size must be at least 2, got {min_leaf_size}")
    if data.spec(response).is_categorical:
        raise DataError(f"response {response!r} must be numeric")
    y = data.columns[response].astype(float)

    numeric_like: dict[str, np.ndarray] = {}
    subset_only: dict[str, np.ndarray] = {}
    for name in predictors:
        spec = data.spec(name)
        if spec.kind == "numeric":
            numeric_like[name] = data.columns[name].astype(float)
        elif name in quantifications:
            numeric_like[name] = quantifications[name].values_for(data.labels(name))
        else:
            subset_only[name] = data.columns[name].astype(np.int64)
    leaf_predictors = [v for v in predictors if v in numeric_like]

    root_sd = _pop_sd(y)
    sd_floor = sd_fraction * root_sd

    def grow(indices: np.ndarray) -> TreeNode:
        y_node = y[indices]
        node_n = indices.size
        node_sd = _pop_sd(y_node)

        def leaf() -> TreeNode:
            model = _leaf_fit(
                data.take(indices),
                response,
                {v: numeric_like[v][indices] for v in leaf_predictors},
                quantifications,
                response_transform,
            )
            return TreeNode(n=node_n, sd=node_sd, model=model)

        if node_sd < sd_floor or node_n < 2 * min_leaf_size:
            return leaf()

        best_sdr = 0.0
        best = None  # (variable, threshold, left_labels, right_labels, mask)
        for name in predictors:
            if name in numeric_like:
                vals = numeric_like[name][indices]
                for threshold in _split_candidates_numeric(vals):
                    mask = vals < threshold
                    nl = int(mask.sum())
                    nr = node_n - nl
                    if nl < min_leaf_size or nr < min_leaf_size:
                        continue
                    sdr = node_sd - (
                        nl / node_n * _pop_sd(y_node[mask])
                        + nr / node_n * _pop_sd(y_node[~mask])
                    )
                    if sdr > best_sdr:
                        best_sdr = sdr
                        best = (name, float(threshold), None, None, mask)
            else:
                codes = subset_only[name][indices]
                order = _category_order(codes, y_node)
                spec = data.spec(name)
                for j in range(1, len(order)):
                    left_codes = order[:j]
                    mask = np.isin(codes, left_codes)
                    nl = int(mask.sum())
                    nr = node_n - nl
                    if nl < min_leaf_size or nr < min_leaf_size:
                        continue
                    sdr = node_sd - (
                        nl / node_n * _pop_sd(y_node[mask])
                        + nr / node_n * _pop_sd(y_node[~mask])
                    )
                    if sdr > best_sdr:
                        left_labels = tuple(spec.categories[c] for c in sorted(left_codes))
                        right_labels = tuple(
                            spec.categories[c] for c in sorted(set(order) - set(left_codes))
                        )
                        best_sdr = sdr
                        best = (name, None, left_labels, right_labels, mask)

        if best is None:
            return leaf()
        name, threshold, left_labels, right_labels, mask = best
        return TreeNode(
            n=node_n,
            sd=node_sd,
            variable=name,
            threshold=threshold,
            left_labels=left_labels,
            right_labels=right_labels,
            sd_reduction=best_sdr,
            left=grow(indices[mask]),
            right=grow(indices[~mask]),
        )

    root = grow(np.arange(n))
    return ModelTree(
        response=response,
        response_transform=response_transform,
        predictors=tuple(predictors),
        root=root,
        min_leaf_size=min_leaf_size,
        sd_floor=sd_floor,
    )


def predict_tree(
    tree: ModelTree,
    row: dict,
    quantifications: dict[str, Quantification] | None = None,
    back_transform: bool = False,
) -> float:
    """Route one row to its leaf and evaluate the leaf model.

    Split variables are read from ``row`` as numeric values (numeric or
    quantified columns) or labels (subset splits).  Labels unseen at a
    subset split raise DataError.
    """
    quantifications = quantifications or {}
    node = tree.root
    while not node.is_leaf:
        if node.variable not in row:
            raise DataError(f"row is missing split variable {node.variable!r}")
        raw = row[node.variable]
        if node.threshold is not None:
            if isinstance(raw, str):
                quant = quantifications.get(node.variable)
                if quant is None or raw not in quant.mapping:
                    raise DataError(
                        f"no quantification value for category {raw!r} "
                        f"of {node.variable!r}"
                    )
                value = float(quant.mapping[raw])
            else:
                value = float(raw)
            node = node.left if value < node.threshold else node.right
        else:
            if not isinstance(raw, str):
                raise DataError(
                    f"split on {node.variable!r} needs a category label, got {raw!r}"
                )
            if raw in node.left_labels:
                node = node.left
            elif raw in node.right_labels:
                node = node.right
            else:
                raise DataError(
                    f"category {raw!r} of {node.variable!r} was not seen at this split"
                )
    value = model_predict(node.model, quantifications, row, back_transform=False)
    if back_transform:
        return back_transform_value(value, tree.response_transform)
    return value
