"""Metric screening: rank correlation, one-way ANOVA, Tukey HSD, merging.

These tests decide which candidate predictors carry signal before any model
is fit.  Numeric predictors are screened by Spearman rank correlation
against the response; categorical ones by one-way ANOVA with Tukey HSD
pairwise follow-up, and statistically indistinguishable categories can then
be merged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ._errors import ConfigError, DataError
from .dataset import Dataset, VariableSpec
from .numerics import f_cdf, studentized_range_cdf, t_cdf
from .transform import rank_average

__all__ = [
    "SpearmanResult",
    "AnovaResult",
    "TukeyPair",
    "ScreeningReport",
    "spearman",
    "anova_oneway",
    "tukey_hsd",
    "merge_categories",
    "apply_category_merge",
    "screen_dataset",
]


@dataclass(frozen=True)
class SpearmanResult:
    rho: float
    p_value: float
    n: int


def spearman(x, y, missing_x=None, missing_y=None) -> SpearmanResult:
    """Spearman rank correlation with tie-averaged ranks.

    Pairs with a missing value on either side are dropped.  The two-sided p
    comes from t = rho * sqrt((n - 2) / (1 - rho^2)) against t(n - 2);
    rho = +-1 reports p = 0.
    """
    xv = np.asarray(x, dtype=float)
    yv = np.asarray(y, dtype=float)
    if xv.shape != yv.shape or xv.ndim != 1:
        raise DataError("spearman expects two 1-d arrays of equal length")
    keep = np.isfinite(xv) & np.isfinite(yv)
    if missing_x is not None:
        keep &= ~np.asarray(missing_x, dtype=bool)
    if missing_y is not None:
        keep &= ~np.asarray(missing_y, dtype=bool)
    xv, yv = xv[keep], yv[keep]
    n = xv.size
    if n < 3:
        raise DataError(f"spearman needs at least 3 complete pairs, got {n}")
    rx = rank_average(xv)
    ry = rank_average(yv)
    sx = rx - rx.mean()
    sy = ry - ry.mean()
    denom = math.sqrt(float(sx @ sx) * float(sy @ sy))
    if denom == 0.0:
        raise DataError("spearman undefined: a ranked column has zero variance")
    rho = float(sx @ sy) / denom
    rho = max(-1.0, min(1.0, rho))
    if abs(rho) == 1.0:
        p = 0.0
    else:
        t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
        p = 2.0 * (1.0 - t_cdf(abs(t), n - 2))
    return SpearmanResult(rho=rho, p_value=p, n=n)


@dataclass(frozen=True)
class AnovaResult:
    variable: str
    f_value: float
    df_between: int
    df_within: int
    p_value: float
    group_counts: dict[str, int]
    group_means: dict[str, float]


def _grouped(response, groups, missing_response=None, missing_group=None):
    """Split response values by group key, dropping incomplete pairs."""
    yv = np.asarray(response, dtype=float)
    keep = np.isfinite(yv)
    if missing_response is not None:
        keep &= ~np.asarray(missing_response, dtype=bool)
    if missing_group is not None:
        keep &= ~np.asarray(missing_group, dtype=bool)
    out: dict = {}
    for value, yi, flag in zip(groups, yv, keep):
        if flag:
            out.setdefault(value, []).append(yi)
    return {k: np.asarray(v) for k, v in out.items()}


def anova_oneway(
    response, groups, variable: str = "", missing_response=None, missing_group=None
) -> AnovaResult:
    """One-way fixed-effects ANOVA of a numeric response across groups.

    ``groups`` is a sequence of group keys aligned with ``response``.  A
    zero within-group sum of squares with nonzero between-group variation
    reports F = +inf and p = 0.
    """
    by_group = _grouped(response, groups, missing_response, missing_group)
    if len(by_group) < 2:
        raise DataError(f"ANOVA needs at least 2 non-empty groups, got {len(by_group)}")
    n = sum(v.size for v in by_group.values())
    k = len(by_group)
    if n <= k:
        raise DataError(f"ANOVA needs more observations ({n}) than groups ({k})")
    grand = sum(float(v.sum()) for v in by_group.values()) / n
    ssb = sum(v.size * (float(v.mean()) - grand) ** 2 for v in by_group.values())
    ssw = sum(float(((v - v.mean()) ** 2).sum()) for v in by_group.values())
    df_b, df_w = k - 1, n - k
    if ssw == 0.0:
        f = math.inf if ssb > 0.0 else 0.0
        p = 0.0 if ssb > 0.0 else 1.0
    else:
        f = (ssb / df_b) / (ssw / df_w)
        p = 1.0 - f_cdf(f, df_b, df_w)
    return AnovaResult(
        variable=variable,
        f_value=f,
        df_between=df_b,
        df_within=df_w,
        p_value=p,
        group_counts={str(g): int(v.size) for g, v in by_group.items()},
        group_means={str(g): float(v.mean()) for g, v in by_group.items()},
    )


@dataclass(frozen=True)
class TukeyPair:
    group_i: str
    group_j: str
    mean_difference: float
    p_adjusted: float
    significant: bool


def tukey_hsd(
    response,
    groups,
    alpha: float = 0.05,
    missing_response=None,
    missing_group=None,
) -> list[TukeyPair]:
    """Tukey HSD pairwise comparisons (Tukey-Kramer for unequal sizes).

    For each unordered pair, q = |mean_i - mean_j| / sqrt((MSW / 2) *
    (1/n_i + 1/n_j)) and the adjusted p is the studentized-range upper tail
    with k = number of groups and the ANOVA within-group df.
    """
    by_group = _grouped(response, groups, missing_response, missing_group)
    names = list(by_group)
    k = len(names)
    if k < 2:
        raise DataError(f"Tukey HSD needs at least 2 non-empty groups, got {k}")
    n = sum(v.size for v in by_group.values())
    if n <= k:
        raise DataError(f"Tukey HSD needs more observations ({n}) than groups ({k})")
    ssw = sum(float(((v - v.mean()) ** 2).sum()) for v in by_group.values())
    df_w = n - k
    msw = ssw / df_w
    pairs = []
    for a in range(k):
        for b in range(a + 1, k):
            gi, gj = names[a], names[b]
            vi, vj = by_group[gi], by_group[gj]
            diff = float(vi.mean()) - float(vj.mean())
            if msw == 0.0:
                p_adj = 1.0 if diff == 0.0 else 0.0
            else:
                q = abs(diff) / math.sqrt((msw / 2.0) * (1.0 / vi.size + 1.0 / vj.size))
                p_adj = 1.0 - studentized_range_cdf(q, k, df_w)
                p_adj = min(max(p_adj, 0.0), 1.0)
            pairs.append(
                TukeyPair(
                    group_i=str(gi),
                    group_j=str(gj),
                    mean_difference=diff,
                    p_adjusted=p_adj,
                    significant=p_adj < alpha,
                )
            )
    return pairs


# ---------------------------------------------------------------------------
# category merging
# ---------------------------------------------------------------------------


def merge_categories(
    var: VariableSpec, pairs_to_merge: Sequence[tuple[str, str]]
) -> VariableSpec:
    """Merge the given label pairs into single categories.

    Each pair must name two distinct existing labels, and no label may
    appear in more than one pair (overlapping clusters are rejected).  The
    merged label is "<first>+<second>" and sits at the earlier position of
    its two pieces; the relative order of everything else is unchanged.
    A result with two categories left becomes kind 'binary'.
    """
    if not var.is_categorical:
        raise DataError(f"cannot merge categories of numeric variable {var.name!r}")
    seen: set[str] = set()
    for a, b in pairs_to_merge:
        if a == b:
            raise DataError(f"merge pair ({a!r}, {b!r}) names the same label twice")
        for label in (a, b):
            if label not in var.categories:
                raise DataError(f"merge references unknown category {label!r} of {var.name!r}")
            if label in seen:
                raise DataError(f"overlapping merge clusters: label {label!r} appears twice")
            seen.add(label)
    merged_name = {}
    drops = set()
    for a, b in pairs_to_merge:
        ia, ib = var.categories.index(a), var.categories.index(b)
        first, second = (a, b) if ia <= ib else (b, a)
        merged_name[first] = f"{a}+{b}"
        drops.add(second)
    new_categories = []
    for label in var.categories:
        if label in drops:
            continue
        new_categories.append(merged_name.get(label, label))
    if len(new_categories) < 2:
        raise DataError(f"merging would leave {var.name!r} with fewer than 2 categories")
    kind = "binary" if len(new_categories) == 2 else "categorical"
    return replace(var, kind=kind, categories=tuple(new_categories))


def apply_category_merge(
    ds: Dataset, variable: str, pairs_to_merge: Sequence[tuple[str, str]]
) -> Dataset:
    """Dataset counterpart of merge_categories: recodes the column in place.

    Category frequencies of merged labels add; every other label keeps its
    rows.  Row count and order are unchanged.
    """
    old = ds.spec(variable)
    new = merge_categories(old, pairs_to_merge)
    # map every old label to its new code
    target_of = {}
    for a, b in pairs_to_merge:
        target_of[a] = f"{a}+{b}"
        target_of[b] = f"{a}+{b}"
    code_map = {}
    for i, label in enumerate(old.categories):
        code_map[i] = new.categories.index(target_of.get(label, label))
    codes = ds.columns[variable]
    recoded = np.array([code_map[c] if c >= 0 else -1 for c in codes], dtype=np.int32)
    schema = tuple(new if s.name == variable else s for s in ds.schema)
    columns = dict(ds.columns)
    columns[variable] = recoded
    return Dataset(schema, columns, dict(ds.missing), metadata=ds.metadata)


# ---------------------------------------------------------------------------
# dataset-level screening
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScreeningReport:
    """All screening results for one response against candidate predictors."""

    response: str
    alpha: float
    correlations: dict[str, SpearmanResult]
    anova: dict[str, AnovaResult]
    tukey: dict[str, list[TukeyPair]]

    def significant_predictors(self) -> list[str]:
        names = []
        for name, res in self.correlations.items():
            if res.p_value < self.alpha and name not in names:
                names.append(name)
        for name, res in self.anova.items():
            if res.p_value < self.alpha and name not in names:
                names.append(name)
        return names

    def to_dict(self) -> dict:
        return {
            "response": self.response,
            "alpha": self.alpha,
            "correlations": {
                k: {"rho": v.rho, "p_value": v.p_value, "n": v.n}
                for k, v in self.correlations.items()
            },
            "anova": {
                k: {
                    "f_value": v.f_value,
                    "df_between": v.df_between,
                    "df_within": v.df_within,
                    "p_value": v.p_value,
                    "group_counts": v.group_counts,
                    "group_means": v.group_means,
                }
                for k, v in self.anova.items()
            },
            "multiple_comparisons": {
                k: [
                    {
                        "group_i": p.group_i,
                        "group_j": p.group_j,
                        "mean_difference": p.mean_difference,
                        "p_adjusted": p.p_adjusted,
                        "significant": p.significant,
                    }
                    for p in pairs
                ]
                for k, pairs in self.tukey.items()
            },
        }


def screen_dataset(
    ds: Dataset,
    response: str,
    predictors: Sequence[str],
    alpha: float = 0.05,
    dual_treatment: Sequence[str] = (),
    quantifications: dict[str, dict[str, float]] | None = None,
) -> ScreeningReport:
    """Run the full screening battery for one response.

    Numeric predictors get Spearman.  Categorical predictors get ANOVA, plus
    Tukey HSD when at least 3 groups are observed.  Variables listed in
    ``dual_treatment`` are screened both ways: a categorical one contributes
    a Spearman on its quantified values (mapping from ``quantifications``,
    defaulting to labels parsed as numbers), a numeric one contributes an
    ANOVA grouped by its distinct observed values.
    """
    quantifications = quantifications or {}
    resp_spec = ds.spec(response)
    if resp_spec.is_categorical:
        raise DataError(f"screening response {response!r} must be numeric")
    y = ds.columns[response]
    my = ds.missing[response]

    correlations: dict[str, SpearmanResult] = {}
    anova: dict[str, AnovaResult] = {}
    tukey: dict[str, list[TukeyPair]] = {}

    for name in predictors:
        spec = ds.spec(name)
        dual = name in dual_treatment
        if spec.kind == "numeric":
            correlations[name] = spearman(
                ds.columns[name], y, ds.missing[name], my
            )
            if dual:
                keys = [None if m else float(v) for v, m in zip(ds.columns[name], ds.missing[name])]
                anova[name] = anova_oneway(
                    y, keys, variable=name,
                    missing_response=my,
                    missing_group=ds.missing[name],
                )
        else:
            labels = ds.labels(name)
            result = anova_oneway(
                y, labels, variable=name,
                missing_response=my,
                missing_group=ds.missing[name],
            )
            anova[name] = result
            if len(result.group_counts) >= 3:
                tukey[name] = tukey_hsd(
                    y, labels, alpha=alpha,
                    missing_response=my,
                    missing_group=ds.missing[name],
                )
            if dual:
                mapping = quantifications.get(name)
                if mapping is None:
                    try:
                        mapping = {c: float(c) for c in spec.categories}
                    except ValueError:
                        raise ConfigError(
                            f"dual treatment of {name!r} needs a quantification "
                            f"(labels are not numeric)"
                        ) from None
                vals = np.array(
                    [mapping[l] if l is not None else np.nan for l in labels]
                )
                correlations[name] = spearman(vals, y, ds.missing[name], my)
    return ScreeningReport(
        response=response,
        alpha=alpha,
        correlations=correlations,
        anova=anova,
        tukey=tukey,
    )
