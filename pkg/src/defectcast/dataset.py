"""Typed tabular datasets: CSV loading, filtering, and summaries.

A Dataset couples a declared schema (variable name, role, kind, transform,
category order) with immutable column arrays.  Numeric columns are float64
with NaN at missing cells; categorical columns are int32 category codes with
-1 at missing cells.  The empty CSV field is the only missing marker.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._errors import ConfigError, DataError

ROLES = ("response", "predictor", "identifier", "excluded")
KINDS = ("numeric", "categorical", "binary")
TRANSFORMS = ("none", "ln", "ln1p")

__all__ = [
    "VariableSpec",
    "Dataset",
    "FilterRule",
    "SummaryReport",
    "load_csv",
    "serialize_csv",
    "apply_filters",
    "listwise_complete",
    "summarize",
]


@dataclass(frozen=True)
class VariableSpec:
    """Declared properties of one dataset variable."""

    name: str
    role: str
    kind: str
    transform: str = "none"
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.name:
            raise ConfigError("variable name must be non-empty")
        if self.role not in ROLES:
            raise ConfigError(f"unknown role {self.role!r} for variable {self.name!r}")
        if self.kind not in KINDS:
            raise ConfigError(f"unknown kind {self.kind!r} for variable {self.name!r}")
        if self.transform not in TRANSFORMS:
            raise ConfigError(
                f"unknown transform {self.transform!r} for variable {self.name!r}"
            )
        object.__setattr__(self, "categories", tuple(self.categories))
        if self.kind == "numeric":
            if self.categories:
                raise ConfigError(f"numeric variable {self.name!r} cannot declare categories")
        else:
            if self.transform != "none":
                raise ConfigError(
                    f"transform {self.transform!r} is only valid on numeric variables "
                    f"({self.name!r} is {self.kind})"
                )
            if len(set(self.categories)) != len(self.categories):
                raise ConfigError(f"duplicate categories on variable {self.name!r}")
            # an empty list means: accept labels in first-seen order at load time
            if self.categories:
                if self.kind == "binary" and len(self.categories) != 2:
                    raise ConfigError(
                        f"binary variable {self.name!r} must declare exactly 2 categories"
                    )
                if self.kind == "categorical" and len(self.categories) < 2:
                    raise ConfigError(
                        f"categorical variable {self.name!r} needs at least 2 categories"
                    )

    @property
    def is_categorical(self) -> bool:
        return self.kind in ("categorical", "binary")


def _check_schema(schema: Sequence[VariableSpec]) -> tuple[VariableSpec, ...]:
    specs = tuple(schema)
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate variable names in schema")
    responses = [s.name for s in specs if s.role == "response"]
    if len(responses) > 1:
        raise ConfigError(f"schema declares multiple responses: {responses}")
    return specs


class Dataset:
    """Immutable columnar dataset bound to a schema.

    ``columns[name]`` is float64 for numeric variables and int32 category
    codes for categorical/binary ones; ``missing[name]`` is a boolean mask.
    Arrays are frozen after construction.  ``metadata`` carries optional
    provenance (for example from the synthetic generator) and is excluded
    from equality.
    """

    def __init__(
        self,
        schema: Sequence[VariableSpec],
        columns: dict[str, np.ndarray],
        missing: dict[str, np.ndarray],
        metadata: dict | None = None,
    ):
        self.schema = _check_schema(schema)
        self._by_name = {s.name: s for s in self.schema}
        if set(columns) != set(self._by_name) or set(missing) != set(self._by_name):
            raise DataError("columns/missing keys must match schema names exactly")
        lengths = {arr.shape[0] for arr in columns.values()} | {
            arr.shape[0] for arr in missing.values()
        }
        if len(lengths) > 1:
            raise DataError(f"ragged columns: lengths {sorted(lengths)}")
        self.row_count = lengths.pop() if lengths else 0
        self.columns = {}
        self.missing = {}
        for spec in self.schema:
            dtype = np.int32 if spec.is_categorical else np.float64
            col = np.asarray(columns[spec.name], dtype=dtype).copy()
            miss = np.asarray(missing[spec.name], dtype=bool).copy()
            col.flags.writeable = False
            miss.flags.writeable = False
            self.columns[spec.name] = col
            self.missing[spec.name] = miss
        self.metadata = metadata

    def spec(self, name: str) -> VariableSpec:
        try:
            return self._by_name[name]
        except KeyError:
            raise DataError(f"unknown variable {name!r}") from None

    @property
    def variable_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.schema)

    def values(self, name: str) -> np.ndarray:
        self.spec(name)
        return self.columns[name]

    def labels(self, name: str) -> list[str | None]:
        """Decoded category labels for one categorical column (None = missing)."""
        spec = self.spec(name)
        if not spec.is_categorical:
            raise DataError(f"variable {name!r} is numeric, not categorical")
        codes = self.columns[name]
        return [spec.categories[c] if c >= 0 else None for c in codes]

    def take(self, indices) -> "Dataset":
        """Row subset (or reorder) preserving schema and category order."""
        idx = np.asarray(indices, dtype=np.int64)
        cols = {name: arr[idx] for name, arr in self.columns.items()}
        miss = {name: arr[idx] for name, arr in self.missing.items()}
        return Dataset(self.schema, cols, miss, metadata=self.metadata)

    def with_schema(self, schema: Sequence[VariableSpec]) -> "Dataset":
        return Dataset(schema, dict(self.columns), dict(self.missing), self.metadata)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        if self.schema != other.schema or self.row_count != other.row_count:
            return False
        for name in self.columns:
            a, b = self.columns[name], other.columns[name]
            ma, mb = self.missing[name], other.missing[name]
            if not np.array_equal(ma, mb):
                return False
            if not np.array_equal(a[~ma], b[~mb]):
                return False
        return True

    def __repr__(self) -> str:
        return f"Dataset({self.row_count} rows, {len(self.schema)} variables)"


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------


def load_csv(source, schema: Sequence[VariableSpec]) -> Dataset:
    """Read an RFC 4180 CSV (UTF-8, header row required) against a schema.

    Empty fields are missing.  Categorical labels must come from the declared
    category list; a variable declared with an empty list accepts labels in
    first-seen order instead.  Columns present in the file but absent from
    the schema are ignored.
    """
    specs = _check_schema(schema)
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8", newline="") as handle:
            return _load_rows(csv.reader(handle), specs)
    if isinstance(source, bytes):
        return _load_rows(csv.reader(io.StringIO(source.decode("utf-8"), newline="")), specs)
    return _load_rows(csv.reader(source), specs)


def _load_rows(reader, specs: tuple[VariableSpec, ...]) -> Dataset:
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("CSV has no header row") from None
    positions: dict[str, int] = {}
    for i, name in enumerate(header):
        if name in positions and any(s.name == name for s in specs):
            raise DataError(f"duplicate CSV column {name!r}")
        positions.setdefault(name, i)
    for spec in specs:
        if spec.name not in positions:
            raise DataError(f"CSV is missing required column {spec.name!r}")

    open_coded = {s.name for s in specs if s.is_categorical and not s.categories}
    categories: dict[str, list[str]] = {
        s.name: list(s.categories) for s in specs if s.is_categorical
    }
    code_of: dict[str, dict[str, int]] = {
        name: {label: i for i, label in enumerate(labels)}
        for name, labels in categories.items()
    }

    raw: dict[str, list] = {s.name: [] for s in specs}
    miss: dict[str, list] = {s.name: [] for s in specs}
    width = len(header)
    for row_number, row in enumerate(reader, start=1):
        if len(row) != width:
            raise DataError(
                f"malformed CSV at data row {row_number}: "
                f"expected {width} fields, got {len(row)}"
            )
        for spec in specs:
            cell = row[positions[spec.name]]
            if cell == "":
                raw[spec.name].append(math.nan if spec.kind == "numeric" else -1)
                miss[spec.name].append(True)
                continue
            miss[spec.name].append(False)
            if spec.kind == "numeric":
                try:
                    raw[spec.name].append(float(cell))
                except ValueError:
                    raise DataError(
                        f"non-numeric value {cell!r} for {spec.name!r} "
                        f"at data row {row_number}"
                    ) from None
            else:
                codes = code_of[spec.name]
                if cell not in codes:
                    if spec.name not in open_coded:
                        raise DataError(
                            f"unknown category {cell!r} for {spec.name!r} "
                            f"at data row {row_number}"
                        )
                    if spec.kind == "binary" and len(categories[spec.name]) >= 2:
                        raise DataError(
                            f"binary variable {spec.name!r} saw a third label {cell!r} "
                            f"at data row {row_number}"
                        )
                    codes[cell] = len(categories[spec.name])
                    categories[spec.name].append(cell)
                raw[spec.name].append(codes[cell])

    final_specs = []
    for spec in specs:
        if spec.is_categorical:
            found = tuple(categories[spec.name])
            if spec.kind == "binary" and len(found) != 2:
                raise DataError(
                    f"binary variable {spec.name!r} has {len(found)} observed "
                    f"categories, needs exactly 2"
                )
            if spec.kind == "categorical" and len(found) < 2:
                raise DataError(
                    f"categorical variable {spec.name!r} has {len(found)} observed "
                    f"categories, needs at least 2"
                )
            final_specs.append(replace(spec, categories=found))
        else:
            final_specs.append(spec)

    columns = {
        s.name: np.asarray(raw[s.name], dtype=np.int32 if s.is_categorical else np.float64)
        for s in final_specs
    }
    missing = {s.name: np.asarray(miss[s.name], dtype=bool) for s in final_specs}
    return Dataset(final_specs, columns, missing)


def serialize_csv(ds: Dataset, destination) -> None:
    """Write a dataset back to CSV; floats use repr so reloads are lossless."""

    def _write(handle):
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(ds.variable_names)
        decoded = {}
        for spec in ds.schema:
            if spec.is_categorical:
                decoded[spec.name] = ds.labels(spec.name)
        for i in range(ds.row_count):
            row = []
            for spec in ds.schema:
                if ds.missing[spec.name][i]:
                    row.append("")
                elif spec.is_categorical:
                    row.append(decoded[spec.name][i])
                else:
                    row.append(repr(float(ds.columns[spec.name][i])))
            writer.writerow(row)

    if isinstance(destination, (str, Path)):
        with open(destination, "w", encoding="utf-8", newline="") as handle:
            _write(handle)
    else:
        _write(destination)


# ---------------------------------------------------------------------------
# filters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FilterRule:
    """One row predicate; rules in a list are conjoined.

    A missing cell never satisfies ``in_set`` or ``range``.
    """

    kind: str
    variable: str
    labels: tuple[str, ...] = ()
    low: float | None = None
    high: float | None = None

    @classmethod
    def in_set(cls, variable: str, labels: Iterable[str]) -> "FilterRule":
        return cls("in_set", variable, labels=tuple(labels))

    @classmethod
    def non_missing(cls, variable: str) -> "FilterRule":
        return cls("non_missing", variable)

    @classmethod
    def value_range(
        cls, variable: str, low: float | None = None, high: float | None = None
    ) -> "FilterRule":
        return cls("range", variable, low=low, high=high)

    def __post_init__(self):
        if self.kind not in ("in_set", "non_missing", "range"):
            raise ConfigError(f"unknown filter kind {self.kind!r}")
        object.__setattr__(self, "labels", tuple(self.labels))
        if self.kind == "in_set" and not self.labels:
            raise ConfigError(f"in_set filter on {self.variable!r} has no labels")
        if self.kind == "range" and self.low is None and self.high is None:
            raise ConfigError(f"range filter on {self.variable!r} has no bounds")


def _rule_mask(ds: Dataset, rule: FilterRule) -> np.ndarray:
    if rule.variable not in ds.variable_names:
        raise ConfigError(f"filter references unknown variable {rule.variable!r}")
    spec = ds.spec(rule.variable)
    present = ~ds.missing[rule.variable]
    if rule.kind == "non_missing":
        return present
    if rule.kind == "in_set":
        if not spec.is_categorical:
            raise ConfigError(f"in_set filter needs a categorical variable, got {rule.variable!r}")
        unknown = [l for l in rule.labels if l not in spec.categories]
        if unknown:
            raise ConfigError(
                f"filter on {rule.variable!r} references unknown categories {unknown}"
            )
        wanted = {spec.categories.index(l) for l in rule.labels}
        selected = np.isin(ds.columns[rule.variable], sorted(wanted))
        return present & selected
    # range, bounds inclusive
    if spec.is_categorical:
        raise ConfigError(f"range filter needs a numeric variable, got {rule.variable!r}")
    vals = ds.columns[rule.variable]
    mask = present.copy()
    with np.errstate(invalid="ignore"):
        if rule.low is not None:
            mask &= vals >= rule.low
        if rule.high is not None:
            mask &= vals <= rule.high
    return mask


def apply_filters(ds: Dataset, rules: Sequence[FilterRule]) -> Dataset:
    """Keep exactly the rows satisfying every rule; row order is preserved."""
    mask = np.ones(ds.row_count, dtype=bool)
    for rule in rules:
        mask &= _rule_mask(ds, rule)
    return ds.take(np.flatnonzero(mask))


def listwise_complete(ds: Dataset, variables: Sequence[str]) -> Dataset:
    """Rows with no missing value in any of the given variables."""
    mask = np.ones(ds.row_count, dtype=bool)
    for name in variables:
        ds.spec(name)
        mask &= ~ds.missing[name]
    return ds.take(np.flatnonzero(mask))


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SummaryReport:
    row_count: int
    variables: dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"row_count": self.row_count, "variables": self.variables}


def sample_sd(values: np.ndarray) -> float:
    """Sample standard deviation (n - 1 divisor); 0.0 when n < 2."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return 0.0
    return float(np.sqrt(np.sum((v - v.mean()) ** 2) / (v.size - 1)))


def summarize(ds: Dataset) -> SummaryReport:
    """Per-variable descriptive statistics (sample sd) or frequency tables."""
    out: dict[str, dict] = {}
    for spec in ds.schema:
        present = ~ds.missing[spec.name]
        entry: dict = {
            "role": spec.role,
            "kind": spec.kind,
            "n": int(present.sum()),
            "n_missing": int((~present).sum()),
        }
        if spec.kind == "numeric":
            vals = ds.columns[spec.name][present]
            if vals.size:
                entry.update(
                    mean=float(vals.mean()),
                    sd=sample_sd(vals),
                    min=float(vals.min()),
                    max=float(vals.max()),
                )
        else:
            codes = ds.columns[spec.name][present]
            entry["frequencies"] = {
                label: int(np.count_nonzero(codes == i))
                for i, label in enumerate(spec.categories)
            }
        out[spec.name] = entry
    return SummaryReport(row_count=ds.row_count, variables=out)
