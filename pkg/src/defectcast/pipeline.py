"""Batch pipeline: configuration, stages, and report assembly.

A JSON config drives six stages (prepare, screen, tree, fit, recalibrate,
evaluate) plus a `synth` stage that persists generated data.  Stages are
file-mediated: each one reads the artifacts earlier stages wrote into the
output directory (falling back to recomputing them in memory when absent),
so running stages one at a time composes to exactly the monolithic run.

Every output file is written atomically (temp + rename) and depends only
on (config bytes, data bytes, seed): no timestamps, no environment leaks.
Reports carry a provenance block with the tool version, a hash of the
effective config, and the master seed.
"""

from __future__ import annotations

import csv
import hashlib
import importlib.resources
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from ._errors import ConfigError, DataError, DefectcastError
from .dataset import (
    Dataset,
    FilterRule,
    VariableSpec,
    apply_filters,
    listwise_complete,
    load_csv,
    serialize_csv,
    summarize,
)
from .evaluation import (
    GeneratorConfig,
    ModelingPlan,
    ReferenceCoefficients,
    cross_validate,
    generate_synthetic,
    random_split_experiment,
    resubstitution_experiment,
)
from .modeltree import fit_model_tree
from .recalibration import (
    Nfa,
    RecalibrationConfig,
    init_nfa,
    recalibrated_predict,
    train_recalibration,
)
from .regression import (
    LinearModel,
    Quantification,
    back_transform_value,
    catreg_fit,
    model_predict,
    ols_fit,
    stepwise_fit,
)
from .screening import apply_category_merge, screen_dataset
from .transform import apply_schema_transforms, qq_normal

__all__ = [
    "STAGES",
    "PipelineConfig",
    "load_config",
    "run_stage",
    "run_pipeline",
    "render_summary",
]

STAGES = ("synth", "prepare", "screen", "tree", "fit", "recalibrate", "evaluate")

# sections each stage contributes to report.json
STAGE_SECTIONS = {
    "synth": ("synthetic_data",),
    "prepare": ("data_preparation", "normality"),
    "screen": ("rank_correlations", "group_screening"),
    "tree": ("model_tree",),
    "fit": ("optimal_scaling", "regression", "stepwise"),
    "recalibrate": ("recalibration",),
    "evaluate": ("resubstitution", "cross_validation", "random_splits"),
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    """Validated pipeline configuration plus the raw dict it came from."""

    raw: dict
    data_path: str | None
    synthetic: GeneratorConfig | None
    schema: tuple[VariableSpec, ...] | None
    filters: tuple[FilterRule, ...]
    merges: tuple[tuple[str, tuple[tuple[str, str], ...]], ...]
    alpha: float
    dual_treatment: tuple[str, ...]
    tree_enabled: bool
    tree_min_leaf: int | None
    tree_sd_fraction: float
    response: str
    candidates: tuple[str, ...]
    stepwise: bool
    p_enter: float
    p_remove: float
    scaling: dict[str, str]
    recalibrate_enabled: bool
    recalibration: RecalibrationConfig
    k_values: tuple[int, ...]
    train_fractions: tuple[float, ...]
    repetitions: int
    pred_thresholds: tuple[float, ...]
    min_test_for_pred: int
    refit_regression: bool
    seed: int
    output_dir: str

    def config_hash(self) -> str:
        # where the reports land is not part of what was computed
        doc = {k: v for k, v in self.raw.items() if k != "output_dir"}
        canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def provenance(self) -> dict:
        source = (
            {"kind": "csv", "path": self.data_path}
            if self.data_path is not None
            else {"kind": "synthetic", "n": self.synthetic.n}
        )
        return {
            "tool_version": __version__,
            "config_hash": self.config_hash(),
            "seed": self.seed,
            "data_source": source,
        }


def _schema_document() -> dict:
    text = (
        importlib.resources.files("defectcast")
        .joinpath("config_schema.json")
        .read_text(encoding="utf-8")
    )
    return json.loads(text)


def _spec_from_dict(entry: dict) -> VariableSpec:
    return VariableSpec(
        name=entry["name"],
        role=entry.get("role", "predictor"),
        kind=entry.get("kind", "numeric"),
        transform=entry.get("transform", "none"),
        categories=tuple(entry.get("categories", ())),
    )


def _spec_to_dict(spec: VariableSpec) -> dict:
    return {
        "name": spec.name,
        "role": spec.role,
        "kind": spec.kind,
        "transform": spec.transform,
        "categories": list(spec.categories),
    }


def _generator_from_dict(entry: dict) -> GeneratorConfig:
    entry = dict(entry)
    coeffs = entry.pop("coefficients", None)
    kwargs = {}
    for key, value in entry.items():
        kwargs[key] = tuple(value) if isinstance(value, list) else value
    if coeffs is not None:
        kwargs["coefficients"] = ReferenceCoefficients(**coeffs)
    try:
        return GeneratorConfig(**kwargs)
    except TypeError as err:
        raise ConfigError(f"invalid synthetic data settings: {err}") from None


def _filter_from_dict(entry: dict) -> FilterRule:
    return FilterRule(
        kind=entry["kind"],
        variable=entry["variable"],
        labels=tuple(entry.get("labels", ())),
        low=entry.get("low"),
        high=entry.get("high"),
    )


def load_config(
    path: str | Path,
    data_override: str | None = None,
    out_override: str | None = None,
    seed_override: int | None = None,
) -> PipelineConfig:
    """Parse, schema-validate, and semantically check a config file.

    Command-line overrides are folded in before hashing, so the provenance
    hash always reflects the configuration that actually ran.  The output
    directory resolves as: --out flag, then DEFECTCAST_OUT, then the config
    value, then "out".
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from None

    import jsonschema

    try:
        jsonschema.validate(raw, _schema_document())
    except jsonschema.ValidationError as err:
        where = "/".join(str(p) for p in err.absolute_path) or "(top level)"
        raise ConfigError(f"config schema violation at {where}: {err.message}") from None

    if data_override is not None:
        raw = {**raw, "data": {"path": str(data_override)}}
    if seed_override is not None:
        raw = {**raw, "seed": int(seed_override)}
    env_out = os.environ.get("DEFECTCAST_OUT")
    if out_override is not None:
        raw = {**raw, "output_dir": str(out_override)}
    elif env_out:
        raw = {**raw, "output_dir": env_out}

    data = raw["data"]
    has_path = "path" in data
    has_synth = "synthetic" in data
    if has_path == has_synth:
        raise ConfigError("data section needs exactly one of 'path' or 'synthetic'")
    schema = None
    if "schema" in raw:
        schema = tuple(_spec_from_dict(e) for e in raw["schema"])
    if has_path and schema is None:
        raise ConfigError("a data path requires a 'schema' section")
    synthetic = _generator_from_dict(data["synthetic"]) if has_synth else None

    names = (
        {s.name for s in schema}
        if schema is not None
        else set(_synthetic_names(synthetic))
    )
    regression = raw.get("regression", {})
    response = regression.get("response", "defects")
    candidates = tuple(regression.get("candidates", ()))
    if not candidates:
        raise ConfigError("regression section must list candidate predictors")
    for name in (response, *candidates):
        if name not in names:
            raise ConfigError(f"config references unknown variable {name!r}")
    scaling = dict(regression.get("scaling", {}))
    for name, level in scaling.items():
        if name not in candidates:
            raise ConfigError(
                f"scaling level given for {name!r}, which is not a candidate"
            )
        if level not in ("nominal", "ordinal"):
            raise ConfigError(f"unknown scaling level {level!r} for {name!r}")

    filters = tuple(_filter_from_dict(e) for e in raw.get("filters", ()))
    for rule in filters:
        if rule.variable not in names:
            raise ConfigError(f"filter references unknown variable {rule.variable!r}")
    merges = []
    for entry in raw.get("merges", ()):
        if entry["variable"] not in names:
            raise ConfigError(
                f"merge references unknown variable {entry['variable']!r}"
            )
        merges.append(
            (entry["variable"], tuple((p[0], p[1]) for p in entry["pairs"]))
        )
    screening = raw.get("screening", {})
    for name in screening.get("dual_treatment", ()):
        if name not in names:
            raise ConfigError(
                f"dual treatment references unknown variable {name!r}"
            )

    tree = raw.get("tree", {})
    recal = raw.get("recalibration", {})
    recal_cfg = RecalibrationConfig(
        learning_rate=recal.get("learning_rate", 0.01),
        max_epochs=recal.get("max_epochs", 1000),
        tolerance=recal.get("tolerance", 1e-6),
        rate_halving=recal.get("rate_halving", True),
    )
    evaluation = raw.get("evaluation", {})
    k_values = tuple(evaluation.get("k_values", ()))
    fractions = tuple(evaluation.get("train_fractions", ()))

    stochastic = has_synth or bool(k_values) or bool(fractions)
    if stochastic and "seed" not in raw:
        raise ConfigError(
            "a master seed is required when synthetic data or evaluation is enabled"
        )

    return PipelineConfig(
        raw=raw,
        data_path=data.get("path"),
        synthetic=synthetic,
        schema=schema,
        filters=filters,
        merges=tuple(merges),
        alpha=screening.get("alpha", 0.05),
        dual_treatment=tuple(screening.get("dual_treatment", ())),
        tree_enabled=tree.get("enabled", True),
        tree_min_leaf=tree.get("min_leaf_size"),
        tree_sd_fraction=tree.get("sd_fraction", 0.05),
        response=response,
        candidates=candidates,
        stepwise=regression.get("stepwise", True),
        p_enter=regression.get("p_enter", 0.05),
        p_remove=regression.get("p_remove", 0.10),
        scaling=scaling,
        recalibrate_enabled=recal.get("enabled", True),
        recalibration=recal_cfg,
        k_values=k_values,
        train_fractions=fractions,
        repetitions=evaluation.get("repetitions", 10),
        pred_thresholds=tuple(evaluation.get("pred_thresholds", (0.25,))),
        min_test_for_pred=evaluation.get("min_test_for_pred", 10),
        refit_regression=evaluation.get("refit_regression", True),
        seed=raw.get("seed", 0),
        output_dir=raw.get("output_dir", "out"),
    )


def _synthetic_names(config: GeneratorConfig) -> list[str]:
    names = ["defects", "fp", "efforts", "max_team_size", "dev_type", "vaf"]
    names.extend(f"gsc_{j + 1:02d}" for j in range(14))
    return names


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _write_json(path: Path, payload: dict) -> None:
    _atomic_write_text(
        path, json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"
    )


def _read_json(path: Path) -> dict:
    return json.loads(path.read_text(encoding="utf-8"))


def _write_sections(out_dir: Path, stage: str, sections: dict) -> None:
    _write_json(out_dir / f"stage_{stage}.json", sections)


def _merge_report(out_dir: Path, cfg: PipelineConfig) -> dict:
    report = {"provenance": cfg.provenance()}
    for stage in STAGES:
        stage_file = out_dir / f"stage_{stage}.json"
        if stage_file.is_file():
            for key, value in _read_json(stage_file).items():
                report[key] = value
    _write_json(out_dir / "report.json", report)
    return report


# ---------------------------------------------------------------------------
# data resolution (file-mediated with in-memory fallback)
# ---------------------------------------------------------------------------


def _check_header(path: str | Path, schema: tuple[VariableSpec, ...]) -> None:
    # config-vs-data mismatch is a configuration fault, reported before load
    with open(path, "r", encoding="utf-8", newline="") as handle:
        try:
            header = next(csv.reader(handle))
        except StopIteration:
            raise DataError(f"data file {path} has no header row") from None
    present = set(header)
    for spec in schema:
        if spec.name not in present:
            raise ConfigError(
                f"config references column {spec.name!r} "
                f"which is missing from the data file"
            )


def _source_dataset(cfg: PipelineConfig, out_dir: Path) -> Dataset:
    if cfg.data_path is not None:
        path = Path(cfg.data_path)
        if not path.is_file():
            raise DataError(f"data file not found: {path}")
        _check_header(path, cfg.schema)
        return load_csv(path, cfg.schema)
    synth_csv = out_dir / "synthetic.csv"
    synth_schema = out_dir / "synthetic.schema.json"
    if synth_csv.is_file() and synth_schema.is_file():
        schema = tuple(_spec_from_dict(e) for e in _read_json(synth_schema))
        return load_csv(synth_csv, schema)
    return generate_synthetic(cfg.synthetic, cfg.seed)


def _prepare_in_memory(cfg: PipelineConfig, out_dir: Path):
    source = _source_dataset(cfg, out_dir)
    filtered = apply_filters(source, cfg.filters)
    for variable, pairs in cfg.merges:
        filtered = apply_category_merge(filtered, variable, pairs)
    prepared, applied = apply_schema_transforms(filtered)
    return source, filtered, prepared, applied


def _prepared_dataset(cfg: PipelineConfig, out_dir: Path) -> Dataset:
    csv_path = out_dir / "prepared.csv"
    schema_path = out_dir / "prepared.schema.json"
    if csv_path.is_file() and schema_path.is_file():
        schema = tuple(_spec_from_dict(e) for e in _read_json(schema_path))
        return load_csv(csv_path, schema)
    return _prepare_in_memory(cfg, out_dir)[2]


def _response_transform(cfg: PipelineConfig, out_dir: Path) -> str:
    """The declared transform of the response is the model scale."""
    if cfg.schema is not None:
        schema = cfg.schema
    else:
        schema_path = out_dir / "synthetic.schema.json"
        if schema_path.is_file():
            schema = tuple(_spec_from_dict(e) for e in _read_json(schema_path))
        else:
            schema = generate_synthetic(
                replace(cfg.synthetic, n=1), cfg.seed
            ).schema
    for spec in schema:
        if spec.name == cfg.response:
            return spec.transform
    raise ConfigError(f"response {cfg.response!r} missing from schema")


def _initial_quantifications(
    ds: Dataset, candidates, scaling
) -> dict[str, Quantification]:
    """Numeric-label categoricals start at their labels; other categorical
    candidates must either be binary (auto 0/1) or carry a scaling level so
    optimal scaling can place them."""
    quants: dict[str, Quantification] = {}
    for name in candidates:
        spec = ds.spec(name)
        if not spec.is_categorical:
            continue
        try:
            mapping = {label: float(label) for label in spec.categories}
        except ValueError:
            if len(spec.categories) == 2 or name in scaling:
                continue  # binary auto-coding, or optimal scaling will fill it
            raise ConfigError(
                f"categorical candidate {name!r} has non-numeric labels; "
                f"declare a scaling level for it"
            ) from None
        quants[name] = Quantification(name, mapping, source="initial")
    return quants


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def _stage_synth(cfg: PipelineConfig, out_dir: Path) -> dict:
    if cfg.synthetic is None:
        raise ConfigError("stage 'synth' needs a data.synthetic section")
    ds = generate_synthetic(cfg.synthetic, cfg.seed)
    serialize_csv(ds, out_dir / "synthetic.csv.tmp")
    os.replace(out_dir / "synthetic.csv.tmp", out_dir / "synthetic.csv")
    _write_json(
        out_dir / "synthetic.schema.json", [_spec_to_dict(s) for s in ds.schema]
    )
    meta = ds.metadata["generator"]
    return {
        "synthetic_data": {
            "rows": ds.row_count,
            "seed": meta["seed"],
            "achieved_spearman_fp_efforts": meta["achieved_spearman_fp_efforts"],
            "achieved_spearman_fp_team": meta["achieved_spearman_fp_team"],
            "dev_type_counts": meta["dev_type_counts"],
        }
    }


def _stage_prepare(cfg: PipelineConfig, out_dir: Path) -> dict:
    source, filtered, prepared, applied = _prepare_in_memory(cfg, out_dir)
    serialize_csv(prepared, out_dir / "prepared.csv.tmp")
    os.replace(out_dir / "prepared.csv.tmp", out_dir / "prepared.csv")
    _write_json(
        out_dir / "prepared.schema.json", [_spec_to_dict(s) for s in prepared.schema]
    )

    complete = listwise_complete(prepared, [cfg.response, *cfg.candidates])
    raw_response = filtered.columns[cfg.response]
    raw_missing = filtered.missing[cfg.response]
    qq_raw = qq_normal(raw_response, raw_missing)
    qq_model = qq_normal(prepared.columns[cfg.response], prepared.missing[cfg.response])
    lines = ["theoretical,ordered"]
    for t, o in zip(qq_model.theoretical, qq_model.ordered):
        lines.append(f"{float(t)!r},{float(o)!r}")
    _atomic_write_text(out_dir / "qq.csv", "\n".join(lines) + "\n")

    return {
        "data_preparation": {
            "rows_loaded": source.row_count,
            "rows_after_filters": filtered.row_count,
            "rows_complete": complete.row_count,
            "filters": [
                {
                    "kind": r.kind,
                    "variable": r.variable,
                    "labels": list(r.labels),
                    "low": r.low,
                    "high": r.high,
                }
                for r in cfg.filters
            ],
            "merges": [
                {"variable": v, "pairs": [list(p) for p in pairs]}
                for v, pairs in cfg.merges
            ],
            "applied_transforms": applied,
            "summary": summarize(prepared).to_dict(),
        },
        "normality": {
            "response": cfg.response,
            "qq_correlation_raw": qq_raw.correlation,
            "qq_correlation_transformed": qq_model.correlation,
            "n": qq_model.n,
        },
    }


def _stage_screen(cfg: PipelineConfig, out_dir: Path) -> dict:
    data = _prepared_dataset(cfg, out_dir)
    quants = _initial_quantifications(data, cfg.candidates, cfg.scaling)
    report = screen_dataset(
        data,
        cfg.response,
        cfg.candidates,
        alpha=cfg.alpha,
        dual_treatment=cfg.dual_treatment,
        quantifications={k: q.mapping for k, q in quants.items()},
    )
    payload = report.to_dict()
    return {
        "rank_correlations": {
            "response": cfg.response,
            "alpha": cfg.alpha,
            "correlations": payload["correlations"],
            "significant_predictors": report.significant_predictors(),
        },
        "group_screening": {
            "anova": payload["anova"],
            "multiple_comparisons": payload["multiple_comparisons"],
        },
    }


def _stage_tree(cfg: PipelineConfig, out_dir: Path) -> dict:
    if not cfg.tree_enabled:
        return {"model_tree": {"enabled": False}}
    data = _prepared_dataset(cfg, out_dir)
    quants = _initial_quantifications(data, cfg.candidates, cfg.scaling)
    transform = _response_transform(cfg, out_dir)
    tree = fit_model_tree(
        data,
        cfg.response,
        cfg.candidates,
        quantifications=quants,
        min_leaf_size=cfg.tree_min_leaf,
        sd_fraction=cfg.tree_sd_fraction,
        response_transform=transform,
    )
    text = tree.to_text()
    _atomic_write_text(out_dir / "tree.txt", text)
    return {
        "model_tree": {
            "enabled": True,
            "leaf_count": tree.leaf_count,
            "depth": tree.depth,
            "text": text,
            "structure": tree.to_dict(),
        }
    }


def _fit_models(cfg: PipelineConfig, out_dir: Path):
    data = _prepared_dataset(cfg, out_dir)
    transform = _response_transform(cfg, out_dir)
    quants = _initial_quantifications(data, cfg.candidates, cfg.scaling)

    scaling_section = {"enabled": bool(cfg.scaling)}
    if cfg.scaling:
        result = catreg_fit(
            data,
            cfg.response,
            cfg.candidates,
            scaling=cfg.scaling,
            response_transform=transform,
        )
        for quant in result.quantifications:
            quants[quant.variable] = quant
        scaling_section.update(
            {
                "levels": dict(cfg.scaling),
                "iterations": result.iterations,
                "r_squared": result.r_squared_path[-1],
                "r_squared_path": list(result.r_squared_path),
                "quantifications": {
                    q.variable: dict(q.mapping) for q in result.quantifications
                },
            }
        )

    full = ols_fit(
        data, cfg.response, cfg.candidates, quants, response_transform=transform
    )
    stepwise_section = {"enabled": cfg.stepwise}
    selected = full
    if cfg.stepwise:
        trace = stepwise_fit(
            data,
            cfg.response,
            cfg.candidates,
            p_enter=cfg.p_enter,
            p_remove=cfg.p_remove,
            quantifications=quants,
            response_transform=transform,
        )
        selected = trace.final_model
        stepwise_section.update(
            {
                "p_enter": cfg.p_enter,
                "p_remove": cfg.p_remove,
                "steps": [
                    {
                        "action": s.action,
                        "variable": s.variable,
                        "p_value": s.p_value,
                    }
                    for s in trace.steps
                ],
                "included": list(trace.included),
                "model": selected.to_dict(),
            }
        )
    return data, quants, full, selected, scaling_section, stepwise_section


def _stage_fit(cfg: PipelineConfig, out_dir: Path) -> dict:
    _, quants, full, selected, scaling_section, stepwise_section = _fit_models(
        cfg, out_dir
    )
    model_doc = {
        "provenance": cfg.provenance(),
        "model": selected.to_dict(),
        "full_model": full.to_dict(),
        "quantifications": {
            name: {"mapping": dict(q.mapping), "source": q.source}
            for name, q in quants.items()
        },
    }
    _write_json(out_dir / "model.json", model_doc)
    return {
        "optimal_scaling": scaling_section,
        "regression": {"full_model": full.to_dict(), "selected_model": selected.to_dict()},
        "stepwise": stepwise_section,
    }


def _load_fitted(cfg: PipelineConfig, out_dir: Path):
    model_path = out_dir / "model.json"
    if model_path.is_file():
        doc = _read_json(model_path)
        selected = LinearModel.from_dict(doc["model"])
        quants = {
            name: Quantification(name, dict(entry["mapping"]), source=entry["source"])
            for name, entry in doc["quantifications"].items()
        }
        return selected, quants
    _, quants, _, selected, _, _ = _fit_models(cfg, out_dir)
    return selected, quants


def _units_for_model(model: LinearModel, quants: dict[str, Quantification]):
    units = []
    for variable, coding in model.codings.items():
        quant = quants.get(variable)
        if quant is None:
            quant = Quantification(variable, dict(coding), source="initial")
        units.append(init_nfa(quant))
    return units


def _resubstitution_mmre(model, units, quants, data, response_transform):
    y = data.columns[model.response].astype(float)
    back = response_transform != "none"
    base, recal, actual = [], [], []
    for i in range(data.row_count):
        row = {}
        for term in model.terms:
            spec = data.spec(term.variable)
            if spec.is_categorical:
                row[term.variable] = data.labels(term.variable)[i]
            else:
                row[term.variable] = float(data.columns[term.variable][i])
        value = float(y[i])
        actual.append(back_transform_value(value, response_transform) if back else value)
        base.append(model_predict(model, quants, row, back_transform=back))
        recal.append(
            recalibrated_predict(model, units, row, back_transform=back, quantifications=quants)
        )
    a = np.array(actual)
    return (
        float(np.mean(np.abs(a - np.array(base)) / a)),
        float(np.mean(np.abs(a - np.array(recal)) / a)),
    )


def _stage_recalibrate(cfg: PipelineConfig, out_dir: Path) -> dict:
    if not cfg.recalibrate_enabled:
        return {"recalibration": {"enabled": False}}
    data = _prepared_dataset(cfg, out_dir)
    selected, quants = _load_fitted(cfg, out_dir)
    transform = _response_transform(cfg, out_dir)
    fit_rows = listwise_complete(data, [cfg.response, *selected.variables])
    units = _units_for_model(selected, quants)
    trained, trace = train_recalibration(selected, units, fit_rows, cfg.recalibration)
    before, after = _resubstitution_mmre(selected, trained, quants, fit_rows, transform)

    unit_payload = [u.to_dict() for u in trained]
    _write_json(
        out_dir / "recalibration.json",
        {"provenance": cfg.provenance(), "units": unit_payload},
    )
    improvement = 0.0 if before == 0.0 else (before - after) / before * 100.0
    return {
        "recalibration": {
            "enabled": True,
            "units": unit_payload,
            "training": {
                "epochs": trace.epochs,
                "converged": trace.converged,
                "initial_gradient_norm": trace.initial_gradient_norm,
                "initial_mse": trace.mse_path[0] if trace.mse_path else None,
                "final_mse": trace.mse_path[-1] if trace.mse_path else None,
                "final_learning_rate": trace.final_learning_rate,
            },
            "resubstitution_mmre": {
                "baseline": before,
                "recalibrated": after,
                "improvement_pct": improvement,
            },
        }
    }


def _evaluation_plan(cfg: PipelineConfig, selected, quants, transform) -> ModelingPlan:
    predictors = selected.variables
    if not predictors:
        raise ConfigError("selected model has no terms; nothing to evaluate")
    return ModelingPlan(
        response=cfg.response,
        predictors=predictors,
        quantifications=tuple(
            quants[name] for name in predictors if name in quants
        ),
        response_transform=transform,
        recalibrate=cfg.recalibrate_enabled,
        recalibration=cfg.recalibration,
        stepwise=False,
        pred_thresholds=cfg.pred_thresholds,
        min_test_for_pred=cfg.min_test_for_pred,
        refit_regression=cfg.refit_regression,
    )


def _stage_evaluate(cfg: PipelineConfig, out_dir: Path) -> dict:
    data = _prepared_dataset(cfg, out_dir)
    selected, quants = _load_fitted(cfg, out_dir)
    transform = _response_transform(cfg, out_dir)
    plan = _evaluation_plan(cfg, selected, quants, transform)
    resub = resubstitution_experiment(data, plan)
    cross = [
        cross_validate(data, plan, k, cfg.seed).to_dict() for k in cfg.k_values
    ]
    splits = [
        random_split_experiment(
            data, plan, fraction, cfg.repetitions, cfg.seed
        ).to_dict()
        for fraction in cfg.train_fractions
    ]
    return {
        "resubstitution": resub.to_dict(),
        "cross_validation": cross,
        "random_splits": splits,
    }


_STAGE_FUNCS = {
    "synth": _stage_synth,
    "prepare": _stage_prepare,
    "screen": _stage_screen,
    "tree": _stage_tree,
    "fit": _stage_fit,
    "recalibrate": _stage_recalibrate,
    "evaluate": _stage_evaluate,
}


def run_stage(stage: str, cfg: PipelineConfig) -> dict:
    """Run one stage against the config's output directory; returns the
    merged report after folding in this stage's sections."""
    if stage not in STAGES:
        raise ConfigError(
            f"unknown stage {stage!r}; valid stages: {', '.join(STAGES)}"
        )
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    func = _STAGE_FUNCS[stage]
    try:
        sections = func(cfg, out_dir)
    except DefectcastError as err:
        raise type(err)(f"step {stage!r}: {err}") from None
    _write_sections(out_dir, stage, sections)
    return _merge_report(out_dir, cfg)


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run every applicable stage in order and return the merged report."""
    report = {}
    for stage in STAGES:
        if stage == "synth" and cfg.synthetic is None:
            continue
        report = run_stage(stage, cfg)
    return report


# ---------------------------------------------------------------------------
# summary rendering
# ---------------------------------------------------------------------------


def render_summary(report: dict) -> str:
    """One-screen digest; every number shown here is read from the report."""
    lines = []
    prov = report.get("provenance", {})
    lines.append(
        f"defectcast {prov.get('tool_version', '?')}  "
        f"seed {prov.get('seed', '?')}  config {prov.get('config_hash', '?')[:12]}"
    )
    prep = report.get("data_preparation")
    if prep:
        lines.append(
            f"data: {prep['rows_loaded']} rows loaded, "
            f"{prep['rows_after_filters']} after filters, "
            f"{prep['rows_complete']} complete"
        )
    norm = report.get("normality")
    if norm:
        lines.append(
            f"normality ({norm['response']}): QQ correlation "
            f"{norm['qq_correlation_raw']:.4f} raw -> "
            f"{norm['qq_correlation_transformed']:.4f} transformed"
        )
    corr = report.get("rank_correlations")
    if corr:
        strongest = sorted(
            corr["correlations"].items(), key=lambda kv: -abs(kv[1]["rho"])
        )
        shown = ", ".join(f"{k} {v['rho']:+.3f}" for k, v in strongest[:4])
        lines.append(f"rank correlations: {shown}")
    tree = report.get("model_tree")
    if tree and tree.get("enabled"):
        lines.append(
            f"model tree: {tree['leaf_count']} leaves, depth {tree['depth']}"
        )
    reg = report.get("regression")
    if reg:
        model = reg["selected_model"]
        terms = ", ".join(
            f"{t['variable']} {t['coefficient']:+.4f}" for t in model["terms"]
        )
        lines.append(
            f"model: intercept {model['intercept']:+.4f}, {terms}  "
            f"(R^2 {model['r_squared']:.4f}, n {model['n']})"
        )
    recal = report.get("recalibration")
    if recal and recal.get("enabled"):
        res = recal["resubstitution_mmre"]
        lines.append(
            f"recalibration: MMRE {res['baseline']:.4f} -> "
            f"{res['recalibrated']:.4f} ({res['improvement_pct']:+.2f}%) "
            f"in {recal['training']['epochs']} epochs"
        )
    for entry in report.get("cross_validation", []):
        avg = entry["averages"]
        lines.append(
            f"{entry['parameters']['k']}-fold: MMRE {avg['baseline_mmre']:.4f} -> "
            f"{avg['recalibrated_mmre']:.4f} ({avg['improvement_pct']:+.2f}%)"
        )
    for entry in report.get("random_splits", []):
        avg = entry["averages"]
        lines.append(
            f"{entry['parameters']['train_fraction']:.0%} splits x"
            f"{entry['parameters']['repetitions']}: "
            f"MMRE {avg['baseline_mmre']:.4f} -> {avg['recalibrated_mmre']:.4f} "
            f"({avg['improvement_pct']:+.2f}%)"
        )
    return "\n".join(lines) + "\n"
