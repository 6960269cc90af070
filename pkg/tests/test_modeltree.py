"""Model-tree growth against a brute-force split oracle."""

import json

import numpy as np
import pytest

from defectcast._errors import ConfigError, DataError
from defectcast.dataset import VariableSpec
from defectcast.modeltree import fit_model_tree, predict_tree
from defectcast.regression import Quantification, ols_fit

import oracles
from test_regression import make_dataset, numeric_schema


def collect_nodes(node, out=None):
    if out is None:
        out = []
    out.append(node)
    if not node.is_leaf:
        collect_nodes(node.left, out)
        collect_nodes(node.right, out)
    return out


class TestRootSplitOracle:
    def test_numeric_root_matches_brute_force(self):
        for seed in range(6):
            rng = np.random.default_rng(100 + seed)
            n = 60
            x1 = rng.uniform(0, 10, n)
            x2 = rng.uniform(0, 10, n)
            y = np.where(x1 < 5.0, 0.0, 4.0) + 0.5 * x2 + rng.normal(0, 0.4, n)
            ds = make_dataset(
                {"y": y.tolist(), "x1": x1.tolist(), "x2": x2.tolist()},
                numeric_schema("y", "x1", "x2"),
            )
            tree = fit_model_tree(ds, "y", ["x1", "x2"], min_leaf_size=6)
            name, thr, sdr = oracles.best_split_brute_force(
                {"x1": x1.tolist(), "x2": x2.tolist()},
                {"x1": "numeric", "x2": "numeric"},
                y.tolist(),
                min_leaf=6,
            )
            assert tree.root.variable == name
            assert tree.root.threshold == pytest.approx(thr, abs=1e-12)
            assert tree.root.sd_reduction == pytest.approx(sdr, abs=1e-10)

    def test_categorical_root_matches_brute_force(self):
        rng = np.random.default_rng(200)
        n = 80
        labels = ["a", "b", "c", "d"]
        shift = {"a": 0.0, "b": 0.3, "c": 5.0, "d": 5.4}
        codes = rng.integers(0, 4, n)
        y = np.array([shift[labels[c]] for c in codes]) + rng.normal(0, 0.3, n)
        ds = make_dataset(
            {"y": y.tolist(), "g": [labels[c] for c in codes]},
            [
                VariableSpec("y", "response", "numeric"),
                VariableSpec("g", "predictor", "categorical", categories=tuple(labels)),
            ],
        )
        tree = fit_model_tree(ds, "y", ["g"], min_leaf_size=8)
        name, left_codes, sdr = oracles.best_split_brute_force(
            {"g": codes.tolist()}, {"g": "categorical"}, y.tolist(), min_leaf=8
        )
        assert name == "g"
        assert tree.root.left_labels == tuple(labels[c] for c in left_codes)
        assert tree.root.left_labels == ("a", "b")
        assert tree.root.sd_reduction == pytest.approx(sdr, abs=1e-10)

    def test_mixed_predictors_oracle(self):
        rng = np.random.default_rng(300)
        n = 70
        x = rng.uniform(0, 1, n)
        labels = ["p", "q", "r"]
        codes = rng.integers(0, 3, n)
        y = 2.0 * x + np.array([0.0, 0.1, 3.0])[codes] + rng.normal(0, 0.2, n)
        ds = make_dataset(
            {"y": y.tolist(), "x": x.tolist(), "g": [labels[c] for c in codes]},
            [
                VariableSpec("y", "response", "numeric"),
                VariableSpec("x", "predictor", "numeric"),
                VariableSpec("g", "predictor", "categorical", categories=tuple(labels)),
            ],
        )
        tree = fit_model_tree(ds, "y", ["x", "g"], min_leaf_size=7)
        name, spec, sdr = oracles.best_split_brute_force(
            {"x": x.tolist(), "g": codes.tolist()},
            {"x": "numeric", "g": "categorical"},
            y.tolist(),
            min_leaf=7,
        )
        assert tree.root.variable == name
        assert tree.root.sd_reduction == pytest.approx(sdr, abs=1e-10)


class TestGrowth:
    def _piecewise(self, seed=1, n=200):
        rng = np.random.default_rng(seed)
        x = rng.uniform(0, 10, n)
        y = np.where(x < 5.0, 1.0 * x, 10.0 + 3.0 * (x - 5.0))
        y = y + rng.normal(0, 0.1, n)
        ds = make_dataset(
            {"y": y.tolist(), "x": x.tolist()}, numeric_schema("y", "x")
        )
        return ds, x, y

    def test_recovers_piecewise_structure(self):
        ds, x, y = self._piecewise()
        tree = fit_model_tree(ds, "y", ["x"])
        assert not tree.root.is_leaf
        assert 4.5 < tree.root.threshold < 5.5
        grid = np.linspace(0.2, 9.8, 60)
        truth = np.where(grid < 5.0, grid, 10.0 + 3.0 * (grid - 5.0))
        preds = np.array([predict_tree(tree, {"x": float(g)}) for g in grid])
        # a few grid points straddle the fitted cut; judge the bulk
        inside = np.abs(grid - tree.root.threshold) > 0.3
        assert np.max(np.abs(preds[inside] - truth[inside])) < 0.5

    def test_sd_reduction_nonnegative_everywhere(self):
        ds, _, _ = self._piecewise(seed=2)
        tree = fit_model_tree(ds, "y", ["x"])
        for node in collect_nodes(tree.root):
            if not node.is_leaf:
                assert node.sd_reduction >= -1e-12

    def test_leaf_sizes_respected(self):
        ds, _, _ = self._piecewise(seed=3)
        tree = fit_model_tree(ds, "y", ["x"], min_leaf_size=15)
        for node in collect_nodes(tree.root):
            if node.is_leaf:
                assert node.n >= 15

    def test_resubstitution_beats_global_ols(self):
        rng = np.random.default_rng(7)
        n = 150
        x1 = rng.uniform(0, 10, n)
        x2 = rng.normal(size=n)
        y = np.where(x1 < 4.0, 5.0 + 2.0 * x2, -3.0 - 1.0 * x2) + rng.normal(0, 0.3, n)
        ds = make_dataset(
            {"y": y.tolist(), "x1": x1.tolist(), "x2": x2.tolist()},
            numeric_schema("y", "x1", "x2"),
        )
        tree = fit_model_tree(ds, "y", ["x1", "x2"])
        preds = np.array(
            [
                predict_tree(tree, {"x1": float(a), "x2": float(b)})
                for a, b in zip(x1, x2)
            ]
        )
        tree_rss = float(((y - preds) ** 2).sum())
        flat = ols_fit(ds, "y", ["x1", "x2"])
        coef = np.array([flat.intercept] + [t.coefficient for t in flat.terms])
        flat_rss = float(
            ((y - np.column_stack([np.ones(n), x1, x2]) @ coef) ** 2).sum()
        )
        assert tree_rss <= flat_rss + 1e-9

    def test_step_function_stops_at_two_leaves(self):
        rng = np.random.default_rng(11)
        n = 100
        x = rng.uniform(0, 1, n)
        y = np.where(x < 0.5, 0.0, 10.0) + rng.normal(0, 0.01, n)
        ds = make_dataset({"y": y.tolist(), "x": x.tolist()}, numeric_schema("y", "x"))
        tree = fit_model_tree(ds, "y", ["x"])
        # children are nearly pure, far below the 5 percent floor
        assert tree.depth == 1
        assert tree.leaf_count == 2

    def test_small_sample_single_leaf(self):
        ds = make_dataset(
            {"y": [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0],
             "x": [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]},
            numeric_schema("y", "x"),
        )
        tree = fit_model_tree(ds, "y", ["x"], min_leaf_size=6)
        assert tree.leaf_count == 1
        assert predict_tree(tree, {"x": 3.0}) == pytest.approx(3.0, abs=1e-8)

    def test_constant_response_single_mean_leaf(self):
        ds = make_dataset(
            {"y": [2.5] * 12, "x": list(range(12))}, numeric_schema("y", "x")
        )
        tree = fit_model_tree(ds, "y", ["x"])
        assert tree.leaf_count == 1
        assert predict_tree(tree, {"x": 100.0}) == 2.5

    def test_duplicate_predictor_tie_breaks_low_index(self):
        rng = np.random.default_rng(13)
        n = 40
        x = rng.uniform(0, 10, n)
        y = np.where(x < 5.0, 0.0, 6.0) + rng.normal(0, 0.2, n)
        ds = make_dataset(
            {"y": y.tolist(), "x1": x.tolist(), "x2": x.tolist()},
            numeric_schema("y", "x1", "x2"),
        )
        tree = fit_model_tree(ds, "y", ["x1", "x2"], min_leaf_size=5)
        assert tree.root.variable == "x1"
        # identical columns: the leaf fits must have dropped one
        for node in collect_nodes(tree.root):
            if node.is_leaf:
                assert len(node.model.terms) <= 1

    def test_quantified_categorical_splits_on_threshold(self):
        rng = np.random.default_rng(17)
        n = 90
        labels = ["0.65", "1.0", "1.35"]
        values = {"0.65": 0.65, "1.0": 1.0, "1.35": 1.35}
        codes = rng.integers(0, 3, n)
        v = np.array([values[labels[c]] for c in codes])
        y = 8.0 * v + rng.normal(0, 0.2, n)
        ds = make_dataset(
            {"y": y.tolist(), "vaf": [labels[c] for c in codes]},
            [
                VariableSpec("y", "response", "numeric"),
                VariableSpec("vaf", "predictor", "categorical", categories=tuple(labels)),
            ],
        )
        quant = {"vaf": Quantification("vaf", values)}
        tree = fit_model_tree(ds, "y", ["vaf"], quantifications=quant, min_leaf_size=10)
        assert tree.root.threshold is not None
        assert tree.root.left_labels is None
        got = predict_tree(tree, {"vaf": "1.35"}, quantifications=quant)
        assert got == pytest.approx(8.0 * 1.35, abs=0.5)


class TestTreeApi:
    def _tree(self):
        rng = np.random.default_rng(19)
        n = 80
        x = rng.uniform(0, 10, n)
        labels = ["a", "b", "c"]
        codes = rng.integers(0, 3, n)
        y = np.where(x < 5, 0.0, 3.0) + np.array([0.0, 0.2, 2.0])[codes]
        y = y + rng.normal(0, 0.2, n)
        ds = make_dataset(
            {"y": y.tolist(), "x": x.tolist(), "g": [labels[c] for c in codes]},
            [
                VariableSpec("y", "response", "numeric"),
                VariableSpec("x", "predictor", "numeric"),
                VariableSpec("g", "predictor", "categorical", categories=tuple(labels)),
            ],
        )
        return fit_model_tree(ds, "y", ["x", "g"], min_leaf_size=8)

    def test_text_rendering(self):
        text = self._tree().to_text()
        assert "if " in text
        assert "leaf: " in text
        assert "else" in text
        assert text.endswith("\n")

    def test_dict_json_serializable(self):
        data = self._tree().to_dict()
        blob = json.dumps(data)
        back = json.loads(blob)
        assert back["root"]["kind"] == "split"
        assert back["leaf_count"] == self._tree().leaf_count

    def test_missing_split_variable(self):
        tree = self._tree()
        with pytest.raises(DataError, match="missing split variable"):
            predict_tree(tree, {"g": "a"})

    def test_unseen_category_at_subset_split(self):
        rng = np.random.default_rng(23)
        n = 60
        labels = ["a", "b", "c"]
        codes = rng.integers(0, 3, n)
        y = np.array([0.0, 0.1, 4.0])[codes] + rng.normal(0, 0.1, n)
        ds = make_dataset(
            {"y": y.tolist(), "g": [labels[c] for c in codes]},
            [
                VariableSpec("y", "response", "numeric"),
                VariableSpec("g", "predictor", "categorical", categories=("a", "b", "c", "d")),
            ],
        )
        # category d declared but never observed
        with pytest.raises(DataError, match="zero training rows|not seen"):
            tree = fit_model_tree(ds, "y", ["g"], min_leaf_size=6)
            predict_tree(tree, {"g": "d"})

    def test_no_predictors_rejected(self):
        ds = make_dataset({"y": [1.0, 2.0], "x": [1.0, 2.0]}, numeric_schema("y", "x"))
        with pytest.raises(ConfigError, match="predictor"):
            fit_model_tree(ds, "y", [])

    def test_tiny_sample_degenerates_to_leaf(self):
        ds = make_dataset(
            {"y": [1.0, 2.0, 3.0], "x": [3.0, 2.0, 1.0]}, numeric_schema("y", "x")
        )
        tree = fit_model_tree(ds, "y", ["x"])
        assert tree.leaf_count == 1

    def test_single_row_rejected(self):
        text = "y,x\n1.0,2.0\n"
        import io
        from defectcast.dataset import load_csv

        ds = load_csv(io.StringIO(text), numeric_schema("y", "x"))
        with pytest.raises(DataError, match="complete rows"):
            fit_model_tree(ds, "y", ["x"])

    def test_bad_sd_fraction(self):
        ds, = [make_dataset({"y": list(map(float, range(20))), "x": list(map(float, range(20)))},
                            numeric_schema("y", "x"))]
        with pytest.raises(ConfigError, match="sd_fraction"):
            fit_model_tree(ds, "y", ["x"], sd_fraction=1.5)
