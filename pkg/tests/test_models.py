import numpy as np
import pytest

from missbench.dataset import (CATEGORICAL, ColumnSchema, Dataset, NUMERICAL,
                               TARGET)
from missbench.errors import ConfigurationError, ContractError, TrainingError
from missbench.models import (BootstrapEnsemble, DEFAULT_GRIDS, DECISION_TREE,
                              LOGISTIC_REGRESSION, RANDOM_FOREST, boostclean_predict,
                              boostclean_train, bootstrap_ensemble, ensemble_predict,
                              grid_points, lr_loss_and_grad, model_from_bytes,
                              model_to_bytes, predict, preprocess_apply,
                              preprocess_fit, train, tune)

from conftest import toy_dataset


def matrix_dataset(values, categories_col=None):
    """Single numeric column 'v' (+ optional categorical 'c') with binary target."""
    n = len(values)
    schema = [ColumnSchema("v", NUMERICAL)]
    cols = {"v": np.array(values, dtype=float)}
    width = 1
    if categories_col is not None:
        schema.append(ColumnSchema("c", CATEGORICAL))
        cols["c"] = np.array(categories_col, dtype=object)
        width = 2
    schema.append(ColumnSchema("y", CATEGORICAL, role=TARGET, categories=("0", "1")))
    cols["y"] = np.array(["0", "1"] * (n // 2) + ["0"] * (n % 2), dtype=object)
    return Dataset(tuple(schema), cols, np.zeros((n, width), dtype=bool))


class TestPreprocessor:
    def test_population_scaling(self):
        d = matrix_dataset([0.0, 2.0])
        p = preprocess_fit(d)
        x = preprocess_apply(p, d)
        assert np.allclose(x[:, 0], [-1.0, 1.0])  # mean 1, population std 1

    def test_constant_column_zeros(self):
        d = matrix_dataset([5.0, 5.0, 5.0])
        x = preprocess_apply(preprocess_fit(d), d)
        assert np.all(x == 0)

    def test_one_hot_exactly_one(self):
        d = matrix_dataset([1, 2, 3], categories_col=["a", "b", "c"])
        x = preprocess_apply(preprocess_fit(d), d)
        hot = x[:, 1:]
        assert hot.shape == (3, 3)
        assert np.all(hot.sum(axis=1) == 1)

    def test_unseen_category_all_zero_block(self):
        train_d = matrix_dataset([1, 2], categories_col=["a", "b"])
        p = preprocess_fit(train_d)
        test_schema = train_d.schema
        test_d = Dataset(test_schema,
                         {"v": np.array([1.0]), "c": np.array(["a"], dtype=object),
                          "y": np.array(["0"], dtype=object)},
                         np.zeros((1, 2), dtype=bool))
        # swap the category value for one outside the train list via open schema
        open_schema = (ColumnSchema("v", NUMERICAL), ColumnSchema("c", CATEGORICAL),
                       ColumnSchema("y", CATEGORICAL, role=TARGET, categories=("0", "1")))
        unseen = Dataset(open_schema,
                         {"v": np.array([1.0]), "c": np.array(["zzz"], dtype=object),
                          "y": np.array(["0"], dtype=object)},
                         np.zeros((1, 2), dtype=bool))
        x = preprocess_apply(p, unseen)
        assert np.all(x[0, 1:] == 0)

    def test_null_rejected(self):
        d = toy_dataset(6, null_x=(0,))
        with pytest.raises(ContractError):
            preprocess_fit(d)

    def test_train_matrix_standardized(self):
        d = toy_dataset(50)
        x = preprocess_apply(preprocess_fit(d), d)
        assert abs(x[:, 0].mean()) < 1e-9
        assert abs(x[:, 0].std() - 1.0) < 1e-9


class TestLogisticRegression:
    def test_gradient_matches_central_differences(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            n, p = 20, 4
            x = rng.normal(size=(n, p))
            y = rng.integers(0, 2, size=n)
            w = rng.normal(size=n) ** 2 + 0.1
            wb = rng.normal(size=p + 1)
            _, grad = lr_loss_and_grad(wb, x, y, alpha=0.3, sample_weight=w)
            eps = 1e-6
            for j in range(p + 1):
                up, down = wb.copy(), wb.copy()
                up[j] += eps
                down[j] -= eps
                fd = (lr_loss_and_grad(up, x, y, 0.3, w)[0]
                      - lr_loss_and_grad(down, x, y, 0.3, w)[0]) / (2 * eps)
                assert grad[j] == pytest.approx(fd, rel=1e-5, abs=1e-8)

    def test_separable_training_accuracy(self):
        rng = np.random.default_rng(1)
        x = np.vstack([rng.normal(-3, 0.5, size=(30, 2)), rng.normal(3, 0.5, size=(30, 2))])
        y = np.array([0] * 30 + [1] * 30)
        m = train(x, y, LOGISTIC_REGRESSION, {"strength": 10.0, "penalty": "l2"}, seed=0)
        labels, scores = predict(m, x)
        assert (labels == y).all()
        assert np.all((labels == 1) == (scores >= 0.5))

    def test_single_class_errors(self):
        with pytest.raises(TrainingError):
            train(np.zeros((4, 2)), np.zeros(4, dtype=int), LOGISTIC_REGRESSION, {}, 0)


class TestTrees:
    def test_xor_depth_two(self):
        x = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
        y = np.array([0, 1, 1, 0])
        m = train(x, y, DECISION_TREE, {"max_depth": 2, "min_samples_leaf": 1,
                                        "criterion": "gini"}, seed=3)
        labels, _ = predict(m, x)
        assert (labels == y).all()

    def test_degenerate_forest_equals_cart(self):
        rng = np.random.default_rng(2)
        x = np.vstack([rng.normal(-2, 0.3, size=(40, 3)), rng.normal(2, 0.3, size=(40, 3))])
        y = np.array([0] * 40 + [1] * 40)
        dt = train(x, y, DECISION_TREE, {"max_depth": 3, "min_samples_leaf": 1,
                                         "criterion": "gini"}, seed=4)
        rf = train(x, y, RANDOM_FOREST, {"n_estimators": 1, "max_depth": 3,
                                         "min_samples_split": 2, "min_samples_leaf": 1,
                                         "bootstrap": False, "max_features": None}, seed=4)
        assert (predict(dt, x)[0] == predict(rf, x)[0]).all()

    def test_labels_binary(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(30, 2))
        y = rng.integers(0, 2, size=30)
        for kind in (DECISION_TREE, RANDOM_FOREST, LOGISTIC_REGRESSION):
            labels, _ = predict(train(x, y, kind, {}, 0), x)
            assert set(np.unique(labels)) <= {0, 1}


def stepped_data(n=160, seed=5):
    """Needs depth 3 to fit: positive iff floor(x) is in {1, 2, 5, 6}."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 8, size=n)
    y = np.isin(np.floor(x), [1, 2, 5, 6]).astype(int)
    return x[:, None], y


class TestTune:
    def test_single_point_grid(self):
        x, y = stepped_data()
        chosen, table = tune(x, y, DECISION_TREE,
                             {"max_depth": [3], "min_samples_leaf": [1],
                              "criterion": ["gini"]}, k_folds=3, seed=0)
        assert chosen == {"max_depth": 3, "min_samples_leaf": 1, "criterion": "gini"}
        assert len(table) == 1

    def test_depth_separates_structured_data(self):
        x, y = stepped_data()
        chosen, table = tune(x, y, DECISION_TREE,
                             {"max_depth": [1, 4], "min_samples_leaf": [1],
                              "criterion": ["gini"]}, k_folds=3, seed=1)
        assert chosen["max_depth"] == 4
        by_depth = {t["params"]["max_depth"]: t["mean_f1"] for t in table}
        assert by_depth[4] > by_depth[1]

    def test_determinism(self):
        x, y = stepped_data()
        grid = {"max_depth": [2, 4], "min_samples_leaf": [1, 5], "criterion": ["gini"]}
        a = tune(x, y, DECISION_TREE, grid, 3, seed=7)
        b = tune(x, y, DECISION_TREE, grid, 3, seed=7)
        assert a[0] == b[0]
        assert [t["mean_f1"] for t in a[1]] == [t["mean_f1"] for t in b[1]]

    def test_chosen_attains_recorded_maximum(self):
        x, y = stepped_data()
        chosen, table = tune(x, y, DECISION_TREE, DEFAULT_GRIDS[DECISION_TREE],
                             k_folds=3, seed=2)
        best = max(t["mean_f1"] for t in table)
        chosen_row = next(t for t in table if t["params"] == chosen)
        assert chosen_row["mean_f1"] == best

    def test_tie_breaks_by_grid_order(self):
        # all points equivalent on this trivially separable data
        rng = np.random.default_rng(8)
        x = np.concatenate([rng.normal(-5, 0.1, 30), rng.normal(5, 0.1, 30)])[:, None]
        y = np.array([0] * 30 + [1] * 30)
        grid = {"max_depth": [3, 5, 10], "min_samples_leaf": [1], "criterion": ["gini"]}
        chosen, table = tune(x, y, DECISION_TREE, grid, 3, seed=3)
        assert chosen["max_depth"] == 3
        assert len({t["mean_f1"] for t in table}) == 1

    def test_empty_grid_errors(self):
        with pytest.raises(ConfigurationError):
            grid_points({})


class TestBootstrap:
    def test_degenerate_single_member(self):
        x, y = stepped_data()
        e = bootstrap_ensemble(x, y, DECISION_TREE, {}, b=1, seed=0)
        matrix = ensemble_predict(e, x)
        assert matrix.shape == (1, len(y))
        assert (matrix[0] == predict(e.members[0], x)[0]).all()

    def test_subsample_size_80_percent(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(1000, 2))
        y = (x[:, 0] > 0).astype(int)
        e = bootstrap_ensemble(x, y, DECISION_TREE, {}, b=3, subsample=0.8, seed=1)
        assert e.n_sub == 800
        assert e.b == 3

    def test_trivially_predictable_data_gives_constant_columns(self):
        rng = np.random.default_rng(10)
        x = np.concatenate([rng.normal(-5, 0.2, 40), rng.normal(5, 0.2, 40)])[:, None]
        y = np.array([0] * 40 + [1] * 40)
        e = bootstrap_ensemble(x, y, DECISION_TREE, {}, b=12, seed=2)
        matrix = ensemble_predict(e, x)
        assert np.all(matrix == matrix[0, :])

    def test_column_permutation_follows_rows(self):
        x, y = stepped_data()
        e = bootstrap_ensemble(x, y, DECISION_TREE, {}, b=5, seed=3)
        perm = np.random.default_rng(0).permutation(len(y))
        assert (ensemble_predict(e, x[perm]) == ensemble_predict(e, x)[:, perm]).all()

    def test_single_class_labels_error_after_retries(self):
        x = np.zeros((10, 1))
        y = np.zeros(10, dtype=int)
        with pytest.raises(TrainingError):
            bootstrap_ensemble(x, y, DECISION_TREE, {}, b=2, seed=4)


def boostclean_case(n=40):
    """Categorical g equals the label; mask g on 10 positive and 2 negative rows.

    Weighted round-1 errors are then hand-computable: median-dummy groups the
    masked rows under the dummy category (majority positive, 2 mistakes);
    median-mode fills with the observed mode '0' (10 mistakes).
    """
    g = np.array(["1"] * 20 + ["0"] * 20, dtype=object)
    y = np.array(["1"] * 20 + ["0"] * 20, dtype=object)
    h = np.zeros(n)
    mask = np.zeros((n, 2), dtype=bool)
    masked_rows = list(range(10)) + [20, 21]
    for i in masked_rows:
        g[i] = None
        mask[i, 0] = True
    schema = (ColumnSchema("g", CATEGORICAL, categories=("0", "1")),
              ColumnSchema("h", NUMERICAL),
              ColumnSchema("y", CATEGORICAL, role=TARGET, categories=("0", "1")))
    return Dataset(schema, {"g": g, "h": h, "y": y}, mask)


class TestBoostClean:
    def test_round1_selects_lower_weighted_error(self):
        d = boostclean_case()
        e = boostclean_train(d, ("median-mode", "median-dummy"), DECISION_TREE,
                             rounds=1, seed=0)
        assert e.history[0]["imputer"] == "median-dummy"
        assert e.history[0]["error"] == pytest.approx(2 / 40)

    def test_default_rounds_five(self):
        d = boostclean_case()
        e = boostclean_train(d, ("median-mode", "median-dummy"), DECISION_TREE, seed=1)
        assert len(e.history) <= 5
        assert e.history[0]["round"] == 1

    def test_single_candidate_reduces_to_boosting(self):
        d = boostclean_case()
        e = boostclean_train(d, ("median-dummy",), DECISION_TREE, rounds=3, seed=2)
        assert all(h["imputer"] == "median-dummy" for h in e.history)
        labels = boostclean_predict(e, d)
        assert labels.shape == (40,)

    def test_alpha_capped_on_zero_error(self):
        # perfectly separable after imputation: epsilon = 0 in round 1
        g = np.array(["1"] * 10 + ["0"] * 10, dtype=object)
        y = g.copy()
        schema = (ColumnSchema("g", CATEGORICAL, categories=("0", "1")),
                  ColumnSchema("h", NUMERICAL),
                  ColumnSchema("y", CATEGORICAL, role=TARGET, categories=("0", "1")))
        d = Dataset(schema, {"g": g, "h": np.zeros(20), "y": y},
                    np.zeros((20, 2), dtype=bool))
        e = boostclean_train(d, ("median-mode",), DECISION_TREE, rounds=2, seed=3)
        assert e.members[0].alpha <= 0.5 * np.log((1 - 1e-10) / 1e-10) + 1e-9

    def test_deletion_rejected_as_candidate(self):
        with pytest.raises(ConfigurationError):
            boostclean_train(boostclean_case(), ("deletion",), DECISION_TREE, seed=0)

    def test_votes_weighting(self):
        d = boostclean_case()
        e = boostclean_train(d, ("median-mode", "median-dummy"), DECISION_TREE,
                             rounds=2, seed=4)
        labels = boostclean_predict(e, d)
        unmasked = ~d.null_mask[:, 0]
        truth = d.labels()
        assert (labels[unmasked] == truth[unmasked]).mean() > 0.9


class TestModelSerialization:
    def test_round_trip(self):
        x, y = stepped_data()
        for kind in (DECISION_TREE, RANDOM_FOREST, LOGISTIC_REGRESSION):
            m = train(x, y, kind, {}, seed=5)
            blob = model_to_bytes(m)
            restored = model_from_bytes(blob)
            assert model_to_bytes(restored) == blob
            assert (predict(restored, x)[0] == predict(m, x)[0]).all()
