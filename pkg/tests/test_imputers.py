import numpy as np
import pytest

from missbench.dataset import (CATEGORICAL, ColumnSchema, Dataset, NUMERICAL,
                               SENSITIVE, TARGET)
from missbench.errors import ContractError, EmptyResultError, UnfittableError
from missbench.imputers import (CLUSTERING, DELETION, DUMMY_CATEGORY, IMPUTER_KINDS,
                                MEDIAN_DUMMY, MEDIAN_MODE, MISS_FOREST, column_mode,
                                delete_rows, fit, fit_clustering, fit_miss_forest,
                                fit_statistical, from_bytes, load, lower_median,
                                save, to_bytes, transform)

from conftest import toy_dataset


def single_column(values, kind=NUMERICAL, categories=None, name="v"):
    """One feature column dataset; None/NaN entries are masked."""
    n = len(values)
    if kind == NUMERICAL:
        arr = np.array([np.nan if v is None else float(v) for v in values])
        mask = np.isnan(arr)[:, None]
    else:
        arr = np.array(values, dtype=object)
        mask = np.array([v is None for v in values])[:, None]
    schema = (ColumnSchema(name, kind, categories=categories),
              ColumnSchema("y", CATEGORICAL, role=TARGET, categories=("0", "1")))
    y = np.array(["0", "1"] * (n // 2) + ["0"] * (n % 2), dtype=object)
    return Dataset(schema, {name: arr, "y": y}, mask)


class TestDeletion:
    def test_identity_when_complete(self):
        d = toy_dataset(5)
        res = delete_rows(d)
        assert res.dataset.n == 5
        assert res.retained_fraction == 1.0

    def test_counts(self):
        d = toy_dataset(10, null_x=(0, 1), null_color=(2,))
        res = delete_rows(d)
        assert res.dataset.n == 7
        assert list(res.retained_rows) == [3, 4, 5, 6, 7, 8, 9]

    def test_all_rows_removed_errors(self):
        d = single_column([None, None])
        with pytest.raises(EmptyResultError):
            delete_rows(d)

    def test_strictly_fewer_rows_after_mnar_injection(self, german, german_preset):
        from missbench.dataset import SplitSpec, split
        from missbench.injection import MNAR, inject
        train, _ = split(german, SplitSpec(0.3, 1))
        injected, _ = inject(train, german_preset.specs[MNAR], seed=2)
        res = delete_rows(injected)
        assert res.dataset.n < train.n
        assert 0 < res.retained_fraction < 1


class TestStatistical:
    def test_lower_median(self):
        assert lower_median(np.array([1.0, 2.0, 4.0])) == 2.0
        assert lower_median(np.array([1.0, 2.0, 3.0, 4.0])) == 2.0  # lower of the two

    def test_median_fill(self):
        d = single_column([1, 2, None, 4])
        f = fit_statistical(d, MEDIAN_MODE)
        assert f.state["fills"]["v"] == 2.0
        out = transform(f, d)
        assert out.dataset.columns["v"][2] == 2.0
        assert not out.dataset.null_mask.any()

    def test_mode_fill_and_tie_break(self):
        d = single_column(["x", "x", "y", None], kind=CATEGORICAL)
        f = fit_statistical(d, MEDIAN_MODE)
        assert f.state["fills"]["v"] == "x"
        tied = single_column(["y", "x", "x", "y", None], kind=CATEGORICAL)
        # tie between x and y: first-appearance order wins
        assert fit_statistical(tied, MEDIAN_MODE).state["fills"]["v"] == "y"

    def test_dummy_category(self):
        d = single_column(["x", "x", "y", None], kind=CATEGORICAL)
        f = fit_statistical(d, MEDIAN_DUMMY)
        out = transform(f, d)
        assert out.dataset.columns["v"][3] == DUMMY_CATEGORY
        assert DUMMY_CATEGORY in out.dataset.column_schema("v").categories

    def test_fully_null_column_unfittable(self):
        d = single_column([None, None, None])
        with pytest.raises(UnfittableError):
            fit_statistical(d, MEDIAN_MODE)

    def test_fills_are_fit_time_constants(self):
        train = single_column([1, 2, 3, 4, 5])
        f = fit_statistical(train, MEDIAN_MODE)
        a = single_column([10, None, 30])
        b = single_column([70, None, 90])  # same mask, different observed values
        fill_a = transform(f, a).dataset.columns["v"][1]
        fill_b = transform(f, b).dataset.columns["v"][1]
        assert fill_a == fill_b == 3.0


def blob_dataset(missing_row=None, missing_col="b"):
    """Two well-separated 3-point blobs over numeric columns a, b."""
    a = np.array([0.0, 0.1, -0.1, 10.0, 10.1, 9.9])
    b = np.array([0.1, -0.1, 0.0, 9.9, 10.0, 10.1])
    grp = np.array(["lo"] * 3 + ["hi"] * 3, dtype=object)
    mask = np.zeros((6, 3), dtype=bool)
    schema = (ColumnSchema("a", NUMERICAL), ColumnSchema("b", NUMERICAL),
              ColumnSchema("grp", CATEGORICAL),
              ColumnSchema("y", CATEGORICAL, role=TARGET, categories=("0", "1")))
    cols = {"a": a.copy(), "b": b.copy(), "grp": grp.copy(),
            "y": np.array(["0", "1"] * 3, dtype=object)}
    if missing_row is not None:
        j = {"a": 0, "b": 1, "grp": 2}[missing_col]
        if missing_col == "grp":
            cols[missing_col][missing_row] = None
        else:
            cols[missing_col][missing_row] = np.nan
        mask[missing_row, j] = True
    return Dataset(schema, cols, mask)


class TestClustering:
    def test_k1_reproduces_global_mean_and_mode(self):
        d = toy_dataset(12, null_x=(0,), null_color=(1,))
        f = fit_clustering(d, k=1, seed=5)
        out = transform(f, d)
        complete = d.complete_rows()
        expected_mean = d.columns["x"][complete].mean()
        assert out.dataset.columns["x"][0] == pytest.approx(expected_mean, abs=1e-12)
        expected_mode = column_mode(d.columns["color"][complete],
                                    d.column_schema("color").categories)
        assert out.dataset.columns["color"][1] == expected_mode

    def test_two_blobs_fill_own_blob_mean(self):
        train = blob_dataset()
        f = fit_clustering(train, k=2, seed=1)
        # row near the low blob with column b missing: fill = that blob's b mean
        test = blob_dataset(missing_row=1, missing_col="b")
        out = transform(f, test)
        assert out.dataset.columns["b"][1] == pytest.approx(0.0, abs=1e-9)
        test_hi = blob_dataset(missing_row=4, missing_col="b")
        assert transform(f, test_hi).dataset.columns["b"][4] == pytest.approx(10.0, abs=1e-9)

    def test_categorical_fill_from_cluster_mode(self):
        train = blob_dataset()
        f = fit_clustering(train, k=2, seed=1)
        test = blob_dataset(missing_row=0, missing_col="grp")
        assert transform(f, test).dataset.columns["grp"][0] == "lo"

    def test_determinism(self):
        d = toy_dataset(30, null_x=(0, 4), null_color=(2,))
        assert to_bytes(fit_clustering(d, seed=9)) == to_bytes(fit_clustering(d, seed=9))

    def test_no_complete_rows_unfittable(self):
        d = single_column([None, None, 1.0])
        d2 = d.with_null_mask(np.array([[True], [True], [True]]))
        with pytest.raises(UnfittableError):
            fit_clustering(d2, k=1, seed=0)

    def test_k_exceeding_complete_rows(self):
        d = toy_dataset(6)
        with pytest.raises(UnfittableError):
            fit_clustering(d, k=7, seed=0)


def linear_dataset(n=400, seed=0, noise=0.0, miss_frac=0.3):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 10, size=n)
    y = 2 * x + (rng.normal(scale=noise, size=n) if noise else 0.0)
    truth = y.copy()
    mask = np.zeros((n, 2), dtype=bool)
    miss = rng.random(n) < miss_frac
    y[miss] = np.nan
    mask[:, 1] = miss
    schema = (ColumnSchema("x", NUMERICAL), ColumnSchema("yv", NUMERICAL),
              ColumnSchema("t", CATEGORICAL, role=TARGET, categories=("0", "1")))
    t = np.array(["1" if v > 5 else "0" for v in x], dtype=object)
    d = Dataset(schema, {"x": x, "yv": y, "t": t}, mask)
    return d, truth, miss


class TestMissForest:
    def test_no_null_train_transform_identity(self):
        d = toy_dataset(20)
        f = fit_miss_forest(d, seed=1)
        out = transform(f, toy_dataset(20, seed=7))
        assert np.allclose(out.dataset.columns["x"], toy_dataset(20, seed=7).columns["x"])

    def test_iteration_cap(self):
        d, _, _ = linear_dataset(noise=3.0)
        f = fit_miss_forest(d, seed=2, max_iter=10)
        assert 1 <= len(f.state["history"]) <= 10

    def test_recovers_linear_relation(self):
        d, truth, miss = linear_dataset(seed=3)
        f = fit_miss_forest(d, seed=3)
        filled = transform(f, d).dataset.columns["yv"]
        rmse_mf = np.sqrt(np.mean((filled[miss] - truth[miss]) ** 2))
        med = fit_statistical(d, MEDIAN_MODE)
        filled_med = transform(med, d).dataset.columns["yv"]
        rmse_med = np.sqrt(np.mean((filled_med[miss] - truth[miss]) ** 2))
        assert rmse_mf < rmse_med
        assert rmse_mf < 0.6  # forest resolution on y = 2x over [0, 20]

    def test_determinism(self):
        d, _, _ = linear_dataset(seed=4)
        assert to_bytes(fit_miss_forest(d, seed=5)) == to_bytes(fit_miss_forest(d, seed=5))

    def test_single_feature_unfittable(self):
        d = single_column([1, None, 3])
        with pytest.raises(UnfittableError):
            fit_miss_forest(d, seed=0)


class TestTransformContract:
    def test_schema_mismatch(self):
        f = fit_statistical(toy_dataset(6), MEDIAN_MODE)
        other = single_column([1, 2, 3])
        with pytest.raises(ContractError):
            transform(f, other)

    def test_deletion_kind_routes_to_delete_rows(self):
        d = toy_dataset(10, null_x=(0,))
        f = fit(d, DELETION)
        res = transform(f, d)
        assert res.dataset.n == 9
        assert res.retained_rows is not None

    def test_only_masked_cells_change(self):
        d = toy_dataset(15, null_x=(2, 5), null_color=(7,))
        for kind in (MEDIAN_MODE, MEDIAN_DUMMY, CLUSTERING, MISS_FOREST):
            out = transform(fit(d, kind, seed=3), d).dataset
            unmasked = ~d.null_mask[:, 0]
            assert np.array_equal(out.columns["x"][unmasked], d.columns["x"][unmasked])
            unmasked_c = ~d.null_mask[:, 1]
            assert all(a == b for a, b in zip(out.columns["color"][unmasked_c],
                                              d.columns["color"][unmasked_c]))

    def test_no_null_input_identity(self):
        d = toy_dataset(10)
        for kind in IMPUTER_KINDS:
            out = transform(fit(toy_dataset(10, null_x=(1,)), kind, seed=1), d)
            assert out.dataset.n == 10
            assert np.allclose(out.dataset.columns["x"], d.columns["x"])


class TestLeakageFreedom:
    def test_transform_never_changes_fitted_parameters(self):
        train = toy_dataset(40, null_x=(0, 3, 8), null_color=(5, 11))
        test_a = toy_dataset(20, seed=21, null_x=(1, 4), null_color=(6,))
        test_b_src = toy_dataset(20, seed=22, null_x=(1, 4), null_color=(6,))
        for kind in IMPUTER_KINDS:
            fitted = fit(train, kind, seed=13)
            before = to_bytes(fitted)
            out_a = transform(fitted, test_a)
            out_b = transform(fitted, test_b_src)
            assert to_bytes(fitted) == before
            if kind in (MEDIAN_MODE, MEDIAN_DUMMY):
                fa = out_a.dataset.columns["x"][1]
                fb = out_b.dataset.columns["x"][1]
                assert fa == fb

    def test_fit_determinism_byte_identical(self):
        train = toy_dataset(30, null_x=(2,), null_color=(4,))
        for kind in IMPUTER_KINDS:
            assert to_bytes(fit(train, kind, seed=7)) == to_bytes(fit(train, kind, seed=7))


class TestSerialization:
    def test_round_trip_bytes_exact(self, tmp_path):
        train = toy_dataset(25, null_x=(1,), null_color=(3,))
        for kind in IMPUTER_KINDS:
            fitted = fit(train, kind, seed=11)
            blob = to_bytes(fitted)
            restored = from_bytes(blob)
            assert to_bytes(restored) == blob
            p = tmp_path / f"{kind}.pkl"
            save(fitted, p)
            assert to_bytes(load(p)) == blob

    def test_loaded_imputer_transforms_identically(self, tmp_path):
        train = toy_dataset(25, null_x=(1, 6), null_color=(3,))
        test = toy_dataset(12, seed=9, null_x=(0,), null_color=(2,))
        for kind in (MEDIAN_MODE, CLUSTERING, MISS_FOREST):
            fitted = fit(train, kind, seed=2)
            p = tmp_path / f"{kind}.pkl"
            save(fitted, p)
            a = transform(fitted, test).dataset
            b = transform(load(p), test).dataset
            assert np.allclose(a.columns["x"], b.columns["x"])
            assert list(a.columns["color"]) == list(b.columns["color"])

    def test_reject_foreign_bytes(self):
        with pytest.raises(Exception):
            from_bytes(b"not an imputer")
