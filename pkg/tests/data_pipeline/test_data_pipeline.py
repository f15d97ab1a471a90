import math

import numpy as np
import pytest

from contrastive_variational_ssl.autodiff import Tensor
from contrastive_variational_ssl.data_pipeline import (
    CATEGORICAL,
    NUMERIC,
    AugmentConfig,
    Column,
    DataTable,
    PreprocessPlan,
    apply_preprocess,
    fit_preprocess,
    kfold,
    load_csv,
    load_schema,
    make_blobs_table,
    make_views,
    smote,
    split_train_test,
)
from contrastive_variational_ssl.errors import (
    ClassTooSmall,
    EmptyTable,
    InvalidK,
    InvalidValue,
    MissingLabel,
    NoLabels,
    ParseError,
    RaggedRows,
    SchemaMismatch,
    TableFileNotFound,
    TooFewRows,
)


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def numeric_table(n_rows: int, labels=None) -> DataTable:
    columns = [Column("x", NUMERIC, [float(i) for i in range(n_rows)])]
    if labels is not None:
        columns.append(Column("label", CATEGORICAL, list(labels)))
        return DataTable(columns, label_column="label")
    return DataTable(columns)


@pytest.fixture
def mixed_table():
    return DataTable(
        [
            Column("age", NUMERIC, [1.0, 2.0, 3.0, None]),
            Column("color", CATEGORICAL, ["a", "a", "b", None]),
            Column("label", CATEGORICAL, ["0", "1", "0", "1"]),
        ],
        label_column="label",
    )


def test_load_numeric_csv(tmp_path):
    path = write(tmp_path, "data.csv", "a,b\n1,2\n3,4.5\n-1,0\n")
    table = load_csv(path)
    assert table.n_rows == 3
    assert [c.kind for c in table.columns] == [NUMERIC, NUMERIC]
    assert table.column("b").values == [2.0, 4.5, 0.0]


def test_load_csv_missing_and_inferred_kinds(tmp_path):
    path = write(tmp_path, "data.csv", "num,cat,label\n1,x,yes\n,y,no\n3,,yes\n")
    table = load_csv(path, label_column="label")
    assert table.column("num").values == [1.0, None, 3.0]
    assert table.column("cat").kind == CATEGORICAL
    assert table.column("cat").values == ["x", "y", None]
    assert table.labels() == ["yes", "no", "yes"]


def test_mixed_column_becomes_categorical(tmp_path):
    path = write(tmp_path, "data.csv", "c\n1\nx\n3\n")
    column = load_csv(path).column("c")
    assert column.kind == CATEGORICAL
    assert column.values == ["1", "x", "3"]


def test_load_csv_rejects_extra_fields(tmp_path):
    path = write(tmp_path, "data.csv", "a,b\n1,2\n3,4,5\n")
    with pytest.raises(RaggedRows):
        load_csv(path)


def test_load_csv_rejects_empty_inputs(tmp_path):
    with pytest.raises(EmptyTable):
        load_csv(write(tmp_path, "empty.csv", ""))
    with pytest.raises(EmptyTable):
        load_csv(write(tmp_path, "header.csv", "a,b\n"))
    with pytest.raises(TableFileNotFound):
        load_csv(str(tmp_path / "missing.csv"))


def test_load_csv_rejects_missing_label(tmp_path):
    path = write(tmp_path, "data.csv", "a,label\n1,x\n2,\n")
    with pytest.raises(MissingLabel):
        load_csv(path, label_column="label")


def test_schema_declares_kinds_and_label(tmp_path):
    schema = load_schema(write(tmp_path, "schema.txt", "# kinds\nzip,categorical\nvalue,numeric\ntarget,label\n"))
    path = write(tmp_path, "data.csv", "zip,value,target\n02139,1.5,a\n10001,oops,b\n")
    table = load_csv(path, schema=schema)
    assert table.label_column == "target"
    assert table.column("zip").kind == CATEGORICAL
    assert table.column("zip").values == ["02139", "10001"]
    assert table.column("value").values == [1.5, None]


def test_schema_errors(tmp_path):
    with pytest.raises(ParseError, match="line 2"):
        load_schema(write(tmp_path, "bad.txt", "a,numeric\nb,ordinal\n"))
    schema = load_schema(write(tmp_path, "schema.txt", "a,numeric\n"))
    with pytest.raises(SchemaMismatch):
        load_csv(write(tmp_path, "data.csv", "a,b\n1,2\n"), schema=schema)


def test_fit_numeric_statistics():
    plan = fit_preprocess(DataTable([Column("x", NUMERIC, [1.0, 2.0, 3.0])]))
    assert plan.numeric["x"]["mean"] == pytest.approx(2.0)
    assert plan.numeric["x"]["std"] == pytest.approx(0.816497, abs=1e-6)


def test_constant_column_maps_to_zero():
    table = DataTable([Column("x", NUMERIC, [5.0, 5.0])])
    plan = fit_preprocess(table)
    assert plan.numeric["x"]["std"] == pytest.approx(1e-12)
    assert apply_preprocess(plan, table).data.tolist() == [[0.0], [0.0]]


def test_fit_categorical_statistics():
    plan = fit_preprocess(DataTable([Column("c", CATEGORICAL, ["a", "a", "b"])]))
    assert plan.categorical["c"] == {"categories": ["a", "b"], "mode": "a"}


def test_one_hot_known_and_unseen_categories():
    plan = fit_preprocess(DataTable([Column("c", CATEGORICAL, ["a", "b", "c"])]))
    encoded = apply_preprocess(plan, DataTable([Column("c", CATEGORICAL, ["b", "d"])]))
    assert encoded.data.tolist() == [[0.0, 1.0, 0.0], [0.0, 0.0, 0.0]]


def test_missing_numeric_is_imputed_with_mean():
    plan = PreprocessPlan([("x", NUMERIC)], {"x": {"mean": 2.0, "std": 1.0}}, {})
    encoded = apply_preprocess(plan, DataTable([Column("x", NUMERIC, [None, 4.0])]))
    assert encoded.data.tolist() == [[0.0], [2.0]]


def test_missing_categorical_is_imputed_with_mode(mixed_table):
    plan = fit_preprocess(mixed_table)
    encoded = apply_preprocess(plan, mixed_table)
    assert plan.width == 3
    assert encoded.shape == [4, 3]
    assert encoded.data[3, 1:].tolist() == [1.0, 0.0]
    assert encoded.data[3, 0] == pytest.approx(0.0, abs=1e-12)


def test_standardized_training_columns():
    rng = np.random.default_rng(0)
    table = DataTable([Column(f"x{i}", NUMERIC, list(rng.normal(5.0, 3.0, size=50))) for i in range(4)])
    encoded = apply_preprocess(fit_preprocess(table), table).data
    np.testing.assert_allclose(encoded.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(encoded.std(axis=0), 1.0, atol=1e-9)


def test_apply_rejects_other_schema(mixed_table):
    plan = fit_preprocess(mixed_table)
    with pytest.raises(SchemaMismatch):
        apply_preprocess(plan, DataTable([Column("age", NUMERIC, [1.0])]))


@pytest.mark.parametrize("n_rows, expected", [(10, (8, 2)), (9, (7, 2))])
def test_split_sizes(n_rows, expected):
    train, test = split_train_test(numeric_table(n_rows), 0.8, seed=0)
    assert (train.n_rows, test.n_rows) == expected


def test_split_is_deterministic_disjoint_and_exhaustive():
    table = numeric_table(20)
    first = split_train_test(table, 0.8, seed=3)
    second = split_train_test(table, 0.8, seed=3)
    assert first[0].column("x").values == second[0].column("x").values
    train_values = set(first[0].column("x").values)
    test_values = set(first[1].column("x").values)
    assert not train_values & test_values
    assert train_values | test_values == set(table.column("x").values)


def test_stratified_split_keeps_proportions():
    table = numeric_table(20, labels=["a"] * 10 + ["b"] * 10)
    train, test = split_train_test(table, 0.8, seed=1, stratify=True)
    assert sorted(test.labels()) == ["a", "a", "b", "b"]


def test_split_errors():
    with pytest.raises(TooFewRows):
        split_train_test(numeric_table(1), 0.8)
    with pytest.raises(InvalidValue):
        split_train_test(numeric_table(10), 1.0)
    with pytest.raises(NoLabels):
        split_train_test(numeric_table(10), 0.8, stratify=True)


def test_kfold_even_folds():
    folds = kfold(10, 5, seed=0)
    assert [len(val) for _, val in folds] == [2] * 5


def test_kfold_remainder_and_partition():
    folds = kfold(numeric_table(10), 3, seed=4)
    assert sorted(len(val) for _, val in folds) == [3, 3, 4]
    seen = np.concatenate([val for _, val in folds])
    assert sorted(seen.tolist()) == list(range(10))
    for train, val in folds:
        assert not set(train) & set(val)


@pytest.mark.parametrize("k", [1, 11])
def test_kfold_rejects_bad_k(k):
    with pytest.raises(InvalidK):
        kfold(10, k)


def test_split_and_kfold_partition_random_tables():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(2, 300))
        fraction = float(rng.uniform(0.05, 0.95))
        seed = int(rng.integers(0, 10_000))
        n_train = math.floor(fraction * n)
        table = numeric_table(n)
        if n_train < 1 or n_train >= n:
            with pytest.raises(TooFewRows):
                split_train_test(table, fraction, seed=seed)
        else:
            train, test = split_train_test(table, fraction, seed=seed)
            assert train.n_rows == n_train
            train_values = set(train.column("x").values)
            test_values = set(test.column("x").values)
            assert not train_values & test_values
            assert train_values | test_values == set(range(n))

        k = int(rng.integers(2, min(n, 12) + 1))
        folds = kfold(n, k, seed=seed)
        assert len(folds) == k
        sizes = [len(val) for _, val in folds]
        assert max(sizes) - min(sizes) <= 1
        assert sorted(np.concatenate([val for _, val in folds]).tolist()) == list(range(n))
        for train_idx, val_idx in folds:
            assert not set(train_idx) & set(val_idx)
            assert len(train_idx) + len(val_idx) == n


def test_views_without_augmentation_are_copies():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    view1, view2 = make_views(x, AugmentConfig(noise_sigma=0.0, mask_prob=0.0), seed=0)
    assert np.array_equal(view1.data, x.data)
    assert np.array_equal(view2.data, x.data)


def test_views_are_seeded():
    x = np.zeros((4, 3))
    aug = AugmentConfig(noise_sigma=0.5, mask_prob=0.2)
    first = make_views(x, aug, seed=9)
    second = make_views(x, aug, seed=9)
    assert np.array_equal(first[0].data, second[0].data)
    assert np.array_equal(first[1].data, second[1].data)
    assert not np.array_equal(first[0].data, first[1].data)


def test_view_noise_magnitude():
    x = np.zeros((1000, 100))
    view1, _ = make_views(x, AugmentConfig(noise_sigma=0.1, mask_prob=0.0), seed=0)
    expected = 0.1 * math.sqrt(2.0 / math.pi)
    assert np.abs(view1.data).mean() == pytest.approx(expected, rel=0.05)


def test_augment_config_validation():
    with pytest.raises(InvalidValue):
        AugmentConfig(noise_sigma=-0.1)
    with pytest.raises(InvalidValue):
        AugmentConfig(mask_prob=1.0)


def test_smote_leaves_balanced_input_alone():
    features = np.arange(8.0).reshape(4, 2)
    labels = ["a", "b", "a", "b"]
    out_features, out_labels = smote(features, labels, k_neighbors=1, seed=0)
    assert np.array_equal(out_features, features)
    assert out_labels == labels


def test_smote_interpolates_between_neighbors():
    features = np.vstack([np.full((5, 2), 5.0) + np.arange(5)[:, None], [[0.0, 0.0], [1.0, 1.0]]])
    labels = ["maj"] * 5 + ["min"] * 2
    out_features, out_labels = smote(features, labels, k_neighbors=1, seed=2)
    synthetic = out_features[len(labels):]
    assert out_labels.count("min") == 5
    assert np.array_equal(out_features[: len(labels)], features)
    assert np.allclose(synthetic[:, 0], synthetic[:, 1])
    assert synthetic.min() >= 0.0 and synthetic.max() <= 1.0


def test_smote_reaches_majority_count():
    rng = np.random.default_rng(0)
    features = rng.normal(size=(14, 3))
    labels = ["major"] * 10 + ["minor"] * 4
    _, out_labels = smote(features, labels, k_neighbors=5, seed=0)
    assert out_labels.count("minor") == 10
    assert out_labels.count("major") == 10


def test_smote_errors():
    with pytest.raises(ClassTooSmall):
        smote(np.zeros((4, 2)), ["a", "a", "a", "b"], k_neighbors=1)
    with pytest.raises(NoLabels):
        smote(np.zeros((4, 2)), [])


def on_segment_between(row, points):
    """True when row = p + g·(q - p) for some pair of points and g in [0, 1]."""
    offsets = row - points
    spans = points[None, :, :] - points[:, None, :]
    lengths = np.einsum("ijd,ijd->ij", spans, spans)
    gaps = np.where(lengths > 0, np.einsum("id,ijd->ij", offsets, spans) / np.where(lengths > 0, lengths, 1.0), 0.0)
    residual = np.linalg.norm(offsets[:, None, :] - gaps[..., None] * spans, axis=2)
    return bool(np.any((gaps >= -1e-12) & (gaps <= 1.0 + 1e-12) & (residual < 1e-9)))


def test_smote_random_imbalanced_sets():
    rng = np.random.default_rng(5)
    for trial in range(100):
        n_classes = int(rng.integers(2, 4))
        majority = int(rng.integers(5, 21))
        counts = [majority] + [int(rng.integers(2, majority + 1)) for _ in range(n_classes - 1)]
        labels = [f"c{index}" for index, count in enumerate(counts) for _ in range(count)]
        features = rng.normal(size=(len(labels), int(rng.integers(2, 5))))
        out_features, out_labels = smote(features, labels, k_neighbors=int(rng.integers(1, 6)), seed=trial)

        assert np.array_equal(out_features[: len(labels)], features)
        assert out_labels[: len(labels)] == labels
        assert all(out_labels.count(f"c{index}") == majority for index in range(n_classes))
        label_array = np.asarray(labels)
        for row, label in zip(out_features[len(labels):], out_labels[len(labels):]):
            assert on_segment_between(row, features[label_array == label])


def test_blobs_table_shape():
    table = make_blobs_table(n_rows=30, n_features=4, n_classes=3, seed=1)
    assert table.n_rows == 30
    assert len(table.feature_columns) == 4
    assert sorted(set(table.labels())) == ["0", "1", "2"]


def test_blobs_noise_features_carry_no_class_signal():
    table = make_blobs_table(n_rows=300, n_features=6, n_classes=3, std=1.0, seed=2, noise_features=4)
    assert len(table.feature_columns) == 6
    labels = np.asarray(table.labels())
    for name in ("f2", "f3", "f4", "f5"):
        values = np.asarray(table.column(name).values)
        class_means = [values[labels == cls].mean() for cls in ("0", "1", "2")]
        assert max(class_means) - min(class_means) < 0.6, name
    with pytest.raises(InvalidValue):
        make_blobs_table(n_rows=30, n_features=4, noise_features=4)
