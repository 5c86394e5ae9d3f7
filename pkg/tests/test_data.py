import numpy as np
import pytest
from hypothesis import given, strategies as st

from pmsvm.data import (
    Dataset,
    apply_minmax,
    fit_minmax,
    load_csv,
    load_libsvm,
    project_unit_ball,
    save_libsvm,
    stratified_split,
    synth_blobs,
)
from pmsvm.numerics import RandomSource


def small_ds():
    X = np.array([[0.0, 1.0], [2.0, 3.0], [4.0, 5.0], [6.0, 7.0]])
    y = np.array([0, 1, 0, 1])
    return Dataset(X, y, 2)


class TestDataset:
    def test_basic_shape_accessors(self):
        ds = small_ds()
        assert ds.n == 4 and ds.d == 2 and ds.num_classes == 2
        assert list(ds.class_counts()) == [2, 2]

    def test_arrays_are_frozen(self):
        ds = small_ds()
        with pytest.raises(ValueError):
            ds.features[0, 0] = 99.0
        with pytest.raises(ValueError):
            ds.labels[0] = 1

    def test_constructor_copies_input(self):
        X = np.zeros((3, 2))
        y = np.array([0, 1, 0])
        ds = Dataset(X, y, 2)
        X[0, 0] = 5.0
        assert ds.features[0, 0] == 0.0

    def test_rejects_bad_shapes_and_labels(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros(3), np.array([0, 1, 0]), 2)
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 2)), np.array([0, 1]), 2)
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 2)), np.array([0, 1, 2]), 2)
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 2)), np.array([0, -1, 0]), 2)
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 2)), np.array([0, 0, 0]), 1)

    def test_subset_and_relabel(self):
        ds = small_ds()
        sub = ds.subset(np.array([1, 3]))
        assert sub.n == 2
        assert np.array_equal(sub.labels, [1, 1])
        assert np.array_equal(ds.relabel_binary(0), [1.0, -1.0, 1.0, -1.0])


class TestCsv:
    def test_round_trip_with_header_and_string_labels(self, tmp_path):
        p = tmp_path / "data.csv"
        p.write_text("a,b,species\n1.5,2.0,cat\n3.0,4.0,dog\n5.0,6.0,cat\n")
        ds = load_csv(str(p), label_column=2, has_header=True)
        assert ds.n == 3 and ds.d == 2 and ds.num_classes == 2
        # first-appearance order: cat -> 0, dog -> 1
        assert np.array_equal(ds.labels, [0, 1, 0])
        assert ds.label_names == ("cat", "dog")
        assert ds.features[1, 0] == 3.0

    def test_negative_label_column(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("1,2,0\n3,4,1\n")
        ds = load_csv(str(p), label_column=-1)
        assert ds.d == 2 and np.array_equal(ds.labels, [0, 1])

    def test_error_names_row_and_column(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("1,2,0\n1,oops,1\n")
        with pytest.raises(ValueError, match="row 2.*column 1"):
            load_csv(str(p), label_column=2)

    def test_single_label_rejected(self, tmp_path):
        p = tmp_path / "one.csv"
        p.write_text("1,2,0\n3,4,0\n")
        with pytest.raises(ValueError, match="2 distinct labels"):
            load_csv(str(p), label_column=2)

    def test_empty_rejected(self, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text("")
        with pytest.raises(ValueError, match="no data rows"):
            load_csv(str(p), label_column=0)


class TestLibsvm:
    def test_parse_and_round_trip(self, tmp_path):
        p = tmp_path / "d.libsvm"
        p.write_text("2 1:0.5 3:1.25\n1 2:-3\n2 1:7\n")
        ds = load_libsvm(str(p))
        assert ds.n == 3 and ds.d == 3
        assert np.array_equal(ds.labels, [0, 1, 0])  # first-appearance
        expected = np.array([[0.5, 0, 1.25], [0, -3, 0], [7, 0, 0]])
        assert np.array_equal(ds.features, expected)

        q = tmp_path / "out.libsvm"
        save_libsvm(str(q), ds)
        back = load_libsvm(str(q))
        assert np.array_equal(back.features, ds.features)
        assert np.array_equal(back.labels, ds.labels)

    def test_nonincreasing_index_rejected_with_line(self, tmp_path):
        p = tmp_path / "d.libsvm"
        p.write_text("1 1:1 2:2\n2 3:1 3:2\n")
        with pytest.raises(ValueError, match="line 2"):
            load_libsvm(str(p))

    def test_zero_index_rejected(self, tmp_path):
        p = tmp_path / "d.libsvm"
        p.write_text("1 0:5\n2 1:1\n")
        with pytest.raises(ValueError, match="1-based"):
            load_libsvm(str(p))

    def test_malformed_token(self, tmp_path):
        p = tmp_path / "d.libsvm"
        p.write_text("1 1:x\n")
        with pytest.raises(ValueError, match="malformed token"):
            load_libsvm(str(p))

    def test_empty_file(self, tmp_path):
        p = tmp_path / "d.libsvm"
        p.write_text("\n\n")
        with pytest.raises(ValueError, match="no samples"):
            load_libsvm(str(p))


class TestScaling:
    def test_minmax_maps_train_to_unit_box(self):
        ds = small_ds()
        s = fit_minmax(ds)
        out = apply_minmax(s, ds)
        assert out.features.min() == 0.0 and out.features.max() == 1.0

    def test_zero_range_feature_maps_to_zero(self):
        X = np.array([[5.0, 1.0], [5.0, 3.0]])
        ds = Dataset(X, np.array([0, 1]), 2)
        out = apply_minmax(fit_minmax(ds), ds)
        assert np.array_equal(out.features[:, 0], [0.0, 0.0])
        assert np.array_equal(out.features[:, 1], [0.0, 1.0])

    def test_test_rows_clamp_into_box(self):
        train = small_ds()
        s = fit_minmax(train)
        test = Dataset(np.array([[-10.0, 100.0]]), np.array([0]), 2)
        out = apply_minmax(s, test)
        assert out.features.min() >= 0.0 and out.features.max() <= 1.0

    def test_dimension_mismatch(self):
        s = fit_minmax(small_ds())
        other = Dataset(np.zeros((2, 3)), np.array([0, 1]), 2)
        with pytest.raises(ValueError, match="dimension"):
            apply_minmax(s, other)

    def test_unit_ball_projection(self):
        X = np.array([[3.0, 4.0], [0.3, 0.4]])
        ds = Dataset(X, np.array([0, 1]), 2)
        out = project_unit_ball(ds)
        assert np.linalg.norm(out.features[0]) == pytest.approx(1.0)
        # short rows untouched bit-for-bit
        assert np.array_equal(out.features[1], X[1])

    @given(st.integers(0, 2**32))
    def test_projection_never_exceeds_unit_norm(self, seed):
        X = RandomSource(seed).gen.standard_normal((20, 4)) * 3
        ds = Dataset(X, np.zeros(20, dtype=int) % 2 + np.arange(20) % 2, 2)
        out = project_unit_ball(ds)
        assert np.linalg.norm(out.features, axis=1).max() <= 1.0 + 1e-12


class TestSplit:
    def test_partition_and_stratification(self):
        rng = RandomSource(0)
        X = np.arange(60, dtype=float).reshape(30, 2)
        y = np.repeat([0, 1, 2], 10)
        ds = Dataset(X, y, 3)
        tr, te = stratified_split(ds, 0.3, rng)
        assert tr.n + te.n == 30
        assert list(te.class_counts()) == [3, 3, 3]
        # no row in both halves
        all_rows = np.vstack([tr.features, te.features])
        assert len(np.unique(all_rows[:, 0])) == 30

    def test_rounding_half_up_and_train_floor(self):
        rng = RandomSource(1)
        # 3 samples per class at fraction 0.5 -> round(1.5) = 2, capped to 2
        y = np.repeat([0, 1], 3)
        ds = Dataset(np.arange(12, dtype=float).reshape(6, 2), y, 2)
        tr, te = stratified_split(ds, 0.5, rng)
        assert list(te.class_counts()) == [2, 2]
        assert list(tr.class_counts()) == [1, 1]

    def test_every_class_keeps_a_training_sample_at_fraction_one(self):
        ds = small_ds()
        tr, te = stratified_split(ds, 1.0, RandomSource(2))
        assert (tr.class_counts() >= 1).all()

    def test_single_sample_class_rejected(self):
        ds = Dataset(np.zeros((3, 2)), np.array([0, 0, 1]), 2)
        with pytest.raises(ValueError, match="class 1"):
            stratified_split(ds, 0.5, RandomSource(0))

    def test_split_deterministic_in_seed(self):
        ds = synth_blobs(3, 20, 4, 2.0, RandomSource(5))
        a = stratified_split(ds, 0.25, RandomSource(9))
        b = stratified_split(ds, 0.25, RandomSource(9))
        assert np.array_equal(a[0].features, b[0].features)
        assert np.array_equal(a[1].labels, b[1].labels)


class TestSynthBlobs:
    def test_shapes_counts_and_scaling(self):
        ds = synth_blobs(4, 25, 6, 3.0, RandomSource(3))
        assert ds.n == 100 and ds.d == 6 and ds.num_classes == 4
        assert list(ds.class_counts()) == [25, 25, 25, 25]
        assert np.linalg.norm(ds.features, axis=1).max() <= 1.0 + 1e-12
        assert ds.features.min() >= 0.0

    def test_separation_improves_linear_separability(self):
        # with a huge separation the nearest-mean rule should be perfect;
        # verify via class-mean distances rather than training a model
        ds = synth_blobs(3, 30, 2, 30.0, RandomSource(4))
        means = np.stack(
            [ds.features[ds.labels == k].mean(axis=0) for k in range(3)]
        )
        d2 = ((ds.features[:, None, :] - means[None]) ** 2).sum(-1)
        assert (d2.argmin(axis=1) == ds.labels).mean() > 0.99

    def test_validation(self):
        with pytest.raises(ValueError):
            synth_blobs(1, 10, 3, 1.0, RandomSource(0))
        with pytest.raises(ValueError):
            synth_blobs(3, 10, 1, 1.0, RandomSource(0))
