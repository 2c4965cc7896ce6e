import numpy as np
import pytest

from decdgp.data import (
    CsvSchema,
    Dataset,
    SplitSpec,
    fit_normalizer,
    init_inducing,
    load_csv,
    make_arm_kinematics,
    make_benchmark,
    make_synthetic,
    parse_manifest,
    split,
)
from decdgp.errors import ConfigurationError, IngestionError


class TestDataset:
    def test_shape_and_finiteness_checks(self):
        with pytest.raises(IngestionError):
            Dataset(np.zeros(3), np.zeros((3, 1)))
        with pytest.raises(IngestionError):
            Dataset(np.zeros((3, 1)), np.zeros((2, 1)))
        with pytest.raises(IngestionError):
            Dataset(np.zeros((1, 1)), np.zeros((1, 1)))
        bad = np.zeros((3, 1))
        bad[1, 0] = np.nan
        with pytest.raises(IngestionError):
            Dataset(bad, np.zeros((3, 1)))

    def test_binary_feature_inference(self):
        X = np.array([[0.0, 0.3], [1.0, -1.2], [0.0, 0.8]])
        ds = Dataset(X, np.zeros((3, 1)))
        assert ds.feature_kinds == ["binary", "continuous"]

    def test_explicit_feature_kinds_must_match_width(self):
        with pytest.raises(IngestionError):
            Dataset(np.zeros((3, 2)), np.zeros((3, 1)), feature_kinds=["continuous"])

    def test_subset_carries_metadata(self):
        ds = Dataset(np.arange(8.0).reshape(4, 2), np.zeros((4, 1)), name="toy")
        sub = ds.subset(np.array([2, 0]))
        assert sub.name == "toy"
        assert sub.feature_kinds == ds.feature_kinds
        np.testing.assert_array_equal(sub.X, ds.X[[2, 0]])


class TestLoadCsv:
    def test_smallest_file(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("1.0,2.0\n3.0,4.0\n", encoding="utf-8")
        ds = load_csv(path, CsvSchema())
        np.testing.assert_array_equal(ds.X, [[1.0], [3.0]])
        np.testing.assert_array_equal(ds.Y, [[2.0], [4.0]])
        assert ds.name == "t"
        assert ds.rejected_rows == 0

    def test_malformed_rows_are_counted_not_fatal(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text(
            "1,2\nfoo,bar\n3,4\n5,6,7\n8,9\n", encoding="utf-8"
        )
        ds = load_csv(path, CsvSchema())
        assert ds.num_points == 3
        assert ds.rejected_rows == 2

    def test_no_parseable_rows_names_the_first_bad_line(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("a,b\nc,d\n", encoding="utf-8")
        with pytest.raises(IngestionError, match="line 1"):
            load_csv(path, CsvSchema())

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestionError):
            load_csv(tmp_path / "absent.csv", CsvSchema())

    def test_header_row_is_skipped(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("x,y\n1,2\n3,4\n", encoding="utf-8")
        ds = load_csv(path, CsvSchema(has_header=True))
        assert ds.num_points == 2
        assert ds.rejected_rows == 0

    def test_target_column_selection(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("1,2,3\n4,5,6\n", encoding="utf-8")
        ds = load_csv(path, CsvSchema(target_column=0))
        np.testing.assert_array_equal(ds.Y, [[1.0], [4.0]])
        np.testing.assert_array_equal(ds.X, [[2.0, 3.0], [5.0, 6.0]])

    def test_target_column_out_of_range(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("1,2\n3,4\n", encoding="utf-8")
        with pytest.raises(ConfigurationError):
            load_csv(path, CsvSchema(target_column=5))

    def test_round_trip_is_lossless(self, tmp_path):
        rng = np.random.default_rng(0)
        data = rng.standard_normal((20, 4))
        path = tmp_path / "t.csv"
        np.savetxt(path, data, delimiter=",", fmt="%.17g")
        ds = load_csv(path, CsvSchema())
        np.testing.assert_array_equal(ds.X, data[:, :3])
        np.testing.assert_array_equal(ds.Y, data[:, 3:])


class TestSplit:
    def test_sizes(self):
        ds = make_synthetic("linear", 10, 0.0, seed=0)
        train, test = split(ds, SplitSpec(test_fraction=0.2, seed=0))
        assert train.num_points == 8
        assert test.num_points == 2

    def test_partition_is_exact(self):
        ds = make_synthetic("linear", 25, 0.0, seed=1)
        train, test = split(ds, SplitSpec(seed=3))
        merged = np.concatenate([train.X, test.X])
        np.testing.assert_array_equal(np.sort(merged, axis=0), np.sort(ds.X, axis=0))

    def test_same_spec_same_split(self):
        ds = make_synthetic("sinusoid", 30, 0.1, seed=2)
        a = split(ds, SplitSpec(repeat_index=1, seed=5))
        b = split(ds, SplitSpec(repeat_index=1, seed=5))
        np.testing.assert_array_equal(a[0].X, b[0].X)
        np.testing.assert_array_equal(a[1].X, b[1].X)

    def test_five_repeats_are_distinct(self):
        ds = make_synthetic("sinusoid", 40, 0.1, seed=2)
        test_sets = [
            split(ds, SplitSpec(repeat_index=r, seed=5))[1].X.tobytes()
            for r in range(5)
        ]
        assert len(set(test_sets)) == 5

    def test_degenerate_specs_rejected(self):
        ds = make_synthetic("linear", 10, 0.0, seed=0)
        with pytest.raises(ConfigurationError):
            SplitSpec(test_fraction=0.0)
        with pytest.raises(ConfigurationError):
            SplitSpec(repeat_index=5)
        with pytest.raises(ConfigurationError):
            split(ds, SplitSpec(test_fraction=0.05))


class TestNormalizer:
    def test_train_columns_become_standard(self):
        rng = np.random.default_rng(3)
        ds = Dataset(rng.normal(5.0, 3.0, (200, 3)), rng.normal(-2.0, 0.5, (200, 1)))
        norm = fit_normalizer(ds)
        out = norm.transform(ds)
        np.testing.assert_allclose(out.X.mean(axis=0), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.X.std(axis=0), 1.0, atol=1e-10)
        np.testing.assert_allclose(out.Y.mean(axis=0), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.Y.std(axis=0), 1.0, atol=1e-10)

    def test_only_training_statistics_enter(self):
        rng = np.random.default_rng(4)
        train = Dataset(rng.normal(1.0, 2.0, (50, 2)), rng.normal(size=(50, 1)))
        norm = fit_normalizer(train)
        np.testing.assert_allclose(norm.x_mean, train.X.mean(axis=0), rtol=1e-15)
        np.testing.assert_allclose(norm.x_std, train.X.std(axis=0), rtol=1e-15)
        np.testing.assert_allclose(norm.y_mean, train.Y.mean(axis=0), rtol=1e-15)

    def test_constant_column_flagged_and_centered(self):
        X = np.column_stack([np.full(10, 7.0), np.arange(10.0)])
        ds = Dataset(X, np.arange(10.0)[:, None])
        norm = fit_normalizer(ds)
        assert norm.x_constant.tolist() == [True, False]
        out = norm.transform_x(X)
        np.testing.assert_allclose(out[:, 0], 0.0, atol=1e-12)

    def test_inverse_is_identity(self):
        rng = np.random.default_rng(5)
        ds = Dataset(rng.normal(2.0, 4.0, (30, 2)), rng.normal(size=(30, 1)))
        norm = fit_normalizer(ds)
        np.testing.assert_allclose(norm.inverse_x(norm.transform_x(ds.X)), ds.X,
                                   atol=1e-12)
        np.testing.assert_allclose(norm.inverse_y(norm.transform_y(ds.Y)), ds.Y,
                                   atol=1e-12)

    def test_log_jacobian_matches_stds(self):
        rng = np.random.default_rng(6)
        ds = Dataset(rng.normal(size=(40, 2)), rng.normal(0.0, 3.0, (40, 1)))
        norm = fit_normalizer(ds)
        assert norm.log_jacobian_y() == pytest.approx(
            -float(np.log(ds.Y.std(axis=0)).sum()), rel=1e-14
        )

    def test_dict_round_trip(self):
        rng = np.random.default_rng(7)
        ds = Dataset(rng.normal(size=(20, 3)), rng.normal(size=(20, 1)))
        norm = fit_normalizer(ds)
        back = type(norm).from_dict(norm.to_dict())
        np.testing.assert_array_equal(back.x_mean, norm.x_mean)
        np.testing.assert_array_equal(back.y_std, norm.y_std)
        np.testing.assert_array_equal(back.x_constant, norm.x_constant)


class TestInitInducing:
    def test_full_draw_is_a_permutation(self):
        X = np.random.default_rng(8).normal(size=(12, 2))
        Z = init_inducing(X, 12, seed=0)
        np.testing.assert_array_equal(
            np.sort(Z.ravel()), np.sort(X.ravel())
        )

    def test_single_point(self):
        X = np.random.default_rng(9).normal(size=(5, 3))
        Z = init_inducing(X, 1, seed=0)
        assert Z.shape == (1, 3)
        assert any(np.array_equal(Z[0], row) for row in X)

    def test_rows_come_from_training_data(self):
        X = np.random.default_rng(10).normal(size=(20, 2))
        Z = init_inducing(X, 7, seed=4)
        for row in Z:
            assert any(np.array_equal(row, x) for x in X)

    def test_seed_determinism(self):
        X = np.random.default_rng(11).normal(size=(15, 2))
        np.testing.assert_array_equal(init_inducing(X, 6, 3), init_inducing(X, 6, 3))
        assert not np.array_equal(init_inducing(X, 6, 3), init_inducing(X, 6, 4))

    def test_invalid_counts(self):
        X = np.zeros((4, 1))
        with pytest.raises(ConfigurationError):
            init_inducing(X, 5, 0)
        with pytest.raises(ConfigurationError):
            init_inducing(X, 0, 0)


class TestSynthetic:
    def test_noiseless_linear_is_exact(self):
        ds = make_synthetic("linear", 50, 0.0, seed=0)
        np.testing.assert_array_equal(ds.Y, 2.0 * ds.X)

    def test_sinusoid_mean_is_near_zero(self):
        N = 4000
        ds = make_synthetic("sinusoid", N, 0.1, seed=1)
        assert abs(float(ds.Y.mean())) < 3.0 / np.sqrt(N)

    def test_inputs_stay_in_range(self):
        ds = make_synthetic("step", 200, 0.05, seed=2)
        assert ds.X.min() >= -2.0 and ds.X.max() <= 2.0

    def test_determinism_and_kinds(self):
        a = make_synthetic("sinusoid", 30, 0.1, seed=5)
        b = make_synthetic("sinusoid", 30, 0.1, seed=5)
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.Y, b.Y)
        with pytest.raises(ConfigurationError):
            make_synthetic("sawtooth", 30, 0.1, seed=5)


class TestArmKinematics:
    def test_shape_and_name(self):
        ds = make_arm_kinematics(100, seed=0)
        assert ds.X.shape == (100, 8)
        assert ds.Y.shape == (100, 1)
        assert ds.name == "arm"

    def test_determinism(self):
        a = make_arm_kinematics(50, seed=3)
        b = make_arm_kinematics(50, seed=3)
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.Y, b.Y)

    def test_target_depends_on_angles(self):
        ds = make_arm_kinematics(200, noise_std=0.0, seed=1)
        assert float(ds.Y.std()) > 0.01


class TestBenchmarkData:
    def test_shapes(self):
        ds = make_benchmark(64, 5, seed=0)
        assert ds.X.shape == (64, 5)
        assert ds.Y.shape == (64, 1)

    def test_binary_mode(self):
        ds = make_benchmark(64, 3, seed=0, binary=True)
        assert set(np.unique(ds.X)) <= {0.0, 1.0}
        assert ds.feature_kinds == ["binary"] * 3


class TestManifest:
    def test_parse_and_resolve(self, tmp_path):
        (tmp_path / "files").mkdir()
        csv_path = tmp_path / "files" / "toy.csv"
        csv_path.write_text("1,2\n3,4\n", encoding="utf-8")
        manifest = tmp_path / "datasets.manifest"
        manifest.write_text(
            "# local datasets\n"
            "\n"
            "toy.path = files/toy.csv\n"
            "toy.header = false\n"
            "toy.target = 0\n"
            "other.path = /abs/elsewhere.csv\n"
            "other.delimiter = ;\n",
            encoding="utf-8",
        )
        entries = parse_manifest(manifest)
        assert set(entries) == {"toy", "other"}
        assert entries["toy"].path == csv_path
        assert entries["toy"].schema.target_column == 0
        assert entries["toy"].schema.has_header is False
        assert str(entries["other"].path) == "/abs/elsewhere.csv"
        assert entries["other"].schema.delimiter == ";"

        ds = load_csv(entries["toy"].path, entries["toy"].schema)
        np.testing.assert_array_equal(ds.Y, [[1.0], [3.0]])

    def test_entry_without_path_rejected(self, tmp_path):
        manifest = tmp_path / "m"
        manifest.write_text("toy.header = true\n", encoding="utf-8")
        with pytest.raises(IngestionError):
            parse_manifest(manifest)

    def test_garbled_line_rejected(self, tmp_path):
        manifest = tmp_path / "m"
        manifest.write_text("just words\n", encoding="utf-8")
        with pytest.raises(IngestionError, match="m:1"):
            parse_manifest(manifest)

    def test_non_integer_target_rejected(self, tmp_path):
        manifest = tmp_path / "m"
        manifest.write_text("toy.path = a.csv\ntoy.target = last\n", encoding="utf-8")
        with pytest.raises(IngestionError):
            parse_manifest(manifest)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(IngestionError):
            parse_manifest(tmp_path / "none")
