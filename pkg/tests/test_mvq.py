"""Residual multi-codebook quantizer, its oracle, and the binary formats."""

import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from fmtasr import MultiCodebookQuantizer, compression_rate
from fmtasr.mvq import (
    CODEBOOK_SIZE,
    BadMagicError,
    FileFormatError,
    HeaderMismatchError,
    TruncatedPayloadError,
    read_codebooks,
    read_embeddings,
    read_indexes,
    write_codebooks,
    write_embeddings,
    write_indexes,
)


def brute_encode(codebooks: np.ndarray, point: np.ndarray) -> tuple[int, ...]:
    """Per-stage exhaustive nearest-neighbor search, lowest index on ties."""
    residual = point.astype(np.float64).copy()
    picks = []
    for entries in codebooks:
        best_i, best_d = 0, np.inf
        for i, entry in enumerate(entries):
            d = float(((residual - entry) ** 2).sum())
            if d < best_d:
                best_i, best_d = i, d
        picks.append(best_i)
        residual -= entries[best_i]
    return tuple(picks)


def random_quantizer(rng: np.random.Generator, n: int, dim: int) -> MultiCodebookQuantizer:
    cb = rng.normal(size=(n, CODEBOOK_SIZE, dim))
    return MultiCodebookQuantizer.from_codebooks(cb)


@pytest.fixture(scope="module")
def fitted():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(900, 5))
    return MultiCodebookQuantizer(n_codebooks=2, n_iters=3, random_state=0).fit(X), X


class TestFit:
    def test_attribute_shapes(self, fitted):
        q, X = fitted
        assert q.codebooks_.shape == (2, CODEBOOK_SIZE, 5)
        assert q.n_features_in_ == 5
        assert len(q.mse_traces_) == 2
        assert q.padded_stages_ == []

    def test_lloyd_mse_monotone_per_stage(self, fitted):
        q, _ = fitted
        for trace in q.mse_traces_:
            assert np.all(np.diff(trace) <= 1e-12)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(700, 4))
        a = MultiCodebookQuantizer(n_codebooks=2, n_iters=2, random_state=7).fit(X)
        b = MultiCodebookQuantizer(n_codebooks=2, n_iters=2, random_state=7).fit(X)
        np.testing.assert_array_equal(a.codebooks_, b.codebooks_)
        for ta, tb in zip(a.mse_traces_, b.mse_traces_):
            np.testing.assert_array_equal(ta, tb)

    def test_seed_changes_the_fit(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(300, 4))
        a = MultiCodebookQuantizer(n_codebooks=1, n_iters=2, random_state=0).fit(X)
        b = MultiCodebookQuantizer(n_codebooks=1, n_iters=2, random_state=1).fit(X)
        assert not np.array_equal(a.codebooks_, b.codebooks_)

    def test_residual_stage_improves_two_level_data(self):
        # coarse structure for stage one, fine offsets for stage two
        rng = np.random.default_rng(4)
        coarse = rng.normal(size=(CODEBOOK_SIZE, 6)) * 50.0
        fine = rng.normal(size=(997, 6))
        X = coarse[rng.integers(0, CODEBOOK_SIZE, size=997)] + fine
        q = MultiCodebookQuantizer(n_codebooks=2, n_iters=4, random_state=0).fit(X)
        assert q.mse_traces_[1][-1] < q.mse_traces_[0][-1]

    def test_256_distinct_points_reconstruct_exactly(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(CODEBOOK_SIZE, 3))
        q = MultiCodebookQuantizer(n_codebooks=1, n_iters=2, random_state=0).fit(X)
        assert q.mse_traces_[0][-1] == 0.0
        np.testing.assert_allclose(q.inverse_transform(q.transform(X)), X, atol=1e-12)

    def test_fewer_distinct_points_pad_with_zeros(self):
        rng = np.random.default_rng(6)
        distinct = rng.normal(size=(10, 4))
        X = distinct[rng.integers(0, 10, size=300)]
        with pytest.warns(RuntimeWarning, match="padding codebook"):
            q = MultiCodebookQuantizer(n_codebooks=2, n_iters=3, random_state=0).fit(X)
        assert q.padded_stages_ == [0, 1]
        # stage one memorizes the ten values, so its residuals are zero
        assert q.mse_traces_[0][-1] == 0.0
        assert np.all(q.codebooks_[0][10:] == 0.0)
        codes = q.transform(X)
        np.testing.assert_allclose(q.inverse_transform(codes), X, atol=1e-12)

    def test_too_few_points(self):
        with pytest.raises(ValueError, match="at least 256 points"):
            MultiCodebookQuantizer().fit(np.zeros((100, 3)))

    def test_nan_rejected(self):
        X = np.zeros((300, 3))
        X[0, 0] = np.nan
        with pytest.raises(ValueError):
            MultiCodebookQuantizer().fit(X)

    def test_parameter_validation(self):
        X = np.zeros((300, 3))
        with pytest.raises(ValueError, match="n_codebooks"):
            MultiCodebookQuantizer(n_codebooks=0).fit(X)
        with pytest.raises(ValueError, match="n_iters"):
            MultiCodebookQuantizer(n_iters=0).fit(X)


class TestEncode:
    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(7)
        q = random_quantizer(rng, 3, 4)
        X = rng.normal(size=(100, 4)) * 2.0
        codes = q.transform(X)
        assert codes.dtype == np.uint8
        for point, row in zip(X, codes):
            assert tuple(row) == brute_encode(q.codebooks_, point)

    def test_duplicate_entries_break_ties_low(self):
        rng = np.random.default_rng(8)
        cb = rng.normal(size=(1, CODEBOOK_SIZE, 3))
        cb[0, 200] = cb[0, 3]  # exact duplicate at a higher index
        q = MultiCodebookQuantizer.from_codebooks(cb)
        hits = q.transform(cb[0, 200][None, :])
        assert hits[0, 0] == 3

    def test_output_range_and_shape(self, fitted):
        q, X = fitted
        codes = q.transform(X)
        assert codes.shape == (X.shape[0], 2)
        assert codes.min() >= 0 and codes.max() < CODEBOOK_SIZE

    def test_requires_fit(self):
        with pytest.raises(NotFittedError):
            MultiCodebookQuantizer().transform(np.zeros((2, 3)))

    def test_dimension_mismatch(self, fitted):
        q, _ = fitted
        with pytest.raises(ValueError, match="features"):
            q.transform(np.zeros((2, 9)))


class TestReconstruct:
    def test_single_stage_returns_the_entry(self):
        rng = np.random.default_rng(9)
        q = random_quantizer(rng, 1, 4)
        codes = np.array([[17], [255]], dtype=np.uint8)
        want = q.codebooks_[0][[17, 255]]
        np.testing.assert_array_equal(q.inverse_transform(codes), want)

    def test_all_zero_codebooks_reconstruct_zero(self):
        q = MultiCodebookQuantizer.from_codebooks(np.zeros((3, CODEBOOK_SIZE, 2)))
        codes = np.array([[0, 10, 255]], dtype=np.uint8)
        np.testing.assert_array_equal(q.inverse_transform(codes), np.zeros((1, 2)))

    def test_zero_entry_bounds_error_by_input_norm(self):
        # with a zero vector in every codebook, greedy never loses to it
        rng = np.random.default_rng(10)
        cb = rng.normal(size=(3, CODEBOOK_SIZE, 5))
        cb[:, 0] = 0.0
        q = MultiCodebookQuantizer.from_codebooks(cb)
        X = rng.normal(size=(50, 5)) * 3.0
        err = ((X - q.inverse_transform(q.transform(X))) ** 2).sum(axis=1)
        norms = (X**2).sum(axis=1)
        assert np.all(err <= norms + 1e-12)

    def test_error_non_increasing_in_stage_count(self):
        rng = np.random.default_rng(11)
        cb = rng.normal(size=(4, CODEBOOK_SIZE, 5))
        cb[:, 0] = 0.0
        X = rng.normal(size=(50, 5)) * 3.0
        previous = None
        for n in range(1, 5):
            q = MultiCodebookQuantizer.from_codebooks(cb[:n])
            err = ((X - q.inverse_transform(q.transform(X))) ** 2).sum(axis=1)
            if previous is not None:
                assert np.all(err <= previous + 1e-12)
            previous = err

    def test_index_validation(self, fitted):
        q, _ = fitted
        with pytest.raises(ValueError, match="integers"):
            q.inverse_transform(np.zeros((2, 2)))
        with pytest.raises(ValueError, match="must be"):
            q.inverse_transform(np.zeros((2, 5), dtype=np.int64))
        with pytest.raises(ValueError, match="outside"):
            q.inverse_transform(np.array([[0, 256]], dtype=np.int64))

    def test_from_codebooks_validation(self):
        with pytest.raises(ValueError, match="codebooks must be"):
            MultiCodebookQuantizer.from_codebooks(np.zeros((2, 12, 3)))


class TestCompressionRate:
    def test_reference_configuration(self):
        assert compression_rate(512, 4, 16) == 128.0

    def test_fewer_codebooks_compress_more(self):
        assert compression_rate(512, 4, 8) == 256.0

    def test_unit_case(self):
        assert compression_rate(1, 1, 1) == 1.0

    def test_positive_arguments_required(self):
        for args in ((0, 4, 16), (512, 0, 16), (512, 4, 0)):
            with pytest.raises(ValueError, match="positive"):
                compression_rate(*args)


class TestIndexFile:
    @pytest.fixture
    def dataset(self):
        rng = np.random.default_rng(12)
        return [
            rng.integers(0, 256, size=(int(t), 4), dtype=np.uint8)
            for t in rng.integers(1, 9, size=5)
        ]

    def test_round_trip_bit_identical(self, tmp_path, dataset):
        path = tmp_path / "data.ci"
        write_indexes(path, dataset)
        back = read_indexes(path)
        assert len(back) == len(dataset)
        for a, b in zip(dataset, back):
            assert b.dtype == np.uint8
            np.testing.assert_array_equal(a, b)

    def test_file_size_is_exact(self, tmp_path, dataset):
        path = tmp_path / "data.ci"
        write_indexes(path, dataset)
        want = 4 + 1 + 4 + sum(4 + a.shape[0] * a.shape[1] for a in dataset)
        assert path.stat().st_size == want

    def test_empty_dataset(self, tmp_path):
        path = tmp_path / "empty.ci"
        write_indexes(path, [], n_codebooks=7)
        assert path.stat().st_size == 9
        assert read_indexes(path, expected_n=7) == []

    def test_empty_dataset_needs_codebook_count(self, tmp_path):
        with pytest.raises(ValueError, match="n_codebooks"):
            write_indexes(tmp_path / "x.ci", [])

    def test_expected_n_mismatch(self, tmp_path, dataset):
        path = tmp_path / "data.ci"
        write_indexes(path, dataset)
        with pytest.raises(HeaderMismatchError, match="codebooks"):
            read_indexes(path, expected_n=9)

    def test_truncation_detected(self, tmp_path, dataset):
        path = tmp_path / "data.ci"
        write_indexes(path, dataset)
        blob = path.read_bytes()
        for cut in (len(blob) - 1, 7, 4):
            clipped = tmp_path / "clipped.ci"
            clipped.write_bytes(blob[:cut])
            with pytest.raises(TruncatedPayloadError):
                read_indexes(clipped)

    def test_bad_magic_detected(self, tmp_path, dataset):
        path = tmp_path / "data.ci"
        write_indexes(path, dataset)
        blob = bytearray(path.read_bytes())
        blob[0] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(BadMagicError):
            read_indexes(path)

    def test_trailing_bytes_detected(self, tmp_path, dataset):
        path = tmp_path / "data.ci"
        write_indexes(path, dataset)
        path.write_bytes(path.read_bytes() + b"x")
        with pytest.raises(HeaderMismatchError, match="trailing"):
            read_indexes(path)

    def test_error_classes_are_value_errors(self):
        assert issubclass(BadMagicError, FileFormatError)
        assert issubclass(TruncatedPayloadError, FileFormatError)
        assert issubclass(HeaderMismatchError, FileFormatError)
        assert issubclass(FileFormatError, ValueError)

    def test_write_validation(self, tmp_path):
        path = tmp_path / "x.ci"
        with pytest.raises(ValueError, match="2-D"):
            write_indexes(path, [np.zeros(3, dtype=np.uint8)])
        with pytest.raises(ValueError, match="integers"):
            write_indexes(path, [np.zeros((2, 2))])
        with pytest.raises(ValueError, match="outside"):
            write_indexes(path, [np.full((2, 2), 300, dtype=np.int64)])
        with pytest.raises(ValueError, match="disagree"):
            write_indexes(
                path,
                [np.zeros((2, 2), dtype=np.uint8), np.zeros((2, 3), dtype=np.uint8)],
            )

    def test_round_trip_through_quantizer(self, tmp_path, fitted):
        q, X = fitted
        utts = [q.transform(X[:7]), q.transform(X[7:12])]
        path = tmp_path / "q.ci"
        write_indexes(path, utts)
        back = read_indexes(path, expected_n=2)
        for a, b in zip(utts, back):
            np.testing.assert_array_equal(a, b)


class TestCodebookFile:
    def test_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(13)
        cb = rng.normal(size=(3, CODEBOOK_SIZE, 6))
        path = tmp_path / "cb.mvqc"
        write_codebooks(path, cb)
        np.testing.assert_array_equal(read_codebooks(path), cb)
        assert path.stat().st_size == 4 + 1 + 4 + 3 * CODEBOOK_SIZE * 6 * 8

    def test_truncation_detected(self, tmp_path):
        path = tmp_path / "cb.mvqc"
        write_codebooks(path, np.zeros((1, CODEBOOK_SIZE, 2)))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(TruncatedPayloadError):
            read_codebooks(path)

    def test_bad_magic_detected(self, tmp_path):
        path = tmp_path / "cb.mvqc"
        path.write_bytes(b"NOPE" + bytes(16))
        with pytest.raises(BadMagicError):
            read_codebooks(path)

    def test_shape_validation(self, tmp_path):
        with pytest.raises(ValueError, match="codebooks must be"):
            write_codebooks(tmp_path / "cb.mvqc", np.zeros((1, 2, 3)))


class TestEmbeddingFile:
    def test_round_trip_preserves_order_and_bits(self, tmp_path):
        rng = np.random.default_rng(14)
        utts = [rng.normal(size=(int(t), 5)) for t in rng.integers(1, 6, size=4)]
        path = tmp_path / "emb.f64"
        write_embeddings(path, utts)
        back = read_embeddings(path)
        assert len(back) == 4
        for a, b in zip(utts, back):
            np.testing.assert_array_equal(a, b)
        want = 4 + 4 + 4 + sum(4 + a.size * 8 for a in utts)
        assert path.stat().st_size == want

    def test_truncation_detected(self, tmp_path):
        path = tmp_path / "emb.f64"
        write_embeddings(path, [np.zeros((2, 3))])
        path.write_bytes(path.read_bytes()[:-1])
        with pytest.raises(TruncatedPayloadError):
            read_embeddings(path)
