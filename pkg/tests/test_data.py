import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmfpp.data import (
    SparseRatings, compute_stats, load_csv_triplets, load_matrix_market,
    same_ratings, train_test_split, write_csv_triplets, write_matrix_market,
)
from bmfpp.errors import ConfigError, DataError, ParseError


def make_ratings(n_rows=3, n_cols=4, entries=((0, 0, 5.0), (2, 3, 1.0))):
    rows, cols, vals = zip(*entries) if entries else ((), (), ())
    return SparseRatings(n_rows, n_cols, np.array(rows), np.array(cols), np.array(vals))


class TestSparseRatings:
    def test_scale_defaults_to_observed(self):
        r = make_ratings()
        assert (r.scale_min, r.scale_max) == (1.0, 5.0)

    def test_duplicate_rejected(self):
        with pytest.raises(DataError, match="duplicate"):
            make_ratings(entries=((0, 0, 1.0), (0, 0, 2.0)))

    def test_out_of_bounds_rejected(self):
        with pytest.raises(DataError):
            make_ratings(entries=((0, 9, 1.0),))

    def test_value_outside_declared_scale_rejected(self):
        with pytest.raises(DataError, match="scale"):
            SparseRatings(2, 2, np.array([0]), np.array([0]), np.array([9.0]),
                          scale_min=1.0, scale_max=5.0)

    def test_empty_ok(self):
        r = make_ratings(2, 2, ())
        assert r.nnz == 0


class TestMatrixMarket:
    def test_small_file(self, tmp_path):
        path = tmp_path / "m.mm"
        path.write_text(
            "%%MatrixMarket matrix coordinate real general\n"
            "3 4 2\n"
            "1 1 5.0\n"
            "3 4 1.0\n"
        )
        r = load_matrix_market(path)
        assert (r.n_rows, r.n_cols, r.nnz) == (3, 4, 2)
        assert set(zip(r.rows, r.cols)) == {(0, 0), (2, 3)}

    def test_empty_entry_list(self, tmp_path):
        path = tmp_path / "m.mm"
        path.write_text("%%MatrixMarket matrix coordinate real general\n2 2 0\n")
        r = load_matrix_market(path)
        assert (r.n_rows, r.n_cols, r.nnz) == (2, 2, 0)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "m.mm"
        path.write_text("%%MatrixMarket matrix array real general\n2 2 0\n")
        with pytest.raises(ParseError, match="line 1"):
            load_matrix_market(path)

    def test_index_out_of_bounds_names_line(self, tmp_path):
        path = tmp_path / "m.mm"
        path.write_text(
            "%%MatrixMarket matrix coordinate real general\n"
            "2 2 1\n"
            "3 1 1.0\n"
        )
        with pytest.raises(ParseError, match="line 3"):
            load_matrix_market(path)

    def test_duplicate_names_line(self, tmp_path):
        path = tmp_path / "m.mm"
        path.write_text(
            "%%MatrixMarket matrix coordinate real general\n"
            "2 2 2\n"
            "1 1 1.0\n"
            "1 1 2.0\n"
        )
        with pytest.raises(ParseError, match="line 4"):
            load_matrix_market(path)

    def test_comments_allowed(self, tmp_path):
        path = tmp_path / "m.mm"
        path.write_text(
            "%%MatrixMarket matrix coordinate real general\n"
            "% a comment\n"
            "2 2 1\n"
            "2 2 4.0\n"
        )
        assert load_matrix_market(path).nnz == 1


class TestCsvTriplets:
    def test_small(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("0,0,4.0\n1,2,3.0\n")
        r = load_csv_triplets(path)
        assert (r.n_rows, r.n_cols, r.nnz) == (2, 3, 2)

    def test_duplicate_rejected(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("0,0,4.0\n0,0,3.0\n")
        with pytest.raises(ParseError, match="line 2"):
            load_csv_triplets(path)

    def test_negative_index(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("0,-1,4.0\n")
        with pytest.raises(ParseError, match="line 1"):
            load_csv_triplets(path)

    def test_non_numeric(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("0,0,abc\n")
        with pytest.raises(ParseError):
            load_csv_triplets(path)

    def test_header_skipped(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("row,col,value\n0,0,4.0\n")
        assert load_csv_triplets(path, has_header=True).nnz == 1

    def test_line_count_oracle(self, tmp_path):
        # entry count equals the number of data lines written
        rng = np.random.default_rng(0)
        n = 5000
        cells = rng.choice(200 * 300, size=n, replace=False)
        lines = [f"{c // 300},{c % 300},{rng.uniform(1, 5):.3f}" for c in cells]
        path = tmp_path / "big.csv"
        path.write_text("\n".join(lines) + "\n")
        assert load_csv_triplets(path).nnz == n


@st.composite
def ratings_strategy(draw):
    n_rows = draw(st.integers(1, 12))
    n_cols = draw(st.integers(1, 12))
    n_cells = draw(st.integers(0, n_rows * n_cols))
    rng = np.random.default_rng(draw(st.integers(0, 2**31)))
    flat = rng.choice(n_rows * n_cols, size=n_cells, replace=False)
    values = np.round(rng.uniform(-10, 10, size=n_cells), 6)
    return SparseRatings(n_rows, n_cols, flat // n_cols, flat % n_cols, values)


class TestRoundTrip:
    @given(ratings_strategy())
    @settings(max_examples=30, deadline=None)
    def test_matrix_market(self, r, tmp_path_factory):
        path = tmp_path_factory.mktemp("mm") / "r.mm"
        write_matrix_market(r, path)
        assert same_ratings(load_matrix_market(path), r)

    @given(ratings_strategy())
    @settings(max_examples=30, deadline=None)
    def test_csv(self, r, tmp_path_factory):
        path = tmp_path_factory.mktemp("csv") / "r.csv"
        write_csv_triplets(r, path, header=True)
        loaded = load_csv_triplets(path, has_header=True,
                                   n_rows=r.n_rows, n_cols=r.n_cols)
        assert same_ratings(loaded, r)


class TestSplit:
    def test_counts_and_disjointness(self):
        r = make_ratings(5, 4, tuple((i, j, float(i + j + 1)) for i in range(5) for j in range(2)))
        train, test = train_test_split(r, 0.2, seed=1)
        assert (train.nnz, test.nnz) == (8, 2)
        assert set(map(tuple, np.c_[train.rows, train.cols])).isdisjoint(
            set(map(tuple, np.c_[test.rows, test.cols])))
        assert (train.n_rows, train.n_cols) == (5, 4)
        assert (test.n_rows, test.n_cols) == (5, 4)

    def test_deterministic(self):
        r = make_ratings(5, 4, tuple((i, j, 1.0 * (i + 1)) for i in range(5) for j in range(3)))
        a = train_test_split(r, 0.3, seed=7)
        b = train_test_split(r, 0.3, seed=7)
        assert same_ratings(a[0], b[0]) and same_ratings(a[1], b[1])

    def test_union_is_input(self):
        r = make_ratings(6, 6, tuple((i, i, float(i)) for i in range(1, 6)))
        train, test = train_test_split(r, 0.4, seed=3)
        merged = SparseRatings(
            r.n_rows, r.n_cols,
            np.concatenate([train.rows, test.rows]),
            np.concatenate([train.cols, test.cols]),
            np.concatenate([train.values, test.values]),
            r.scale_min, r.scale_max,
        )
        assert same_ratings(merged, r)

    def test_fraction_validated(self):
        r = make_ratings()
        for bad in (0.0, 1.0, -0.5, 2.0):
            with pytest.raises(ConfigError):
                train_test_split(r, bad, seed=0)

    def test_count_arithmetic(self):
        # round(fraction * nnz) at a larger size
        n = 10_000
        rng = np.random.default_rng(5)
        flat = rng.choice(200 * 300, size=n, replace=False)
        r = SparseRatings(200, 300, flat // 300, flat % 300, rng.uniform(1, 5, n))
        train, test = train_test_split(r, 0.2, seed=0)
        assert test.nnz == 2000 and train.nnz == 8000


class TestStats:
    def test_table_scale_numbers(self):
        # 138.5K x 27.3K with 20M ratings -> sparsity about 189
        r = SparseRatings(138_500, 27_300, np.array([0]), np.array([0]), np.array([3.0]))
        stats = compute_stats(r)
        assert stats.rows_per_col_ratio == pytest.approx(5.07, abs=0.01)
        sparsity = 138_500 * 27_300 / 20_000_000
        assert sparsity == pytest.approx(189, abs=1)

    def test_rows_per_col(self):
        r = SparseRatings(480_200, 17_800, np.array([0]), np.array([0]), np.array([3.0]))
        assert compute_stats(r).rows_per_col_ratio == pytest.approx(27.0, abs=0.03)

    def test_dense_sparsity_one(self):
        r = make_ratings(2, 2, ((0, 0, 1.0), (0, 1, 2.0), (1, 0, 3.0), (1, 1, 4.0)))
        s = compute_stats(r)
        assert s.sparsity == 1.0
        assert s.ratings_per_row == 2.0

    def test_invariant(self):
        r = make_ratings(3, 4, ((0, 0, 1.0), (1, 2, 2.0), (2, 3, 3.0)))
        s = compute_stats(r)
        assert s.sparsity == pytest.approx(r.n_rows * r.n_cols / r.nnz)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            compute_stats(make_ratings(2, 2, ()))
