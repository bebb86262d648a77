"""
Tests for sparse kernels
"""

import numpy as np
import pytest
import scipy.sparse as sp

from src.errors import ArgumentError, DomainError, ShapeError
from src.sparse import CsrMatrix, add_scaled, as_dense, spgemm, spmm, sym_normalize


def random_csr(n_rows, n_cols, seed, density=0.4):
    rng = np.random.default_rng(seed)
    return CsrMatrix.from_scipy(sp.random(n_rows, n_cols, density=density, random_state=rng))


def assert_canonical(m: CsrMatrix):
    assert m.row_ptr[0] == 0
    assert m.row_ptr[-1] == len(m.col_idx) == len(m.values)
    assert np.all(np.diff(m.row_ptr) >= 0)
    for r in range(m.n_rows):
        cols = m.col_idx[m.row_ptr[r]:m.row_ptr[r + 1]]
        assert np.all(np.diff(cols) > 0)
        assert np.all(cols < m.n_cols)


class TestCsrMatrix:
    """Test CSR construction and canonical form"""

    def test_from_dense(self):
        """Dense input keeps only the nonzeros, row by row"""
        m = CsrMatrix.from_dense([[0, 1, 0], [2, 0, 3]])
        assert m.shape == (2, 3)
        assert m.row_ptr.tolist() == [0, 1, 3]
        assert m.col_idx.tolist() == [1, 0, 2]
        assert m.values.tolist() == [1.0, 2.0, 3.0]

    def test_from_edges_sums_duplicates(self):
        """Repeated edges collapse into one entry"""
        m = CsrMatrix.from_edges([0, 0, 1], [1, 1, 0], (2, 2))
        assert m.nnz == 2
        assert m.to_dense().tolist() == [[0, 2], [1, 0]]
        assert_canonical(m)

    def test_rejects_unsorted_columns(self):
        """Columns within a row must be strictly increasing"""
        with pytest.raises(ValueError):
            CsrMatrix(
                n_rows=1,
                n_cols=3,
                row_ptr=np.array([0, 2]),
                col_idx=np.array([2, 0]),
                values=np.array([1.0, 1.0]),
            )

    def test_rejects_out_of_range_column(self):
        """Column indices must be below n_cols"""
        with pytest.raises(ValueError):
            CsrMatrix(
                n_rows=1,
                n_cols=2,
                row_ptr=np.array([0, 1]),
                col_idx=np.array([2]),
                values=np.array([1.0]),
            )

    def test_rejects_bad_row_ptr(self):
        """row_ptr must end at nnz"""
        with pytest.raises(ValueError):
            CsrMatrix(
                n_rows=2,
                n_cols=2,
                row_ptr=np.array([0, 1, 3]),
                col_idx=np.array([0]),
                values=np.array([1.0]),
            )

    def test_transpose_and_drop_diagonal(self):
        """Transpose swaps entries; drop_diagonal removes self loops"""
        m = CsrMatrix.from_dense([[1, 2], [0, 3]])
        assert m.transpose().to_dense().tolist() == [[1, 0], [2, 3]]
        assert m.drop_diagonal().to_dense().tolist() == [[0, 2], [0, 0]]

    def test_binarize(self):
        """Every stored value becomes 1"""
        m = CsrMatrix.from_dense([[0, 5], [2, 0]]).binarize()
        assert m.values.tolist() == [1.0, 1.0]

    def test_equality(self):
        """Equal structure and values compare equal"""
        assert CsrMatrix.from_dense([[1, 0], [0, 1]]) == CsrMatrix.identity(2)
        assert CsrMatrix.from_dense([[1, 0], [0, 2]]) != CsrMatrix.identity(2)

    def test_as_dense_rejects_non_finite(self):
        """Dense panels must be 2-D and finite"""
        with pytest.raises(DomainError):
            as_dense([[1.0, np.nan]])
        with pytest.raises(ShapeError):
            as_dense([1.0, 2.0])


class TestSpmm:
    """Test sparse-dense products"""

    def test_zero_matrix(self):
        """A zero matrix annihilates"""
        zero = CsrMatrix.from_dense(np.zeros((2, 2)))
        out = spmm(zero, np.arange(6.0).reshape(2, 3))
        assert out.shape == (2, 3)
        assert np.all(out == 0)

    def test_permutation(self):
        """Swap matrix swaps rows"""
        a = CsrMatrix.from_dense([[0, 1], [1, 0]])
        assert spmm(a, [[1], [0]]).tolist() == [[0], [1]]

    def test_path_graph(self):
        """Hand-computed product on a 3-node path"""
        a = CsrMatrix.from_dense([[0, 1, 0], [1, 0, 1], [0, 1, 0]])
        assert spmm(a, [[1], [2], [3]]).tolist() == [[2], [4], [2]]

    def test_shape_mismatch(self):
        """Inner dimensions must agree"""
        with pytest.raises(ShapeError):
            spmm(CsrMatrix.identity(3), np.ones((2, 1)))


class TestSpgemm:
    """Test sparse-sparse products"""

    def test_identity(self):
        """I @ B = B and A @ I = A"""
        b = random_csr(3, 4, seed=1)
        assert spgemm(CsrMatrix.identity(3), b) == b
        assert spgemm(b, CsrMatrix.identity(4)) == b

    def test_hand_example(self):
        """[[1,1,0],[0,0,1]] times its transpose"""
        a = CsrMatrix.from_dense([[1, 1, 0], [0, 0, 1]])
        assert spgemm(a, a.transpose()).to_dense().tolist() == [[2, 0], [0, 1]]

    def test_all_ones(self):
        """2x3 ones times 3x2 ones is all threes"""
        out = spgemm(CsrMatrix.from_dense(np.ones((2, 3))), CsrMatrix.from_dense(np.ones((3, 2))))
        assert out.to_dense().tolist() == [[3, 3], [3, 3]]

    def test_cancellation_is_dropped(self):
        """Entries that cancel to zero are not stored"""
        out = spgemm(CsrMatrix.from_dense([[1, 1]]), CsrMatrix.from_dense([[1], [-1]]))
        assert out.nnz == 0
        assert_canonical(out)

    def test_shape_mismatch(self):
        """Inner dimensions must agree"""
        with pytest.raises(ShapeError):
            spgemm(CsrMatrix.identity(2), CsrMatrix.identity(3))

    @pytest.mark.parametrize("seed", range(5))
    def test_associates_with_spmm(self, seed):
        """(AB)X = A(BX) on random instances"""
        a, b = random_csr(5, 4, seed), random_csr(4, 6, seed + 100)
        x = np.random.default_rng(seed).standard_normal((6, 3))
        lhs = spmm(spgemm(a, b), x)
        rhs = spmm(a, spmm(b, x))
        assert np.linalg.norm(lhs - rhs) <= 1e-10 * max(np.linalg.norm(rhs), 1.0)
        assert_canonical(spgemm(a, b))


class TestAddScaled:
    """Test weighted sums"""

    def test_single_matrix(self):
        """One matrix with weight 1 is returned unchanged"""
        a = random_csr(4, 4, seed=3)
        assert add_scaled([a], [1.0]) == a

    def test_halves(self):
        """0.5 A + 0.5 A = A"""
        a = CsrMatrix.from_dense([[0, 2], [4, 0]])
        assert add_scaled([a, a], [0.5, 0.5]) == a

    def test_entrywise(self):
        """2 [[0,1],[0,0]] + 3 [[0,0],[1,0]]"""
        out = add_scaled(
            [CsrMatrix.from_dense([[0, 1], [0, 0]]), CsrMatrix.from_dense([[0, 0], [1, 0]])], [2, 3]
        )
        assert out.to_dense().tolist() == [[0, 2], [3, 0]]

    def test_linearity(self):
        """(c1 + c2) A = c1 A + c2 A exactly"""
        a = CsrMatrix.from_dense([[0, 1.5], [2.0, 0]])
        assert add_scaled([a], [0.25 + 0.5]) == add_scaled([a, a], [0.25, 0.5])

    def test_errors(self):
        """Empty input and mismatched shapes are rejected"""
        with pytest.raises(ArgumentError):
            add_scaled([], [])
        with pytest.raises(ArgumentError):
            add_scaled([CsrMatrix.identity(2)], [1.0, 2.0])
        with pytest.raises(ShapeError):
            add_scaled([CsrMatrix.identity(2), CsrMatrix.identity(3)], [1.0, 1.0])


class TestSymNormalize:
    """Test symmetric normalization"""

    def test_regular_graph_unchanged(self):
        """Degrees of one leave the matrix as is"""
        a = CsrMatrix.from_dense([[0, 1], [1, 0]])
        assert sym_normalize(a) == a

    def test_weighted_pair_is_exact(self):
        """[[0,2],[2,0]] normalizes to exactly [[0,1],[1,0]]"""
        out = sym_normalize(CsrMatrix.from_dense([[0, 2], [2, 0]]))
        assert out.to_dense().tolist() == [[0.0, 1.0], [1.0, 0.0]]

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_degree_scaling(self, seed):
        """Agrees with D^-1/2 A D^-1/2 built from dense degrees"""
        a = random_csr(6, 6, seed).to_dense()
        a = a + a.T
        d = a.sum(axis=1)
        inv = np.where(d > 0, 1 / np.sqrt(np.where(d > 0, d, 1)), 0.0)
        expected = inv[:, None] * a * inv[None, :]
        np.testing.assert_allclose(sym_normalize(CsrMatrix.from_dense(a)).to_dense(), expected, atol=1e-14)

    def test_path_graph(self):
        """Off-diagonals become 1/sqrt(2) with degrees (1, 2, 1)"""
        out = sym_normalize(CsrMatrix.from_dense([[0, 1, 0], [1, 0, 1], [0, 1, 0]])).to_dense()
        expected = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]]) / np.sqrt(2)
        np.testing.assert_allclose(out, expected, atol=1e-15)

    def test_isolated_node(self):
        """A zero row and column stay zero, with no NaN"""
        out = sym_normalize(CsrMatrix.from_dense([[0, 1, 0], [1, 0, 0], [0, 0, 0]])).to_dense()
        assert np.all(np.isfinite(out))
        assert np.all(out[2] == 0) and np.all(out[:, 2] == 0)

    def test_negative_entries(self):
        """Negative weights are a domain error"""
        with pytest.raises(DomainError):
            sym_normalize(CsrMatrix.from_dense([[0, -1], [-1, 0]]))

    def test_non_square(self):
        """Only square matrices can be normalized"""
        with pytest.raises(ShapeError):
            sym_normalize(CsrMatrix.from_dense(np.ones((2, 3))))

    @pytest.mark.parametrize("seed", range(5))
    def test_spectral_radius_at_most_one(self, seed):
        """Power iteration on random symmetric inputs stays within 1"""
        a = random_csr(8, 8, seed)
        norm = sym_normalize(CsrMatrix.from_scipy(a.to_scipy() + a.to_scipy().T))
        v = np.random.default_rng(seed).standard_normal((8, 1))
        radius = 0.0
        for _ in range(200):
            w = spmm(norm, v)
            size = np.linalg.norm(w)
            if size == 0:
                break
            radius, v = size / np.linalg.norm(v), w / size
        assert radius <= 1 + 1e-6
        dense = norm.to_dense()
        np.testing.assert_allclose(dense, dense.T, atol=1e-15)
