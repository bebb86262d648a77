"""
H2SGNN Sparse Kernels

Compressed sparse row matrices and the handful of sparse/dense products every
other module builds on. Storage and arithmetic are delegated to scipy.sparse;
CsrMatrix pins the canonical form (sorted, duplicate-free rows).
"""

from typing import Sequence

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, model_validator

from src.errors import ArgumentError, DomainError, ShapeError

DenseMatrix = np.ndarray


class CsrMatrix(BaseModel):
    """Immutable CSR matrix in canonical form"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    n_rows: int
    n_cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    @model_validator(mode="after")
    def _check_canonical(self) -> "CsrMatrix":
        row_ptr, col_idx, values = self.row_ptr, self.col_idx, self.values
        nnz = len(col_idx)
        if self.n_rows < 0 or self.n_cols < 0:
            raise ShapeError(f"negative shape ({self.n_rows}, {self.n_cols})")
        if len(row_ptr) != self.n_rows + 1:
            raise ShapeError(f"row_ptr has length {len(row_ptr)}, expected {self.n_rows + 1}")
        if row_ptr[0] != 0 or row_ptr[-1] != nnz or len(values) != nnz:
            raise ShapeError("row_ptr bounds do not match col_idx/values lengths")
        if np.any(np.diff(row_ptr) < 0):
            raise ShapeError("row_ptr must be non-decreasing")
        if nnz and (col_idx.min() < 0 or col_idx.max() >= self.n_cols):
            raise ShapeError(f"column index out of range for {self.n_cols} columns")
        if nnz > 1:
            within_row = np.ones(nnz - 1, dtype=bool)
            starts = row_ptr[1:-1]
            starts = starts[(starts > 0) & (starts < nnz)]
            within_row[starts - 1] = False
            if np.any(np.diff(col_idx)[within_row] <= 0):
                raise ShapeError("columns within a row must be strictly increasing")
        return self

    @property
    def shape(self) -> tuple:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return len(self.col_idx)

    @classmethod
    def from_scipy(cls, matrix, drop_zeros: bool = True) -> "CsrMatrix":
        """Canonicalize any scipy sparse matrix (or dense array)"""
        csr = sp.csr_array(matrix, dtype=np.float64)
        csr.sum_duplicates()
        if drop_zeros:
            csr.eliminate_zeros()
        csr.sort_indices()
        return cls(
            n_rows=csr.shape[0],
            n_cols=csr.shape[1],
            row_ptr=csr.indptr.astype(np.int64),
            col_idx=csr.indices.astype(np.int64),
            values=csr.data.astype(np.float64),
        )

    @classmethod
    def from_dense(cls, dense) -> "CsrMatrix":
        return cls.from_scipy(np.atleast_2d(np.asarray(dense, dtype=np.float64)))

    @classmethod
    def from_edges(cls, src, dst, shape: tuple, weights=None) -> "CsrMatrix":
        """Build from edge lists; repeated edges are summed"""
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        if weights is None:
            weights = np.ones(len(src), dtype=np.float64)
        return cls.from_scipy(sp.coo_array((weights, (src, dst)), shape=shape))

    @classmethod
    def identity(cls, n: int) -> "CsrMatrix":
        return cls.from_scipy(sp.identity(n, format="csr"))

    def to_scipy(self) -> sp.csr_array:
        return sp.csr_array(
            (self.values, self.col_idx, self.row_ptr), shape=self.shape
        )

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def transpose(self) -> "CsrMatrix":
        return CsrMatrix.from_scipy(self.to_scipy().T, drop_zeros=False)

    def drop_diagonal(self) -> "CsrMatrix":
        coo = self.to_scipy().tocoo()
        keep = coo.row != coo.col
        return CsrMatrix.from_scipy(
            sp.coo_array((coo.data[keep], (coo.row[keep], coo.col[keep])), shape=self.shape)
        )

    def binarize(self) -> "CsrMatrix":
        """Replace every stored nonzero with 1"""
        return self.model_copy(update={"values": np.ones_like(self.values)})

    def is_symmetric(self) -> bool:
        if self.n_rows != self.n_cols:
            return False
        diff = self.to_scipy() - self.to_scipy().T
        return diff.count_nonzero() == 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, CsrMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.col_idx, other.col_idx)
            and np.array_equal(self.values, other.values)
        )


def as_dense(x, name: str = "x") -> DenseMatrix:
    """Coerce to a finite float64 2-D array"""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    return arr


def spmm(a: CsrMatrix, x: DenseMatrix) -> DenseMatrix:
    """Sparse-dense product a @ x"""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or a.n_cols != x.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {x.shape}")
    return np.asarray(a.to_scipy() @ x)


def spgemm(a: CsrMatrix, b: CsrMatrix) -> CsrMatrix:
    """Sparse-sparse product; zeros produced by cancellation are dropped"""
    if a.n_cols != b.n_rows:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return CsrMatrix.from_scipy(a.to_scipy() @ b.to_scipy())


def add_scaled(matrices: Sequence[CsrMatrix], weights: Sequence[float]) -> CsrMatrix:
    """Weighted sum of equally-shaped square matrices"""
    if not matrices:
        raise ArgumentError("add_scaled needs at least one matrix")
    if len(weights) != len(matrices):
        raise ArgumentError(f"{len(matrices)} matrices but {len(weights)} weights")
    shape = matrices[0].shape
    for m in matrices:
        if m.shape != shape or m.n_rows != m.n_cols:
            raise ShapeError(f"add_scaled needs square matrices of one shape, got {m.shape} and {shape}")

    total = sp.csr_array(shape, dtype=np.float64)
    for m, w in zip(matrices, weights):
        total = total + float(w) * m.to_scipy()
    return CsrMatrix.from_scipy(total)


def sym_normalize(a: CsrMatrix) -> CsrMatrix:
    """D^{-1/2} A D^{-1/2}; zero-degree rows and columns stay zero"""
    if a.n_rows != a.n_cols:
        raise ShapeError(f"sym_normalize needs a square matrix, got {a.shape}")
    if np.any(a.values < 0):
        raise DomainError("sym_normalize needs non-negative entries")

    degrees = np.asarray(a.to_scipy().sum(axis=1)).ravel()
    rows = np.repeat(np.arange(a.n_rows), np.diff(a.row_ptr))
    # a_ij / sqrt(d_i d_j), one rounding per entry
    scale = np.sqrt(degrees[rows] * degrees[a.col_idx])
    values = np.divide(a.values, scale, out=np.zeros_like(a.values), where=scale > 0)
    return CsrMatrix.from_scipy(
        sp.csr_array((values, a.col_idx, a.row_ptr), shape=a.shape)
    )
