"""CSR matrix container plus the small dense kernels used as test oracles.

All sparse algebra in this package flows through :class:`CsrMatrix`, a thin
validated wrapper over ``scipy.sparse.csr_matrix``.  Products never drop
entries that cancel to zero, so sparsity patterns stay reproducible and can
be compared against dense oracles entry by entry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.io


class DimensionMismatch(ValueError):
    pass


class SingularMatrixError(RuntimeError):
    """Raised when dense LU pivoting meets a (near-)zero pivot."""

    def __init__(self, row, pivot):
        super().__init__(f"singular matrix: pivot {pivot:.3e} at elimination step {row}")
        self.row = row
        self.pivot = pivot


# Dense matrices are plain row-major float ndarrays.
DenseMatrix = np.ndarray


class CsrMatrix:
    """Immutable-by-convention CSR matrix with sorted column indices.

    Explicit zeros are legal stored entries and are preserved by every
    operation here; only construction from COO merges duplicates.
    """

    __slots__ = ("m",)

    def __init__(self, m: sp.csr_matrix):
        if not sp.issparse(m):
            raise TypeError("expected a scipy sparse matrix")
        m = m.tocsr()
        if not m.has_sorted_indices:
            m.sort_indices()
        self.m = m

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_arrays(cls, nrows, ncols, row_offsets, col_indices, values):
        row_offsets = np.asarray(row_offsets, dtype=np.int64)
        col_indices = np.asarray(col_indices, dtype=np.int64)
        values = np.asarray(values, dtype=float)
        if row_offsets.shape != (nrows + 1,):
            raise ValueError("row_offsets must have length nrows+1")
        if row_offsets[0] != 0 or np.any(np.diff(row_offsets) < 0):
            raise ValueError("row_offsets must start at 0 and be nondecreasing")
        if col_indices.shape != values.shape or col_indices.shape != (row_offsets[-1],):
            raise ValueError("col_indices/values length must equal row_offsets[-1]")
        if col_indices.size and (col_indices.min() < 0 or col_indices.max() >= ncols):
            raise ValueError("column index out of range")
        # strictly increasing columns within each row
        inner = np.diff(col_indices)
        starts = row_offsets[1:-1]  # positions where a new row begins
        keep = np.ones(inner.shape, dtype=bool)
        keep[starts - 1] = False
        if np.any(inner[keep] <= 0):
            raise ValueError("column indices must be strictly increasing within a row")
        m = sp.csr_matrix((values, col_indices, row_offsets), shape=(nrows, ncols))
        m.has_sorted_indices = True
        return cls(m)

    @classmethod
    def from_scipy(cls, m):
        return cls(sp.csr_matrix(m))

    @classmethod
    def from_dense(cls, a):
        a = np.asarray(a, dtype=float)
        return cls(sp.csr_matrix(a))

    @classmethod
    def from_coo(cls, nrows, ncols, rows, cols, vals):
        """Build from triplets; duplicate entries are summed."""
        m = sp.coo_matrix((vals, (rows, cols)), shape=(nrows, ncols)).tocsr()
        m.sum_duplicates()
        m.sort_indices()
        return cls(m)

    @classmethod
    def identity(cls, n):
        return cls(sp.identity(n, format="csr"))

    @classmethod
    def from_diag(cls, d):
        return cls(sp.diags(np.asarray(d, dtype=float), format="csr"))

    # -- accessors ---------------------------------------------------------

    @property
    def nrows(self):
        return self.m.shape[0]

    @property
    def ncols(self):
        return self.m.shape[1]

    @property
    def shape(self):
        return self.m.shape

    @property
    def nnz(self):
        return self.m.nnz

    @property
    def row_offsets(self):
        return self.m.indptr

    @property
    def col_indices(self):
        return self.m.indices

    @property
    def values(self):
        return self.m.data

    def diagonal(self):
        return self.m.diagonal()

    def to_dense(self):
        return self.m.toarray()

    def transpose(self):
        return CsrMatrix(self.m.T.tocsr())

    def __repr__(self):
        return f"CsrMatrix({self.nrows}x{self.ncols}, nnz={self.nnz})"


@dataclass(frozen=True)
class IndexPartition:
    """Disjoint sorted C/F split of ``range(n)``."""

    c_points: np.ndarray
    f_points: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c_points, dtype=np.int64)
        f = np.asarray(self.f_points, dtype=np.int64)
        object.__setattr__(self, "c_points", c)
        object.__setattr__(self, "f_points", f)
        if np.any(np.diff(c) <= 0) or np.any(np.diff(f) <= 0):
            raise ValueError("index sets must be sorted and duplicate-free")
        if np.intersect1d(c, f).size:
            raise ValueError("C and F points must be disjoint")

    @property
    def n(self):
        return self.c_points.size + self.f_points.size

    @classmethod
    def from_f_mask(cls, f_mask):
        f_mask = np.asarray(f_mask, dtype=bool)
        idx = np.arange(f_mask.size)
        return cls(idx[~f_mask], idx[f_mask])


def spmv(a: CsrMatrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (a.ncols,):
        raise DimensionMismatch(f"spmv: matrix is {a.nrows}x{a.ncols}, vector has length {x.shape}")
    return a.m @ x


def extract(a: CsrMatrix, rows, cols) -> CsrMatrix:
    """Submatrix A[rows, cols] with both index sets sorted; keeps stored zeros."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    for idx, limit, what in ((rows, a.nrows, "row"), (cols, a.ncols, "column")):
        if idx.size and (idx.min() < 0 or idx.max() >= limit):
            raise IndexError(f"{what} index out of range")
        if np.any(np.diff(idx) <= 0):
            raise ValueError(f"{what} indices must be sorted and duplicate-free")
    return CsrMatrix(a.m[rows][:, cols].tocsr())


def matmul(a: CsrMatrix, b: CsrMatrix) -> CsrMatrix:
    if a.ncols != b.nrows:
        raise DimensionMismatch(f"matmul: {a.shape} x {b.shape}")
    return CsrMatrix((a.m @ b.m).tocsr())


def triple_product(r: CsrMatrix, a: CsrMatrix, p: CsrMatrix) -> CsrMatrix:
    """Galerkin product R*A*P; entries cancelling to zero stay in the pattern."""
    if r.ncols != a.nrows or a.ncols != p.nrows:
        raise DimensionMismatch(f"triple_product: {r.shape} x {a.shape} x {p.shape}")
    return CsrMatrix((r.m @ (a.m @ p.m)).tocsr())


def permute(a: CsrMatrix, row_perm, col_perm=None) -> CsrMatrix:
    """Row/column permutation: result[i, j] = A[row_perm[i], col_perm[j]]."""
    row_perm = np.asarray(row_perm, dtype=np.int64)
    if col_perm is None:
        col_perm = row_perm
    col_perm = np.asarray(col_perm, dtype=np.int64)
    return CsrMatrix(a.m[row_perm][:, col_perm].tocsr())


# -- dense LU oracle -------------------------------------------------------
#
# Deliberately hand-rolled (not LAPACK) so it stays an independent check on
# the scipy-backed sparse path and on the iterative solvers.

_PIVOT_FLOOR = 1e-300


def dense_lu_factor(a):
    a = np.array(a, dtype=float)
    n, m = a.shape
    if n != m:
        raise DimensionMismatch("dense_lu_factor expects a square matrix")
    piv = np.arange(n)
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if abs(a[p, k]) <= _PIVOT_FLOOR:
            raise SingularMatrixError(k, a[p, k])
        if p != k:
            a[[k, p]] = a[[p, k]]
            piv[[k, p]] = piv[[p, k]]
        a[k + 1:, k] /= a[k, k]
        a[k + 1:, k + 1:] -= np.outer(a[k + 1:, k], a[k, k + 1:])
    return a, piv


def dense_lu_solve(a, b) -> np.ndarray:
    """Solve a dense system by partial-pivot LU; the package's test oracle."""
    lu, piv = dense_lu_factor(a)
    n = lu.shape[0]
    b = np.asarray(b, dtype=float)
    if b.shape != (n,):
        raise DimensionMismatch("dense_lu_solve: right-hand side length mismatch")
    x = b[piv].copy()
    for k in range(1, n):
        x[k] -= lu[k, :k] @ x[:k]
    for k in range(n - 1, -1, -1):
        x[k] = (x[k] - lu[k, k + 1:] @ x[k + 1:]) / lu[k, k]
    return x


# -- Matrix Market I/O -----------------------------------------------------


def read_matrix_market(path) -> CsrMatrix:
    return CsrMatrix(sp.csr_matrix(scipy.io.mmread(path)))


def write_matrix_market(path, a: CsrMatrix, comment=""):
    scipy.io.mmwrite(path, a.m.tocoo(), comment=comment)
