"""Sparse containers and kernels shared by every other module.

`SparseMatrix` is a plain CSR record backed by :mod:`scipy.sparse` for the
actual kernels.  `ConvTensor` stores the unfolded convection tensor
``H in R^{n x n^2}`` as coordinate entries ``(i, j, k, value)`` where the
Kronecker column is ``j*n + k``, so that ``H (v kron w)`` reads ``v`` at ``j``
and ``w`` at ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

__all__ = [
    "SparseMatrix",
    "CooBuilder",
    "ConvTensor",
    "SaddleFactorization",
    "DimensionError",
    "SingularSystemError",
    "spmv",
    "apply_kron",
    "linearize_left",
    "linearize_right",
    "factor_saddle",
    "solve_saddle",
]


class DimensionError(ValueError):
    """Operand sizes do not conform."""


class SingularSystemError(RuntimeError):
    """A block system could not be factored or solved.

    ``location`` carries the offending block row/column when known.
    """

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


def _sorted_sum(rows, cols, vals, key3=None):
    """Sum duplicates in a fixed order independent of input order.

    Triplets are sorted by (row, col[, key3], value) before summation so that
    any permutation of the same multiset yields bit-identical sums.
    """
    if key3 is None:
        order = np.lexsort((vals, cols, rows))
    else:
        order = np.lexsort((vals, key3, cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    keys = [rows, cols] if key3 is None else [rows, cols, key3[order]]
    if len(rows) == 0:
        return keys, vals
    same = np.ones(len(rows) - 1, dtype=bool)
    for kk in keys:
        same &= kk[1:] == kk[:-1]
    starts = np.flatnonzero(np.concatenate(([True], ~same)))
    sums = _segment_sum(vals, starts)
    return [kk[starts] for kk in keys], sums


def _segment_sum(vals, starts):
    # sequential left-to-right accumulation per segment
    bounds = np.append(starts, len(vals))
    seg = np.repeat(np.arange(len(starts)), np.diff(bounds))
    return np.bincount(seg, weights=vals, minlength=len(starts))


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Compressed sparse row matrix.

    Build instances with :class:`CooBuilder`, :meth:`from_scipy` or
    :meth:`from_dense`; the constructor does not check invariants.
    """

    nrows: int
    ncols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    @property
    def nnz(self):
        return len(self.values)

    @cached_property
    def csr(self) -> sps.csr_matrix:
        return sps.csr_matrix(
            (self.values, self.col_idx, self.row_ptr), shape=self.shape
        )

    @property
    def T(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.csr.T)

    @classmethod
    def from_scipy(cls, mat) -> "SparseMatrix":
        coo = sps.coo_matrix(mat)
        b = CooBuilder(*coo.shape)
        b.add(coo.row, coo.col, coo.data)
        return b.finalize()

    @classmethod
    def from_dense(cls, arr) -> "SparseMatrix":
        return cls.from_scipy(np.atleast_2d(np.asarray(arr, dtype=float)))

    @classmethod
    def zeros(cls, nrows, ncols) -> "SparseMatrix":
        return CooBuilder(nrows, ncols).finalize()

    @classmethod
    def identity(cls, n) -> "SparseMatrix":
        b = CooBuilder(n, n)
        idx = np.arange(n)
        b.add(idx, idx, np.ones(n))
        return b.finalize()

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def scaled(self, factor) -> "SparseMatrix":
        return SparseMatrix(self.nrows, self.ncols, self.row_ptr,
                            self.col_idx, self.values * factor)

    def take(self, rows=None, cols=None) -> "SparseMatrix":
        """Restrict to the given (sorted) row and column index sets."""
        m = self.csr
        if rows is not None:
            m = m[np.asarray(rows), :]
        if cols is not None:
            m = m[:, np.asarray(cols)]
        return SparseMatrix.from_scipy(m)

    def __matmul__(self, x):
        return spmv(self, x)

    def __add__(self, other):
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        if other.shape != self.shape:
            raise DimensionError(f"shape mismatch {self.shape} vs {other.shape}")
        return SparseMatrix.from_scipy(self.csr + other.csr)

    def __sub__(self, other):
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return self + other.scaled(-1.0)

    def __repr__(self):
        return f"SparseMatrix({self.nrows}x{self.ncols}, nnz={self.nnz})"

    def equals(self, other) -> bool:
        """Exact equality of shape, sparsity pattern and values."""
        return (
            self.shape == other.shape
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.col_idx, other.col_idx)
            and np.array_equal(self.values, other.values)
        )


class CooBuilder:
    """Triplet accumulator for :class:`SparseMatrix`."""

    def __init__(self, nrows, ncols):
        self.nrows = int(nrows)
        self.ncols = int(ncols)
        self._rows = []
        self._cols = []
        self._vals = []

    def add(self, rows, cols, vals):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=float).ravel()
        if not (len(rows) == len(cols) == len(vals)):
            raise DimensionError("triplet arrays differ in length")
        if len(rows) and (rows.min() < 0 or rows.max() >= self.nrows
                          or cols.min() < 0 or cols.max() >= self.ncols):
            raise IndexError("triplet index out of range")
        self._rows.append(rows)
        self._cols.append(cols)
        self._vals.append(vals)

    def finalize(self) -> SparseMatrix:
        if self._rows:
            rows = np.concatenate(self._rows)
            cols = np.concatenate(self._cols)
            vals = np.concatenate(self._vals)
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
            vals = np.zeros(0)
        (rows, cols), vals = _sorted_sum(rows, cols, vals)
        keep = vals != 0.0
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
        row_ptr = np.zeros(self.nrows + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=self.nrows), out=row_ptr[1:])
        return SparseMatrix(self.nrows, self.ncols, row_ptr,
                            cols.astype(np.int64), vals)


@dataclass(frozen=True, eq=False)
class ConvTensor:
    """Sparse unfolded convection tensor ``H in R^{n x n^2}``."""

    n: int
    i: np.ndarray
    j: np.ndarray
    k: np.ndarray
    values: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_entries(cls, n, i, j, k, values) -> "ConvTensor":
        """Deduplicate, drop zeros and sort entries by (i, j, k)."""
        i = np.asarray(i, dtype=np.int64).ravel()
        j = np.asarray(j, dtype=np.int64).ravel()
        k = np.asarray(k, dtype=np.int64).ravel()
        values = np.asarray(values, dtype=float).ravel()
        if len(i) and (min(i.min(), j.min(), k.min()) < 0
                       or max(i.max(), j.max(), k.max()) >= n):
            raise IndexError("tensor index out of range")
        (i, j, k), values = _sorted_sum(i, j, values, key3=k)
        keep = values != 0.0
        return cls(int(n), i[keep], j[keep], k[keep], values[keep])

    @property
    def nnz(self):
        return len(self.values)

    @property
    def kron_cols(self) -> np.ndarray:
        return self.j * self.n + self.k

    def to_scipy(self) -> sps.csr_matrix:
        """Materialize as an ``n x n^2`` scipy matrix (small n only)."""
        return sps.csr_matrix((self.values, (self.i, self.kron_cols)),
                              shape=(self.n, self.n * self.n))

    def _grouping(self, free):
        # entries sorted by (i, free index) with segment starts, cached per axis
        if free not in self._cache:
            fk = self.k if free == "k" else self.j
            other = self.j if free == "k" else self.k
            order = np.lexsort((other, fk, self.i))
            ri, rf = self.i[order], fk[order]
            new = np.ones(len(order), dtype=bool)
            new[1:] = (ri[1:] != ri[:-1]) | (rf[1:] != rf[:-1])
            starts = np.flatnonzero(new)
            self._cache[free] = (order, starts, ri[starts], rf[starts])
        return self._cache[free]


def _check_vec(x, n, name):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or len(x) != n:
        raise DimensionError(f"{name} has length {x.shape}, expected {n}")
    return x


def spmv(Am: SparseMatrix, x) -> np.ndarray:
    """Return ``Am @ x``."""
    x = _check_vec(x, Am.ncols, "x")
    return Am.csr @ x


def apply_kron(H: ConvTensor, v, w) -> np.ndarray:
    """Evaluate ``H (v kron w)`` without forming the Kronecker vector."""
    v = _check_vec(v, H.n, "v")
    w = _check_vec(w, H.n, "w")
    return np.bincount(H.i, weights=H.values * v[H.j] * w[H.k],
                       minlength=H.n)


def _linearize(H, a, fixed):
    a = _check_vec(a, H.n, "a")
    free = "k" if fixed == "j" else "j"
    order, starts, rows, cols = H._grouping(free)
    fixed_idx = H.j if fixed == "j" else H.k
    contrib = H.values[order] * a[fixed_idx[order]]
    vals = _segment_sum(contrib, starts) if len(order) else np.zeros(0)
    keep = vals != 0.0
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    row_ptr = np.zeros(H.n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=H.n), out=row_ptr[1:])
    return SparseMatrix(H.n, H.n, row_ptr, cols.astype(np.int64), vals)


def linearize_left(H: ConvTensor, a) -> SparseMatrix:
    """Matrix ``H1`` with ``H1 @ v == H (a kron v)``."""
    return _linearize(H, a, fixed="j")


def linearize_right(H: ConvTensor, a) -> SparseMatrix:
    """Matrix ``H2`` with ``H2 @ v == H (v kron a)``."""
    return _linearize(H, a, fixed="k")


class SaddleFactorization:
    """LU factorization of ``[[S, -J^T], [J, 0]]``.

    The factorization uses SuperLU with partial pivoting.  :meth:`solve`
    applies up to two steps of iterative refinement.
    """

    # ratio of smallest to largest |U_ii| below which the block is singular
    pivot_ratio_tol = 1e-14

    def __init__(self, S: SparseMatrix, J: SparseMatrix):
        n, m = S.nrows, J.nrows
        if S.ncols != n:
            raise DimensionError("S must be square")
        if J.ncols != n:
            raise DimensionError(f"J has {J.ncols} columns, expected {n}")
        self.n, self.m = n, m
        Jc = J.csr
        self.block = sps.bmat(
            [[S.csr, -Jc.T], [Jc, None]], format="csc"
        ) if m else S.csr.tocsc()
        self.block.sum_duplicates()
        self._check_structure()
        try:
            self._lu = spla.splu(self.block, permc_spec="COLAMD",
                                 diag_pivot_thresh=1.0)
        except RuntimeError as exc:
            raise SingularSystemError(f"factorization failed: {exc}") from exc
        udiag = np.abs(self._lu.U.diagonal())
        if len(udiag):
            ratio = udiag.min() / udiag.max()
            if not np.isfinite(ratio) or ratio < self.pivot_ratio_tol:
                loc = int(self._lu.perm_c[np.argmin(udiag)])
                raise SingularSystemError(
                    f"numerically singular block (pivot ratio {ratio:.2e})",
                    location=loc,
                )

    def _check_structure(self):
        blk = self.block
        col_nnz = np.diff(blk.indptr)
        row_nnz = np.bincount(blk.indices, minlength=blk.shape[0])
        for what, counts in (("row", row_nnz), ("column", col_nnz)):
            empty = np.flatnonzero(counts == 0)
            if len(empty):
                loc = int(empty[0])
                raise SingularSystemError(
                    f"structurally singular: block {what} {loc} is empty "
                    f"(zero pivot at {loc})",
                    location=loc,
                )

    def solve(self, rv, rp):
        rv = _check_vec(rv, self.n, "rv")
        rp = _check_vec(rp, self.m, "rp")
        rhs = np.concatenate([rv, rp])
        x = self._lu.solve(rhs)
        for _ in range(2):
            r = rhs - self.block @ x
            if np.linalg.norm(r) <= 1e-14 * (1.0 + np.linalg.norm(rhs)):
                break
            x = x + self._lu.solve(r)
        if not np.all(np.isfinite(x)):
            raise SingularSystemError("solution is not finite")
        return x[: self.n], x[self.n:]

    def residual(self, v, p, rv, rp) -> float:
        """Euclidean norm of the block residual."""
        x = np.concatenate([v, p])
        return float(np.linalg.norm(np.concatenate([rv, rp]) - self.block @ x))


def factor_saddle(S: SparseMatrix, J: SparseMatrix) -> SaddleFactorization:
    return SaddleFactorization(S, J)


def solve_saddle(F: SaddleFactorization, rv, rp):
    return F.solve(rv, rp)
