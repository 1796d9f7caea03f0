import numpy as np
import pytest
import scipy.sparse as sps
from hypothesis import given, settings
from hypothesis import strategies as st

from nsemats.sparse import (ConvTensor, CooBuilder, DimensionError, SingularSystemError,
                            SparseMatrix, apply_kron, factor_saddle, linearize_left,
                            linearize_right, spmv)


def random_tensor(rng, n, nnz):
    i, j, k = (rng.integers(0, n, nnz) for _ in range(3))
    return ConvTensor.from_entries(n, i, j, k, rng.standard_normal(nnz))


def dense_tensor(H):
    T = np.zeros((H.n, H.n, H.n))
    np.add.at(T, (H.i, H.j, H.k), H.values)
    return T


def test_builder_sums_duplicates_and_drops_zeros():
    b = CooBuilder(3, 3)
    b.add([0, 0, 2, 1], [1, 1, 2, 0], [1.0, 2.0, 5.0, 0.0])
    A = b.finalize()
    assert A.nnz == 2
    np.testing.assert_array_equal(A.toarray(), [[0, 3, 0], [0, 0, 0], [0, 0, 5]])


def test_builder_independent_of_insertion_order(rng):
    r = rng.integers(0, 20, 500)
    c = rng.integers(0, 20, 500)
    v = rng.standard_normal(500)
    perm = rng.permutation(500)
    b1, b2 = CooBuilder(20, 20), CooBuilder(20, 20)
    b1.add(r, c, v)
    b2.add(r[perm], c[perm], v[perm])
    assert b1.finalize().equals(b2.finalize())


def test_builder_rejects_out_of_range():
    b = CooBuilder(2, 2)
    with pytest.raises((IndexError, DimensionError)):
        b.add([2], [0], [1.0])


def test_spmv_matches_dense(rng):
    D = rng.standard_normal((7, 5)) * (rng.random((7, 5)) < 0.4)
    A = SparseMatrix.from_dense(D)
    x = rng.standard_normal(5)
    np.testing.assert_allclose(spmv(A, x), D @ x, rtol=1e-14, atol=1e-14)
    np.testing.assert_allclose(A.T.toarray(), D.T)


def test_spmv_dimension_mismatch():
    with pytest.raises(DimensionError):
        spmv(SparseMatrix.identity(3), np.ones(4))


def test_take_and_add(rng):
    D = rng.standard_normal((6, 6))
    A = SparseMatrix.from_dense(D)
    rows, cols = np.array([0, 2, 5]), np.array([1, 3])
    np.testing.assert_array_equal(A.take(rows, cols).toarray(), D[np.ix_(rows, cols)])
    np.testing.assert_allclose((A + A.scaled(2.0)).toarray(), 3 * D)
    np.testing.assert_allclose((A - A).toarray(), 0.0)


def test_from_scipy_roundtrip(rng):
    S = sps.random(30, 20, density=0.2, random_state=3, format="csr")
    A = SparseMatrix.from_scipy(S)
    assert abs(A.csr - S).max() == 0.0


def test_tensor_from_entries_validates():
    with pytest.raises(IndexError):
        ConvTensor.from_entries(2, [0], [0], [2], [1.0])


def test_apply_kron_matches_dense(rng):
    H = random_tensor(rng, 9, 120)
    T = dense_tensor(H)
    v, w = rng.standard_normal(9), rng.standard_normal(9)
    ref = np.einsum("ijk,j,k->i", T, v, w)
    np.testing.assert_allclose(apply_kron(H, v, w), ref, rtol=1e-13, atol=1e-13)
    # kron column layout j*n + k
    np.testing.assert_allclose(H.to_scipy() @ np.kron(v, w), ref, rtol=1e-13, atol=1e-13)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(1, 80), st.integers(0, 2**32 - 1))
def test_linearizations_agree(n, nnz, seed):
    rng = np.random.default_rng(seed)
    H = random_tensor(rng, n, nnz)
    v, w = rng.standard_normal(n), rng.standard_normal(n)
    ref = apply_kron(H, v, w)
    scale = max(1.0, np.abs(ref).max())
    np.testing.assert_allclose(spmv(linearize_left(H, v), w), ref, atol=1e-12 * scale)
    np.testing.assert_allclose(spmv(linearize_right(H, w), v), ref, atol=1e-12 * scale)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_bilinearity(seed, a, b):
    rng = np.random.default_rng(seed)
    H = random_tensor(rng, 8, 60)
    v1, v2, w = (rng.standard_normal(8) for _ in range(3))
    lhs = apply_kron(H, a * v1 + b * v2, w)
    rhs = a * apply_kron(H, v1, w) + b * apply_kron(H, v2, w)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * max(1.0, np.abs(rhs).max()))


def _stokes_like(n, m, rng):
    K = rng.standard_normal((n, n))
    S = SparseMatrix.from_dense(K @ K.T + n * np.eye(n))
    J = SparseMatrix.from_dense(rng.standard_normal((m, n)))
    return S, J


def test_saddle_solve(rng):
    S, J = _stokes_like(12, 4, rng)
    F = factor_saddle(S, J)
    rv, rp = rng.standard_normal(12), rng.standard_normal(4)
    v, p = F.solve(rv, rp)
    np.testing.assert_allclose(spmv(S, v) - spmv(J.T, p), rv, atol=1e-12)
    np.testing.assert_allclose(spmv(J, v), rp, atol=1e-12)


def test_saddle_without_constraints(rng):
    S, _ = _stokes_like(6, 1, rng)
    F = factor_saddle(S, SparseMatrix.zeros(0, 6))
    rv = rng.standard_normal(6)
    v, p = F.solve(rv, np.zeros(0))
    np.testing.assert_allclose(S.toarray() @ v, rv, atol=1e-12)
    assert p.shape == (0,)


def test_saddle_reports_empty_row(rng):
    S, J = _stokes_like(6, 2, rng)
    Jd = J.toarray()
    Jd[1] = 0.0
    with pytest.raises(SingularSystemError) as exc:
        factor_saddle(S, SparseMatrix.from_dense(Jd))
    assert exc.value.location is not None


def test_saddle_detects_rank_deficient_constraints(rng):
    S, J = _stokes_like(8, 2, rng)
    Jd = J.toarray()
    Jd[1] = 2.0 * Jd[0]
    with pytest.raises(SingularSystemError):
        factor_saddle(S, SparseMatrix.from_dense(Jd))
