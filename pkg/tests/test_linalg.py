import numpy as np
import pytest

from modules.errors import DimensionMismatchError, IndexOutOfGridError, InputDomainError
from modules.linalg import (EntryIndex, Frame, check_finite, index_arrays, kron_restricted,
                            projection_apply, svd, vec_index)


class TestFrame:
    def test_rejects_non_orthonormal_columns(self):
        with pytest.raises(InputDomainError):
            Frame(np.array([[1.0, 1.0], [0.0, 1.0], [0.0, 0.0]]))

    def test_rejects_rank_above_m(self):
        with pytest.raises(DimensionMismatchError):
            Frame(np.eye(2, 3))

    def test_orthonormalize_spans_input(self, np_rng):
        A = np_rng.standard_normal((7, 3))
        F = Frame.orthonormalize(A)
        np.testing.assert_allclose(F.columns.T @ F.columns, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(projection_apply(F, A), A, atol=1e-10)

    def test_columns_are_read_only(self):
        F = Frame(np.eye(3)[:, :2])
        with pytest.raises(ValueError):
            F.columns[0, 0] = 2.0

    def test_rotate_keeps_subspace(self, np_rng):
        F = Frame.orthonormalize(np_rng.standard_normal((6, 2)))
        theta = 0.3
        Q = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        G = F.rotate(Q)
        np.testing.assert_allclose(G.columns @ G.columns.T, F.columns @ F.columns.T, atol=1e-12)


class TestSvd:
    def test_reconstructs_matrix(self, np_rng):
        M = np_rng.standard_normal((5, 4))
        U, d, V = svd(M)
        np.testing.assert_allclose(U.columns @ np.diag(d) @ V.columns.T, M, atol=1e-12)
        assert np.all(np.diff(d) <= 0)

    def test_truncation(self, np_rng):
        M = np_rng.standard_normal((6, 2)) @ np_rng.standard_normal((2, 5))
        U, d, V = svd(M, rank=2)
        assert U.rank == V.rank == 2
        np.testing.assert_allclose(U.columns @ np.diag(d) @ V.columns.T, M, atol=1e-10)

    def test_invalid_rank(self):
        with pytest.raises(InputDomainError):
            svd(np.ones((3, 3)), rank=4)

    def test_non_finite_input(self):
        with pytest.raises(InputDomainError):
            svd(np.array([[1.0, np.nan], [0.0, 1.0]]))


class TestProjections:
    def test_left_and_right_projection(self, np_rng):
        U = Frame.orthonormalize(np_rng.standard_normal((5, 2)))
        M = np_rng.standard_normal((5, 4))
        P = U.columns @ U.columns.T
        np.testing.assert_allclose(projection_apply(U, M, "left"), P @ M, atol=1e-12)
        np.testing.assert_allclose(projection_apply(U, M.T, "right"), M.T @ P, atol=1e-12)

    def test_projection_is_idempotent(self, np_rng):
        U = Frame.orthonormalize(np_rng.standard_normal((5, 2)))
        M = np_rng.standard_normal((5, 3))
        once = projection_apply(U, M)
        np.testing.assert_allclose(projection_apply(U, once), once, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            projection_apply(Frame(np.eye(3)[:, :1]), np.ones((4, 2)))

    def test_unknown_side(self):
        with pytest.raises(InputDomainError):
            projection_apply(Frame(np.eye(3)[:, :1]), np.ones((3, 2)), side="both")


class TestKronRestricted:
    def test_matches_explicit_kronecker(self, np_rng):
        U = Frame.orthonormalize(np_rng.standard_normal((4, 2)))
        V = Frame.orthonormalize(np_rng.standard_normal((3, 2)))
        full = np.kron(V.columns @ V.columns.T, U.columns @ U.columns.T)
        rows = [EntryIndex(0, 0), EntryIndex(3, 2), EntryIndex(1, 1)]
        cols = [(2, 0), (0, 2)]
        expected = full[np.ix_([vec_index(i, j, 4) for i, j in rows], [vec_index(i, j, 4) for i, j in cols])]
        np.testing.assert_allclose(kron_restricted(U, V, rows, cols), expected, atol=1e-12)

    def test_out_of_grid_index(self):
        U = Frame(np.eye(3)[:, :1])
        with pytest.raises(IndexOutOfGridError):
            kron_restricted(U, U, [(3, 0)], [(0, 0)])


class TestHelpers:
    def test_vec_index_column_stacking(self):
        assert vec_index(1, 2, 4) == 9

    def test_index_arrays_empty(self):
        rows, cols = index_arrays([], 3, 3)
        assert rows.size == cols.size == 0

    def test_check_finite_casts(self):
        out = check_finite([[1, 2]])
        assert out.dtype == np.float64
