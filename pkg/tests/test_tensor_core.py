"""Tests for dense tensor primitives in tnml.tensor_core."""

import numpy as np
import pytest

from tnml.exceptions import TensorError
from tnml.models import ScalarKind, TruncParams
from tnml.tensor_core import (
    as_tensor,
    contract,
    frobenius_norm,
    inverse_permutation,
    permute,
    scalar_kind_of,
    svd,
    truncation_rank,
)


class TestConstruction:
    """Tests for tensor construction and scalar kinds."""

    def test_as_tensor_real(self) -> None:
        """Test that real data becomes a contiguous float64 tensor."""
        t = as_tensor([[1, 2], [3, 4]])
        assert t.dtype == np.float64
        assert t.flags.c_contiguous
        assert scalar_kind_of(t) == ScalarKind.REAL

    def test_as_tensor_complex(self) -> None:
        """Test complex construction."""
        t = as_tensor([1, 2j], ScalarKind.COMPLEX)
        assert scalar_kind_of(t) == ScalarKind.COMPLEX

    def test_zero_extent_rejected(self) -> None:
        """Test that empty extents are rejected."""
        with pytest.raises(TensorError, match="extents"):
            as_tensor(np.zeros((2, 0)))

    def test_unsupported_dtype(self) -> None:
        """Test that float32 tensors have no scalar kind."""
        with pytest.raises(TensorError, match="dtype"):
            scalar_kind_of(np.zeros(3, dtype=np.float32))


class TestContract:
    """Tests for pairwise contraction."""

    def test_matrix_vector(self) -> None:
        """Test a matrix-vector product."""
        out = contract(as_tensor([[1, 2], [3, 4]]), as_tensor([1, 1]), [(1, 0)])
        np.testing.assert_array_equal(out, [3.0, 7.0])

    def test_free_index_order(self, rng: np.random.Generator) -> None:
        """Test that free indices of a precede those of b."""
        a = rng.normal(size=(2, 3, 4))
        b = rng.normal(size=(4, 5, 3))
        out = contract(a, b, [(1, 2), (2, 0)])
        np.testing.assert_allclose(out, np.einsum("ijk,klj->il", a, b), atol=1e-13)

    def test_associativity(self, rng: np.random.Generator) -> None:
        """Test that (A.B).C equals A.(B.C) for a three-tensor chain."""
        a = rng.normal(size=(3, 4, 5))
        b = rng.normal(size=(5, 2, 6))
        c = rng.normal(size=(6, 4, 2))
        # a_{ijk} b_{klm} c_{m j l} -> free i
        left_first = contract(contract(a, b, [(2, 0)]), c, [(1, 1), (2, 2), (3, 0)])
        right_first = contract(a, contract(b, c, [(2, 0), (1, 2)]), [(2, 0), (1, 1)])
        np.testing.assert_allclose(left_first, right_first, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(
            left_first, np.einsum("ijk,klm,mjl->i", a, b, c), rtol=1e-12, atol=1e-12
        )

    def test_outer_product(self) -> None:
        """Test that no pairs gives the outer product."""
        out = contract(as_tensor([1, 2]), as_tensor([3, 4, 5]), [])
        assert out.shape == (2, 3)

    def test_kind_mismatch(self) -> None:
        """Test that real and complex tensors cannot be mixed."""
        with pytest.raises(TensorError, match="real and complex"):
            contract(as_tensor([1.0]), as_tensor([1j], ScalarKind.COMPLEX), [(0, 0)])

    def test_extent_mismatch(self) -> None:
        """Test that paired extents must agree."""
        with pytest.raises(TensorError, match="extent mismatch"):
            contract(np.ones((2, 3)), np.ones((2, 3)), [(1, 0)])

    def test_repeated_index(self) -> None:
        """Test that an index may be paired only once."""
        with pytest.raises(TensorError, match="repeated"):
            contract(np.ones((2, 2)), np.ones((2, 2)), [(0, 0), (0, 1)])

    def test_out_of_range(self) -> None:
        """Test that out-of-range indices are rejected."""
        with pytest.raises(TensorError, match="out of range"):
            contract(np.ones((2, 2)), np.ones((2, 2)), [(2, 0)])


class TestPermute:
    """Tests for index permutation."""

    def test_permute_and_invert(self, rng: np.random.Generator) -> None:
        """Test that the inverse permutation restores the tensor."""
        t = rng.normal(size=(2, 3, 4, 5))
        perm = [2, 0, 3, 1]
        moved = permute(t, perm)
        assert moved.shape == (4, 2, 5, 3)
        np.testing.assert_array_equal(permute(moved, inverse_permutation(perm)), t)

    def test_not_a_permutation(self) -> None:
        """Test that invalid permutations are rejected."""
        with pytest.raises(TensorError, match="not a permutation"):
            permute(np.ones((2, 2)), [0, 0])

    def test_frobenius_norm(self) -> None:
        """Test the norm of a complex tensor."""
        assert frobenius_norm(as_tensor([3, 4j], ScalarKind.COMPLEX)) == pytest.approx(5.0)


class TestTruncationRank:
    """Tests for the truncation rule."""

    def test_none_keeps_all(self) -> None:
        """Test that no rule keeps the full spectrum."""
        assert truncation_rank(np.array([3.0, 2.0, 0.0]), None) == 3

    def test_max_rank_cap(self) -> None:
        """Test the max_rank cap."""
        s = np.array([5.0, 4.0, 3.0, 2.0])
        assert truncation_rank(s, TruncParams(max_rank=2, cutoff=0.0)) == 2

    def test_cutoff(self) -> None:
        """Test the relative cutoff."""
        s = np.array([1.0, 0.5, 1e-3, 1e-6])
        assert truncation_rank(s, TruncParams(max_rank=10, cutoff=1e-2)) == 2

    def test_noise_floor(self) -> None:
        """Test that values below 1e-14 relative are dropped even with cutoff 0."""
        s = np.array([1.0, 1e-16])
        assert truncation_rank(s, TruncParams(max_rank=10, cutoff=0.0)) == 1

    def test_min_rank(self) -> None:
        """Test that min_rank keeps values the cutoff would drop."""
        s = np.array([1.0, 1e-12, 1e-13])
        assert truncation_rank(s, TruncParams(max_rank=10, cutoff=1e-3, min_rank=3)) == 3

    def test_all_zero_keeps_one(self) -> None:
        """Test that the rank is never below 1."""
        assert truncation_rank(np.zeros(3), TruncParams()) == 1


class TestSvd:
    """Tests for the tensor SVD."""

    def test_reconstruction_full_rank(self, rng: np.random.Generator) -> None:
        """Test that U S V reproduces the tensor with orthonormal factors."""
        t = rng.normal(size=(2, 3, 4))
        res = svd(t, [0, 2], [1])
        assert res.u.shape == (2, 4, 3)
        assert res.v.shape == (3, 3)
        recon = np.einsum("ack,k,kb->abc", res.u, res.s, res.v)
        np.testing.assert_allclose(recon, t, atol=1e-12)
        u = res.u.reshape(-1, res.kept_rank)
        np.testing.assert_allclose(u.T @ u, np.eye(res.kept_rank), atol=1e-12)
        assert res.discarded_weight == 0.0

    def test_complex_orthonormality(self, rng: np.random.Generator) -> None:
        """Test conjugate orthonormality for complex input."""
        t = rng.normal(size=(4, 5)) + 1j * rng.normal(size=(4, 5))
        res = svd(t, [0], [1])
        np.testing.assert_allclose(np.conj(res.v) @ res.v.T, np.eye(4), atol=1e-12)

    def test_singular_values_descending(self, rng: np.random.Generator) -> None:
        """Test that singular values are nonnegative and descending."""
        res = svd(rng.normal(size=(6, 5)), [0], [1])
        assert np.all(res.s >= 0)
        assert np.all(np.diff(res.s) <= 0)

    def test_eckart_young(self, rng: np.random.Generator) -> None:
        """Test that truncation error equals the discarded weight and is optimal."""
        t = rng.normal(size=(8, 6))
        res = svd(t, [0], [1], TruncParams(max_rank=3, cutoff=0.0))
        approx = (res.u * res.s) @ res.v
        error = float(np.sum((t - approx) ** 2))
        assert res.kept_rank == 3
        assert error == pytest.approx(res.discarded_weight, rel=1e-10, abs=1e-10)
        assert res.discarded_weight == pytest.approx(float(np.sum(res.spectrum[3:] ** 2)))
        for _ in range(20):
            other = rng.normal(size=(8, 3)) @ rng.normal(size=(3, 6))
            assert float(np.sum((t - other) ** 2)) >= error - 1e-10

    def test_random_matrix_properties(self, rng: np.random.Generator) -> None:
        """Test orthonormality, ordering and the optimal residual on 100 random matrices."""
        for trial in range(100):
            rows, cols = (int(v) for v in rng.integers(1, 9, size=2))
            t = rng.normal(size=(rows, cols))
            if trial % 2:
                t = t + 1j * rng.normal(size=(rows, cols))
            keep = int(rng.integers(1, min(rows, cols) + 1))
            res = svd(t, [0], [1], TruncParams(max_rank=keep, cutoff=0.0))
            k = res.kept_rank
            assert k == keep
            np.testing.assert_allclose(res.u.conj().T @ res.u, np.eye(k), atol=1e-12)
            np.testing.assert_allclose(res.v @ res.v.conj().T, np.eye(k), atol=1e-12)
            assert np.all(res.spectrum >= 0.0)
            assert np.all(np.diff(res.spectrum) <= 1e-12)
            residual = float(np.sum(np.abs(t - (res.u * res.s) @ res.v) ** 2))
            optimal = float(np.sum(res.spectrum[k:] ** 2))
            assert residual == pytest.approx(optimal, rel=1e-9, abs=1e-10)
            assert res.discarded_weight == pytest.approx(optimal, rel=1e-12, abs=1e-14)

    def test_rank_one_with_cutoff(self) -> None:
        """Test that an exactly rank-1 tensor truncates to rank 1."""
        t = np.outer([1.0, 2.0, 3.0], [1.0, -1.0])
        res = svd(t, [0], [1], TruncParams(max_rank=5, cutoff=1e-10))
        assert res.kept_rank == 1
        assert res.discarded_weight < 1e-20

    def test_bad_partition(self) -> None:
        """Test that row and column indices must partition the tensor indices."""
        with pytest.raises(TensorError, match="partition"):
            svd(np.ones((2, 2, 2)), [0], [1])
        with pytest.raises(TensorError, match="non-empty"):
            svd(np.ones((2, 2)), [], [0, 1])

    def test_non_finite(self) -> None:
        """Test that NaN input is rejected."""
        with pytest.raises(TensorError, match="non-finite"):
            svd(np.array([[1.0, np.nan]]), [0], [1])
