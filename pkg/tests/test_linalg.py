"""Matrix arithmetic, the deterministic SVD, and seeded sampling."""

import numpy as np
import pytest

from hlora import linalg
from hlora.linalg import (
    SvdConvergenceError,
    frobenius_norm,
    matmul,
    random_gaussian,
    svd,
    truncate,
    weighted_sum,
)
from hlora.rng import SeededRng

from oracles import frobenius_by_summation, lapack_singular_values, matmul_by_loops


class TestMatmul:
    def test_identity_passthrough(self):
        m = np.arange(12, dtype=float).reshape(3, 4)
        assert np.array_equal(matmul(np.eye(3), m), m)

    def test_zero_product(self):
        z = np.zeros((2, 5))
        assert np.array_equal(matmul(np.eye(2), z), z)

    def test_hand_product(self):
        b = np.array([[1.0], [2.0]])
        a = np.array([[3.0, 4.0]])
        assert np.array_equal(matmul(b, a), np.array([[3.0, 4.0], [6.0, 8.0]]))

    def test_matches_loop_oracle(self):
        gen = np.random.default_rng(3)
        a = gen.standard_normal((6, 4))
        b = gen.standard_normal((4, 5))
        assert np.allclose(matmul(a, b), matmul_by_loops(a, b), atol=1e-12)

    def test_dimension_mismatch_names_both_shapes(self):
        with pytest.raises(ValueError, match=r"3x4.*5x2"):
            matmul(np.zeros((3, 4)), np.zeros((5, 2)))

    def test_rejects_non_finite(self):
        bad = np.array([[np.nan, 0.0]])
        with pytest.raises(ValueError, match="non-finite"):
            matmul(bad, np.zeros((2, 2)))


class TestFrobeniusNorm:
    def test_zero_matrix(self):
        assert frobenius_norm(np.zeros((4, 4))) == 0.0

    def test_pythagorean_row(self):
        assert frobenius_norm(np.array([[3.0, 4.0]])) == pytest.approx(5.0, abs=0)

    def test_matches_elementwise_summation(self):
        m = np.random.default_rng(7).standard_normal((10, 10))
        assert frobenius_norm(m) == pytest.approx(frobenius_by_summation(m), abs=1e-12)


class TestWeightedSum:
    def test_single_matrix_weight_one(self):
        m = np.random.default_rng(0).standard_normal((3, 3))
        assert np.array_equal(weighted_sum([m], [1.0]), m)

    def test_convex_combination_fixed_point(self):
        m = np.random.default_rng(1).standard_normal((2, 4))
        out = weighted_sum([m, m.copy()], [0.5, 0.5])
        assert np.allclose(out, m, atol=1e-15)

    def test_scalar_case(self):
        out = weighted_sum([np.array([[4.0]]), np.array([[0.0]])], [0.25, 0.75])
        assert out.shape == (1, 1)
        assert out[0, 0] == pytest.approx(1.0, abs=0)

    def test_linearity_in_weights(self):
        gen = np.random.default_rng(2)
        mats = [gen.standard_normal((5, 3)) for _ in range(4)]
        ws = gen.random(4)
        c = 3.5
        lhs = weighted_sum(mats, c * ws)
        rhs = c * weighted_sum(mats, ws)
        assert np.max(np.abs(lhs - rhs)) <= 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            weighted_sum([np.zeros((2, 2)), np.zeros((2, 3))], [0.5, 0.5])

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="weights"):
            weighted_sum([np.zeros((2, 2))], [0.5, 0.5])

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError, match="nonnegative"):
            weighted_sum([np.zeros((2, 2))], [-0.1])


class TestSvd:
    def test_diagonal_singular_values(self):
        res = svd(np.diag([3.0, 2.0, 1.0]))
        assert np.allclose(res.singular_values, [3.0, 2.0, 1.0], atol=1e-12)

    def test_rank_one_from_known_factors(self):
        u = np.array([1.2, 1.6])  # |u| = 2
        v = np.array([1.0, 2.0, 2.0])  # |v| = 3
        res = svd(np.outer(u, v))
        assert res.singular_values[0] == pytest.approx(6.0, rel=1e-12)
        assert np.all(res.singular_values[1:] <= 1e-9)

    def test_round_trip_random(self):
        m = np.random.default_rng(11).standard_normal((8, 5))
        res = svd(m)
        rel = np.linalg.norm(res.reconstruct() - m) / np.linalg.norm(m)
        assert rel <= 1e-9

    @pytest.mark.parametrize(
        "shape", [(1, 1), (1, 6), (6, 1), (4, 4), (9, 4), (4, 9), (33, 17), (64, 64)]
    )
    def test_contract_across_shapes(self, shape):
        m = np.random.default_rng(sum(shape)).standard_normal(shape)
        res = svd(m)
        p = min(shape)
        assert res.u.shape == (shape[0], p)
        assert res.vt.shape == (p, shape[1])
        assert np.all(np.diff(res.singular_values) <= 1e-15)
        assert np.all(res.singular_values >= 0)
        assert np.max(np.abs(res.u.T @ res.u - np.eye(p))) <= 1e-9
        assert np.max(np.abs(res.vt @ res.vt.T - np.eye(p))) <= 1e-9
        rel = np.linalg.norm(res.reconstruct() - m) / max(np.linalg.norm(m), 1e-12)
        assert rel <= 1e-9

    def test_singular_values_match_lapack(self):
        m = np.random.default_rng(5).standard_normal((12, 7))
        res = svd(m)
        assert np.allclose(res.singular_values, lapack_singular_values(m), atol=1e-10)

    def test_bit_identical_repeat(self):
        m = np.random.default_rng(13).standard_normal((10, 10))
        r1, r2 = svd(m), svd(m)
        assert np.array_equal(r1.u, r2.u)
        assert np.array_equal(r1.singular_values, r2.singular_values)
        assert np.array_equal(r1.vt, r2.vt)

    def test_sign_convention(self):
        m = np.random.default_rng(17).standard_normal((9, 6))
        res = svd(m)
        for j in range(res.u.shape[1]):
            pivot = int(np.argmax(np.abs(res.u[:, j])))
            assert res.u[pivot, j] >= 0

    def test_rank_deficient_orthonormal_completion(self):
        gen = np.random.default_rng(19)
        m = np.outer(gen.standard_normal(7), gen.standard_normal(5))
        res = svd(m)
        assert np.max(np.abs(res.u.T @ res.u - np.eye(5))) <= 1e-9
        assert np.sum(res.singular_values > 1e-9) == 1

    def test_zero_matrix(self):
        res = svd(np.zeros((4, 6)))
        assert np.all(res.singular_values == 0)
        assert np.max(np.abs(res.u.T @ res.u - np.eye(4))) <= 1e-12

    def test_sweep_cap_raises_instead_of_garbage(self):
        m = np.random.default_rng(23).standard_normal((6, 6))
        with pytest.raises(SvdConvergenceError, match="did not converge"):
            svd(m, max_sweeps=0)


class TestTruncate:
    def test_diagonal_truncation(self):
        res = svd(np.diag([3.0, 2.0, 1.0]))
        u, s, vt = truncate(res, 2)
        assert np.allclose((u * s) @ vt, np.diag([3.0, 2.0, 0.0]), atol=1e-12)

    def test_full_rank_truncation_is_noop(self):
        m = np.random.default_rng(29).standard_normal((6, 4))
        u, s, vt = truncate(svd(m), 4)
        assert np.linalg.norm((u * s) @ vt - m) / np.linalg.norm(m) <= 1e-9

    def test_tail_energy_identity(self):
        m = np.random.default_rng(31).standard_normal((10, 8))
        res = svd(m)
        for r in (1, 3, 5, 7):
            u, s, vt = truncate(res, r)
            err = np.linalg.norm(m - (u * s) @ vt)
            tail = np.sqrt(np.sum(res.singular_values[r:] ** 2))
            assert err == pytest.approx(tail, abs=1e-9)

    @pytest.mark.parametrize("r", [0, -1, 5])
    def test_rank_out_of_range(self, r):
        res = svd(np.eye(4))
        with pytest.raises(ValueError, match="rank"):
            truncate(res, r)


class TestEckartYoung:
    def test_truncation_beats_random_factorizations(self):
        # trimmed grid here; the full 100x4x50 grid runs in the acceptance suite
        gen = np.random.default_rng(123)
        for trial in range(20):
            m = gen.standard_normal((20, 30))
            res = svd(m)
            for r in (1, 2, 4, 8):
                u, s, vt = truncate(res, r)
                best = np.linalg.norm(m - (u * s) @ vt)
                for _ in range(10):
                    b = gen.standard_normal((20, r))
                    a = gen.standard_normal((r, 30))
                    assert best <= np.linalg.norm(m - b @ a) + 1e-9


class TestRandomGaussian:
    def test_same_seed_bit_identical(self):
        rng = SeededRng(42, 7)
        assert np.array_equal(random_gaussian(rng, 5, 5, 1.0), random_gaussian(rng, 5, 5, 1.0))

    def test_sample_mean_near_zero(self):
        draws = random_gaussian(SeededRng(1), 100, 100, 1.0)
        stderr = 1.0 / np.sqrt(draws.size)
        assert abs(draws.mean()) <= 5 * stderr

    def test_sample_variance_near_one(self):
        draws = random_gaussian(SeededRng(2), 100, 100, 1.0)
        assert 0.9 <= draws.var() <= 1.1

    def test_rejects_bad_std(self):
        with pytest.raises(ValueError, match="std"):
            random_gaussian(SeededRng(0), 2, 2, 0.0)
