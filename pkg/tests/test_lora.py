"""Adapter construction, merging, and rank-r factorization."""

import warnings

import numpy as np
import pytest

from hlora.lora import LoraAdapter, approximation_error, decompose, init_adapter, merge
from hlora.rng import SeededRng

from oracles import lapack_singular_values


class TestAdapterType:
    def test_rank_mismatch_rejected(self):
        with pytest.raises(ValueError, match="rank"):
            LoraAdapter(b=np.zeros((4, 2)), a=np.zeros((3, 6)))

    def test_rank_above_min_dim_rejected(self):
        with pytest.raises(ValueError, match="exceeds min"):
            LoraAdapter(b=np.zeros((4, 5)), a=np.zeros((5, 6)))

    def test_large_rank_warns(self):
        with pytest.warns(UserWarning, match="barely low-rank"):
            warnings.simplefilter("always")
            LoraAdapter(b=np.zeros((4, 3)), a=np.zeros((3, 6)))

    def test_value_semantics(self):
        b = np.zeros((3, 1))
        a = np.ones((1, 3))
        adapter = LoraAdapter(b=b, a=a)
        b[0, 0] = 99.0
        assert adapter.b[0, 0] == 0.0
        with pytest.raises(ValueError):
            adapter.b[0, 0] = 1.0


class TestInitAdapter:
    def test_fresh_adapter_merges_to_zero(self):
        adapter = init_adapter(SeededRng(0), 6, 9, 3, 0.02)
        assert np.array_equal(merge(adapter), np.zeros((6, 9)))

    def test_deterministic(self):
        rng = SeededRng(7, 3)
        one = init_adapter(rng, 5, 8, 2, 0.02)
        two = init_adapter(rng, 5, 8, 2, 0.02)
        assert np.array_equal(one.a, two.a)
        assert np.array_equal(one.b, two.b)

    def test_shapes(self):
        adapter = init_adapter(SeededRng(1), 4, 6, 2, 0.02)
        assert adapter.b.shape == (4, 2)
        assert adapter.a.shape == (2, 6)
        assert adapter.rank == 2

    @pytest.mark.parametrize("rank", [0, 5])
    def test_rank_out_of_range(self, rank):
        with pytest.raises(ValueError, match="rank"):
            init_adapter(SeededRng(0), 4, 6, rank, 0.02)


class TestMerge:
    def test_zero_b_gives_zero_update(self):
        adapter = LoraAdapter(b=np.zeros((3, 2)), a=np.ones((2, 5)))
        assert np.array_equal(merge(adapter), np.zeros((3, 5)))

    def test_rank_one_hand_case(self):
        adapter = LoraAdapter(b=np.array([[1.0], [0.0]]), a=np.array([[1.0, 0.0]]))
        assert np.array_equal(merge(adapter), np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_merged_update_rank_bounded(self):
        gen = np.random.default_rng(3)
        adapter = LoraAdapter(b=gen.standard_normal((10, 3)), a=gen.standard_normal((3, 12)))
        svals = lapack_singular_values(merge(adapter))
        assert np.all(svals[3:] <= 1e-9)

    def test_merge_does_not_mutate(self):
        gen = np.random.default_rng(4)
        adapter = LoraAdapter(b=gen.standard_normal((4, 2)), a=gen.standard_normal((2, 4)))
        b_before = adapter.b.copy()
        merge(adapter)
        assert np.array_equal(adapter.b, b_before)


class TestDecompose:
    def test_diagonal_truncation(self):
        result = decompose(np.diag([3.0, 2.0, 1.0]), 2)
        assert np.allclose(merge(result), np.diag([3.0, 2.0, 0.0]), atol=1e-12)

    def test_lossless_at_sufficient_rank(self):
        gen = np.random.default_rng(5)
        w = gen.standard_normal((7, 4)) @ gen.standard_normal((4, 9))
        result = decompose(w, 4)
        assert np.linalg.norm(w - merge(result)) / np.linalg.norm(w) <= 1e-9

    def test_sigma_lives_in_a_factor(self):
        w = np.diag([5.0, 3.0])
        result = decompose(w, 2)
        # left factor orthonormal, singular mass in the right factor
        assert np.allclose(result.b.T @ result.b, np.eye(2), atol=1e-12)
        assert np.allclose(np.linalg.norm(result.a, axis=1), [5.0, 3.0], atol=1e-12)

    def test_error_equals_tail_energy(self):
        w = np.random.default_rng(6).standard_normal((12, 9))
        svals = lapack_singular_values(w)
        result = decompose(w, 3)
        tail = np.sqrt(np.sum(svals[3:] ** 2))
        assert np.linalg.norm(w - merge(result)) == pytest.approx(tail, abs=1e-9)

    def test_rank_out_of_range(self):
        with pytest.raises(ValueError, match="rank"):
            decompose(np.eye(3), 4)

    def test_input_not_mutated(self):
        w = np.random.default_rng(8).standard_normal((5, 5))
        before = w.copy()
        decompose(w, 2)
        assert np.array_equal(w, before)


class TestApproximationError:
    def test_full_rank_error_tiny(self):
        w = np.random.default_rng(9).standard_normal((6, 6))
        adapter = decompose(w, 6)
        assert approximation_error(w, adapter) <= 1e-9 * np.linalg.norm(w)

    def test_zero_adapter_error_is_norm(self):
        w = np.random.default_rng(10).standard_normal((4, 7))
        adapter = LoraAdapter(b=np.zeros((4, 1)), a=np.zeros((1, 7)))
        assert approximation_error(w, adapter) == pytest.approx(np.linalg.norm(w), abs=1e-12)

    def test_monotone_in_rank(self):
        w = np.random.default_rng(11).standard_normal((10, 8))
        errors = [approximation_error(w, decompose(w, r)) for r in range(1, 9)]
        assert all(errors[i] >= errors[i + 1] - 1e-12 for i in range(len(errors) - 1))

    def test_shape_mismatch(self):
        adapter = LoraAdapter(b=np.zeros((4, 1)), a=np.zeros((1, 7)))
        with pytest.raises(ValueError, match="shape|update"):
            approximation_error(np.zeros((5, 7)), adapter)


class TestOptimality:
    def test_decompose_beats_random_competitors(self):
        gen = np.random.default_rng(12)
        for trial in range(5):
            w = gen.standard_normal((9, 11))
            for r in (1, 2, 4):
                ours = approximation_error(w, decompose(w, r))
                for _ in range(50):
                    competitor = LoraAdapter(
                        b=gen.standard_normal((9, r)), a=gen.standard_normal((r, 11))
                    )
                    assert ours <= approximation_error(w, competitor) + 1e-9

    def test_round_trip_at_numerical_rank(self):
        gen = np.random.default_rng(13)
        for rho in (1, 2, 5):
            w = gen.standard_normal((8, rho)) @ gen.standard_normal((rho, 10))
            for rank in range(rho, 8):
                rel = approximation_error(w, decompose(w, rank)) / np.linalg.norm(w)
                assert rel <= 1e-9
