"""Tensor core: unfolding layout, mode products, norms, stable rank."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robustgrad import (
    fold,
    fro_norm,
    inner,
    mode_product,
    mode_spectral_norm,
    multilinear_stable_rank,
    outer,
    stable_rank,
    unfold,
)

rng = np.random.default_rng(20240811)


def random_tensor(shape, complex_values=False, seed=None):
    local = np.random.default_rng(seed) if seed is not None else rng
    t = local.standard_normal(shape)
    if complex_values:
        t = t + 1j * local.standard_normal(shape)
    return t


class TestUnfold:
    def test_matrix_mode0_is_identity(self):
        m = np.eye(2)
        assert np.array_equal(unfold(m, 0), m)

    def test_2x2x2_hand_table(self):
        # entries 1..8 in row-major order; column index j = i2 + 2*i3 etc.
        # evaluated by hand from the fiber definition before implementing
        t = np.arange(1.0, 9.0).reshape(2, 2, 2)
        assert np.array_equal(unfold(t, 0), [[1, 3, 2, 4], [5, 7, 6, 8]])
        assert np.array_equal(unfold(t, 1), [[1, 5, 2, 6], [3, 7, 4, 8]])
        assert np.array_equal(unfold(t, 2), [[1, 5, 3, 7], [2, 6, 4, 8]])

    def test_norm_preserved(self):
        t = random_tensor((3, 4, 5), complex_values=True)
        for k in range(3):
            assert np.isclose(np.linalg.norm(unfold(t, k)), fro_norm(t), rtol=1e-12)

    def test_element_count_preserved(self):
        t = random_tensor((2, 3, 4))
        for k in range(3):
            assert unfold(t, k).size == t.size

    def test_mode_out_of_range(self):
        with pytest.raises(ValueError):
            unfold(np.zeros((2, 2)), 2)


class TestFold:
    def test_round_trip_2x2x2(self):
        t = np.arange(1.0, 9.0).reshape(2, 2, 2)
        for k in range(3):
            assert np.array_equal(fold(unfold(t, k), k, t.shape), t)

    def test_zero_matrix(self):
        assert np.array_equal(fold(np.zeros((3, 8)), 0, (3, 4, 2)), np.zeros((3, 4, 2)))

    def test_round_trip_3x4x5_bitwise(self):
        t = random_tensor((3, 4, 5))
        for k in range(3):
            back = fold(unfold(t, k), k, t.shape)
            assert np.array_equal(back, t)  # exact, not approximate

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            fold(np.zeros((3, 9)), 0, (3, 4, 2))

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.integers(min_value=1, max_value=4), min_size=1, max_size=4),
           st.integers(min_value=0, max_value=3), st.integers())
    def test_round_trip_property(self, shape, k, seed):
        k = k % len(shape)
        t = random_tensor(tuple(shape), seed=abs(seed) % 2**32)
        assert np.array_equal(fold(unfold(t, k), k, t.shape), t)


class TestModeProduct:
    def test_identity(self):
        t = random_tensor((3, 4, 2))
        for k in range(3):
            assert np.allclose(mode_product(t, np.eye(t.shape[k]), k), t)

    def test_rank1(self):
        # (u1 o u2 o u3) x_0 A = (A u1) o u2 o u3, expanded from the definition
        u1, u2, u3 = rng.standard_normal(2), rng.standard_normal(2), rng.standard_normal(2)
        a = rng.standard_normal((3, 2))
        got = mode_product(outer([u1, u2, u3]), a, 0)
        assert np.allclose(got, outer([a @ u1, u2, u3]), atol=1e-13)

    def test_composition_same_mode(self):
        t = random_tensor((3, 4, 2), complex_values=True)
        u = random_tensor((5, 3), complex_values=True)
        v = random_tensor((2, 5), complex_values=True)
        assert np.allclose(mode_product(mode_product(t, u, 0), v, 0),
                           mode_product(t, v @ u, 0), atol=1e-12)

    def test_commutes_across_modes(self):
        t = random_tensor((3, 4, 2))
        u = rng.standard_normal((5, 3))
        v = rng.standard_normal((6, 4))
        a = mode_product(mode_product(t, u, 0), v, 1)
        b = mode_product(mode_product(t, v, 1), u, 0)
        assert np.allclose(a, b, rtol=1e-12)

    def test_unfolding_identity(self):
        t = random_tensor((3, 4, 2))
        u = rng.standard_normal((5, 4))
        assert np.allclose(unfold(mode_product(t, u, 1), 1), u @ unfold(t, 1), rtol=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            mode_product(np.zeros((2, 2)), np.zeros((3, 3)), 0)


class TestInner:
    def test_zero(self):
        t = random_tensor((2, 3))
        assert inner(t, np.zeros_like(t)) == 0.0

    def test_basis_outer(self):
        e1 = np.array([1.0, 0.0])
        assert inner(outer([e1, e1]), outer([e1, e1])) == 1.0

    def test_complex_conjugation(self):
        a = np.array([1j])
        assert inner(a, a) == pytest.approx(1.0)  # i * conj(i) = 1

    def test_self_inner_nonnegative(self):
        t = random_tensor((3, 3), complex_values=True)
        val = inner(t, t)
        assert val.imag == pytest.approx(0.0, abs=1e-12)
        assert val.real >= 0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            inner(np.zeros((2, 2)), np.zeros((2, 3)))


class TestNorms:
    def test_identity_matrix(self):
        eye = np.eye(3)
        assert fro_norm(eye) == pytest.approx(np.sqrt(3))
        assert mode_spectral_norm(eye, 0) == pytest.approx(1.0, abs=1e-10)

    def test_rank1_fro_equals_spectral(self):
        t = outer([rng.standard_normal(3), rng.standard_normal(4), rng.standard_normal(2)])
        for k in range(3):
            assert mode_spectral_norm(t, k) == pytest.approx(fro_norm(t), rel=1e-9)

    def test_spectral_matches_dense_svd(self):
        t = random_tensor((4, 4, 4), complex_values=True)
        for k in range(3):
            top = np.linalg.svd(unfold(t, k), compute_uv=False)[0]
            assert abs(mode_spectral_norm(t, k) - top) < 1e-8

    def test_zero_tensor(self):
        z = np.zeros((2, 2, 2))
        assert fro_norm(z) == 0.0
        assert mode_spectral_norm(z, 0) == 0.0


class TestStableRank:
    def test_rank1_is_one(self):
        t = outer([rng.standard_normal(3), rng.standard_normal(4), rng.standard_normal(5)])
        for k in range(3):
            assert stable_rank(t, k) == pytest.approx(1.0, abs=1e-8)
        assert multilinear_stable_rank(t) == pytest.approx(1.0, abs=1e-8)

    def test_identity_matrix(self):
        assert stable_rank(np.eye(4), 0) == pytest.approx(4.0, rel=1e-9)

    def test_weighted_orthogonal_sum(self):
        # singular values (2, 1) in the shared mode: sr = (4+1)/4 = 5/4
        m = 2.0 * np.outer([1, 0, 0], [1, 0, 0, 0]) + np.outer([0, 1, 0], [0, 1, 0, 0])
        assert stable_rank(m, 0) == pytest.approx(1.25, rel=1e-9)
        assert stable_rank(m, 1) == pytest.approx(1.25, rel=1e-9)
        assert multilinear_stable_rank(m) == pytest.approx(1.25, rel=1e-9)

    def test_zero_tensor_is_error(self):
        with pytest.raises(ValueError):
            stable_rank(np.zeros((2, 2)), 0)

    @settings(max_examples=20, deadline=None)
    @given(st.integers())
    def test_bounded_by_rank(self, seed):
        t = random_tensor((4, 5, 3), seed=abs(seed) % 2**32)
        for k in range(3):
            sr = stable_rank(t, k)
            rank = int(np.sum(np.linalg.svd(unfold(t, k), compute_uv=False) > 1e-10))
            assert 1.0 - 1e-9 <= sr <= rank + 1e-9


class TestOuter:
    def test_basis(self):
        e1 = np.array([1.0, 0.0])
        m = outer([e1, e1])
        expected = np.zeros((2, 2))
        expected[0, 0] = 1.0
        assert np.array_equal(m, expected)

    def test_empty_list(self):
        with pytest.raises(ValueError):
            outer([])
