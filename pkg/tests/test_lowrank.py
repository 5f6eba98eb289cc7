import numpy as np
import pytest

from embstab import (
    EmbeddingMatrix,
    Role,
    apply_transform,
    factored_decomposition,
    low_rank_svd_trans,
    qr_thin,
)
from embstab.errors import (
    DimensionMismatch,
    DuplicateId,
    NonFinite,
    RankDeficient,
    RankTruncationWarning,
    RoleMismatch,
)
from conftest import random_pair, rel_fro


class TestEmbeddingMatrix:
    def test_basic_properties(self):
        emb = EmbeddingMatrix.of_items([[1.0, 2.0], [3.0, 4.0]])
        assert emb.n == 2
        assert emb.dim == 2
        assert emb.role is Role.ITEM
        assert emb.ids.dtype == np.uint64

    def test_rejects_duplicate_ids(self):
        with pytest.raises(DuplicateId):
            EmbeddingMatrix.of_items([[1.0], [2.0]], ids=[7, 7])

    def test_rejects_nan(self):
        with pytest.raises(NonFinite):
            EmbeddingMatrix.of_items([[1.0, np.nan]])

    def test_rejects_inf(self):
        with pytest.raises(NonFinite):
            EmbeddingMatrix.of_users([[np.inf, 0.0]])

    def test_rejects_id_row_count_mismatch(self):
        with pytest.raises(DimensionMismatch):
            EmbeddingMatrix.of_items([[1.0], [2.0]], ids=[1, 2, 3])

    def test_arrays_are_read_only(self):
        emb = EmbeddingMatrix.of_items([[1.0, 2.0]])
        with pytest.raises(ValueError):
            emb.vectors[0, 0] = 9.0
        with pytest.raises(ValueError):
            emb.ids[0] = 9

    def test_positions_looks_up_unsorted_ids(self):
        emb = EmbeddingMatrix.of_items([[1.0], [2.0], [3.0]], ids=[30, 10, 20])
        assert emb.positions([10, 30]).tolist() == [1, 0]
        with pytest.raises(KeyError):
            emb.positions([99])

    def test_int_input_upcast_to_float64(self):
        emb = EmbeddingMatrix.of_items(np.eye(2, dtype=int))
        assert emb.vectors.dtype == np.float64


class TestQrThin:
    def test_identity(self):
        q, r = qr_thin(np.eye(3))
        np.testing.assert_allclose(q, np.eye(3), atol=1e-15)
        np.testing.assert_allclose(r, np.eye(3), atol=1e-15)

    def test_hand_computed_column_norms(self):
        # Columns are orthogonal with norms 5 and 1, so R = diag(5, 1) under
        # the nonnegative-diagonal convention.
        a = np.array([[3.0, 0.0], [4.0, 0.0], [0.0, 1.0]])
        q, r = qr_thin(a)
        np.testing.assert_allclose(np.diag(r), [5.0, 1.0], atol=1e-12)
        assert np.all(np.diag(r) >= 0)
        np.testing.assert_allclose(q @ r, a, atol=1e-12)

    def test_random_reconstruction_and_orthonormality(self):
        a = np.random.default_rng(3).standard_normal((100, 16))
        q, r = qr_thin(a)
        assert rel_fro(q @ r, a) < 1e-12
        assert np.linalg.norm(q.T @ q - np.eye(16)) < 1e-12
        assert np.allclose(r, np.triu(r))

    def test_wide_input_allowed(self):
        a = np.random.default_rng(4).standard_normal((2, 5))
        q, r = qr_thin(a)
        assert q.shape == (2, 2) and r.shape == (2, 5)
        assert rel_fro(q @ r, a) < 1e-12

    def test_nonfinite_rejected(self):
        with pytest.raises(NonFinite):
            qr_thin(np.array([[1.0, np.nan]]))

    def test_empty_rejected(self):
        with pytest.raises(DimensionMismatch):
            qr_thin(np.empty((0, 3)))


# Frozen from a dense SVD of the materialized 3x2 product
# X = T W^T = [[2, 0], [0, 3], [1, 3]].
EXPECTED_SPECTRUM_3X2 = np.array([4.319596107466319, 2.0835281299665294])


class TestLowRankSvdTrans:
    def test_identity_score_matrix(self):
        items = EmbeddingMatrix.of_items(np.eye(2))
        users = EmbeddingMatrix.of_users(np.eye(2))
        tr = low_rank_svd_trans(items, users)
        np.testing.assert_allclose(tr.spectrum, [1.0, 1.0], atol=1e-12)
        # The maps are not unique under a degenerate spectrum; check the
        # product and Gram contracts instead of the matrix entries.
        product = (np.eye(2) @ tr.item_map) @ (np.eye(2) @ tr.user_map).T
        np.testing.assert_allclose(product, np.eye(2), atol=1e-12)

    def test_small_example_against_dense_svd_oracle(self):
        items = EmbeddingMatrix.of_items([[2.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        users = EmbeddingMatrix.of_users([[1.0, 0.0], [0.0, 3.0]])
        score = items.vectors @ users.vectors.T
        oracle = np.linalg.svd(score, compute_uv=False)
        np.testing.assert_allclose(oracle, EXPECTED_SPECTRUM_3X2, rtol=1e-15)

        tr = low_rank_svd_trans(items, users)
        np.testing.assert_allclose(tr.spectrum, EXPECTED_SPECTRUM_3X2, rtol=1e-12)
        rebuilt = (items.vectors @ tr.item_map) @ (users.vectors @ tr.user_map).T
        assert np.linalg.norm(rebuilt - score) < 1e-12

    def test_random_pair_product_and_spectrum(self):
        items, users = random_pair(50, 40, 8, seed=11)
        score = items.vectors @ users.vectors.T
        dense_top = np.linalg.svd(score, compute_uv=False)[:8]

        tr = low_rank_svd_trans(items, users)
        rebuilt = (items.vectors @ tr.item_map) @ (users.vectors @ tr.user_map).T
        assert rel_fro(rebuilt, score) < 1e-10
        gram = (items.vectors @ tr.item_map).T @ (items.vectors @ tr.item_map)
        np.testing.assert_allclose(np.diag(gram), dense_top, rtol=1e-8)

    def test_gram_diagonality_both_sides(self):
        items, users = random_pair(60, 45, 8, seed=5)
        tr = low_rank_svd_trans(items, users)
        gt = (items.vectors @ tr.item_map).T @ (items.vectors @ tr.item_map)
        gw = (users.vectors @ tr.user_map).T @ (users.vectors @ tr.user_map)
        tol = 1e-8 * tr.spectrum[0]
        assert np.max(np.abs(gt - np.diag(np.diag(gt)))) < tol
        assert np.max(np.abs(gw - np.diag(np.diag(gw)))) < tol
        np.testing.assert_allclose(np.diag(gt), np.diag(gw), rtol=1e-8)
        np.testing.assert_allclose(np.diag(gt), tr.spectrum, rtol=1e-8)

    def test_inverse_free_identity(self):
        # item_map built as R_W^T V S^{-1/2} must agree with the explicit
        # solve R_T^{-1} U S^{1/2}; the solve route exists only here.
        items, users = random_pair(50, 40, 8, seed=21)
        fd = factored_decomposition(items, users)
        tr = low_rank_svd_trans(items, users)
        alt = np.linalg.solve(fd.r_items, fd.svd_left @ np.diag(np.sqrt(fd.spectrum)))
        assert np.linalg.norm(tr.item_map - alt) < 1e-8

    def test_deterministic(self):
        items, users = random_pair(30, 25, 4, seed=9)
        a = low_rank_svd_trans(items, users)
        b = low_rank_svd_trans(items, users)
        assert np.array_equal(a.item_map, b.item_map)
        assert np.array_equal(a.user_map, b.user_map)
        assert np.array_equal(a.spectrum, b.spectrum)

    def test_spectrum_sorted_nonincreasing(self):
        items, users = random_pair(40, 30, 6, seed=2)
        tr = low_rank_svd_trans(items, users)
        assert np.all(np.diff(tr.spectrum) <= 0)
        assert np.all(tr.spectrum > 0)

    def test_role_mismatch(self):
        items, users = random_pair(10, 10, 2)
        with pytest.raises(RoleMismatch):
            low_rank_svd_trans(users, items)

    def test_width_mismatch_names_both(self):
        items = EmbeddingMatrix.of_items(np.ones((4, 3)))
        users = EmbeddingMatrix.of_users(np.ones((4, 2)))
        with pytest.raises(DimensionMismatch, match="3.*2"):
            low_rank_svd_trans(items, users)

    def test_rank_deficient_strict(self):
        vecs = np.random.default_rng(0).standard_normal((20, 3))
        vecs[:, 2] = vecs[:, 0]  # duplicated column: rank 2 of 3
        items = EmbeddingMatrix.of_items(vecs)
        users = EmbeddingMatrix.of_users(np.random.default_rng(1).standard_normal((15, 3)))
        with pytest.raises(RankDeficient):
            low_rank_svd_trans(items, users)

    def test_rank_deficient_truncate(self):
        vecs = np.random.default_rng(0).standard_normal((20, 3))
        vecs[:, 2] = vecs[:, 0]
        items = EmbeddingMatrix.of_items(vecs)
        users = EmbeddingMatrix.of_users(np.random.default_rng(1).standard_normal((15, 3)))
        with pytest.warns(RankTruncationWarning):
            tr = low_rank_svd_trans(items, users, rank_policy="truncate")
        assert tr.rank == 2
        assert tr.item_map.shape == (3, 2)
        score = items.vectors @ users.vectors.T
        rebuilt = (items.vectors @ tr.item_map) @ (users.vectors @ tr.user_map).T
        assert rel_fro(rebuilt, score) < 1e-10

    def test_zero_matrix_rank_deficient_even_truncating(self):
        items = EmbeddingMatrix.of_items(np.zeros((5, 2)))
        users = EmbeddingMatrix.of_users(np.ones((5, 2)))
        with pytest.raises(RankDeficient):
            low_rank_svd_trans(items, users, rank_policy="truncate")

    def test_fewer_rows_than_width(self):
        # 3 rows of width 5 cap the rank at 3: an error under strict, a
        # rank-3 map under truncate, with the product still preserved.
        items = EmbeddingMatrix.of_items(np.random.default_rng(0).standard_normal((3, 5)))
        users = EmbeddingMatrix.of_users(np.random.default_rng(1).standard_normal((10, 5)))
        with pytest.raises(RankDeficient):
            low_rank_svd_trans(items, users)
        with pytest.warns(RankTruncationWarning):
            tr = low_rank_svd_trans(items, users, rank_policy="truncate")
        assert tr.rank == 3
        score = items.vectors @ users.vectors.T
        rebuilt = (items.vectors @ tr.item_map) @ (users.vectors @ tr.user_map).T
        assert rel_fro(rebuilt, score) < 1e-10

    def test_unknown_policy(self):
        items, users = random_pair(10, 10, 2)
        with pytest.raises(ValueError):
            low_rank_svd_trans(items, users, rank_policy="pad")

    @pytest.mark.parametrize("dim", [2, 8])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_spectral_equivalence_small_instances(self, dim, seed):
        gen = np.random.default_rng(seed)
        n, m = int(gen.integers(dim, 200)), int(gen.integers(dim, 200))
        items, users = random_pair(n, m, dim, seed=seed + 100)
        tr = low_rank_svd_trans(items, users)
        dense = np.linalg.svd(items.vectors @ users.vectors.T, compute_uv=False)[:dim]
        np.testing.assert_allclose(tr.spectrum, dense, rtol=1e-8)


class TestFactoredDecomposition:
    def test_factor_invariants(self):
        items, users = random_pair(50, 40, 8, seed=13)
        fd = factored_decomposition(items, users)
        e = np.eye(8)
        assert np.linalg.norm(fd.q_items.T @ fd.q_items - e) < 1e-12
        assert np.linalg.norm(fd.q_users.T @ fd.q_users - e) < 1e-12
        assert np.linalg.norm(fd.svd_left.T @ fd.svd_left - e) < 1e-12
        assert np.linalg.norm(fd.svd_right.T @ fd.svd_right - e) < 1e-12
        assert np.all(np.diff(fd.spectrum) <= 0)
        assert np.all(fd.spectrum >= 0)
        np.testing.assert_allclose(fd.q_items @ fd.r_items, items.vectors, atol=1e-12)
        np.testing.assert_allclose(fd.q_users @ fd.r_users, users.vectors, atol=1e-12)
        k = fd.r_items @ fd.r_users.T
        np.testing.assert_allclose(
            fd.svd_left @ np.diag(fd.spectrum) @ fd.svd_right.T, k, atol=1e-12
        )


class TestApplyTransform:
    def test_identity_is_noop(self):
        items, _ = random_pair(20, 5, 4, seed=7)
        out = apply_transform(items, np.eye(4))
        assert np.array_equal(out.vectors, items.vectors)
        assert np.array_equal(out.ids, items.ids)
        assert out.role is items.role

    def test_permutation_row(self):
        emb = EmbeddingMatrix.of_users([[1.0, 2.0]])
        out = apply_transform(emb, np.array([[0.0, 1.0], [1.0, 0.0]]))
        np.testing.assert_array_equal(out.vectors, [[2.0, 1.0]])

    def test_gram_diagonal_after_svd_map(self):
        items, users = random_pair(50, 40, 8, seed=3)
        tr = low_rank_svd_trans(items, users)
        out = apply_transform(items, tr.item_map)
        gram = out.vectors.T @ out.vectors
        assert np.max(np.abs(gram - np.diag(np.diag(gram)))) < 1e-8 * tr.spectrum[0]

    def test_dimension_mismatch(self):
        items, _ = random_pair(5, 5, 3)
        with pytest.raises(DimensionMismatch):
            apply_transform(items, np.eye(4))

    def test_float32_dtype_preserved(self):
        emb = EmbeddingMatrix.of_items(np.ones((3, 2), dtype=np.float32))
        out = apply_transform(emb, np.eye(2))
        assert out.vectors.dtype == np.float32

    def test_matches_per_row_application(self):
        # Row-partitioned evaluation must agree bitwise with whole-matrix
        # application, which is what makes parallel application safe.
        items, _ = random_pair(16, 4, 6, seed=15)
        m = np.random.default_rng(8).standard_normal((6, 6))
        whole = apply_transform(items, m)
        for i in range(items.n):
            single = EmbeddingMatrix(items.role, items.ids[i : i + 1], items.vectors[i : i + 1])
            row = apply_transform(single, m)
            assert np.array_equal(row.vectors[0], whole.vectors[i])
