"""Inverse-free low-rank SVD transformation of a factorized score space.

Item embeddings T (n x e) and user embeddings W (m x e) factor a score
matrix X ~= T W^T. This module computes small e x e maps for both sides
such that the transformed embeddings are the principal-direction
coordinates of X scaled by the square root of its singular values, while
every user-item dot product is preserved. Only the R factors of the thin
QR of T and W enter an e x e SVD, so the cost is linear in n and m at
fixed e and the score matrix is never materialized.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateId,
    NonFinite,
    RankDeficient,
    RankTruncationWarning,
    RoleMismatch,
)

# Singular values below this fraction of the largest are treated as zero.
SV_TRUNCATION_RTOL = 1e-12

RANK_POLICIES = ("strict", "truncate")


class Role(enum.Enum):
    ITEM = 0
    USER = 1


def _readonly(a: np.ndarray) -> np.ndarray:
    view = a.view()
    view.setflags(write=False)
    return view


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """Id-keyed dense embedding rows for one side of a factorization.

    Rows are float32 or float64, all finite; ids are unique uint64. Arrays
    are exposed as read-only views so instances are safe to share across
    threads.
    """

    role: Role
    ids: np.ndarray
    vectors: np.ndarray

    def __post_init__(self) -> None:
        ids = np.asarray(self.ids, dtype=np.uint64)
        vectors = np.asarray(self.vectors)
        if vectors.dtype not in (np.float32, np.float64):
            vectors = vectors.astype(np.float64)
        if vectors.ndim != 2:
            raise DimensionMismatch(f"vectors must be 2-D, got {vectors.ndim}-D")
        if ids.ndim != 1 or ids.shape[0] != vectors.shape[0]:
            raise DimensionMismatch(
                f"{ids.shape[0] if ids.ndim == 1 else ids.shape} ids for {vectors.shape[0]} rows"
            )
        if np.unique(ids).size != ids.size:
            raise DuplicateId(f"{self.role.name.lower()} ids are not unique")
        if vectors.size and not np.all(np.isfinite(vectors)):
            raise NonFinite(f"{self.role.name.lower()} vectors contain NaN or Inf")
        object.__setattr__(self, "ids", _readonly(ids))
        object.__setattr__(self, "vectors", _readonly(np.ascontiguousarray(vectors)))

    @classmethod
    def of_items(cls, vectors, ids=None) -> "EmbeddingMatrix":
        vectors = np.asarray(vectors)
        if ids is None:
            ids = np.arange(vectors.shape[0], dtype=np.uint64)
        return cls(Role.ITEM, ids, vectors)

    @classmethod
    def of_users(cls, vectors, ids=None) -> "EmbeddingMatrix":
        vectors = np.asarray(vectors)
        if ids is None:
            ids = np.arange(vectors.shape[0], dtype=np.uint64)
        return cls(Role.USER, ids, vectors)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def positions(self, ids) -> np.ndarray:
        """Positional row indices of the given ids, which must all be present."""
        ids = np.asarray(ids, dtype=np.uint64)
        order = np.argsort(self.ids, kind="stable")
        pos = np.searchsorted(self.ids, ids, sorter=order)
        if np.any(pos >= self.ids.size):
            raise KeyError("id not present in embedding matrix")
        found = order[pos]
        if not np.array_equal(self.ids[found], ids):
            raise KeyError("id not present in embedding matrix")
        return found

    def astype(self, dtype) -> "EmbeddingMatrix":
        return EmbeddingMatrix(self.role, self.ids, self.vectors.astype(dtype))


@dataclass(frozen=True, eq=False)
class FactoredDecomposition:
    """QR/SVD factors of the score space; transient diagnostic surface.

    q_items r_items = T and q_users r_users = W are thin QR factorizations;
    svd_left @ diag(spectrum) @ svd_right.T is the SVD of r_items r_users^T.
    """

    q_items: np.ndarray
    r_items: np.ndarray
    q_users: np.ndarray
    r_users: np.ndarray
    svd_left: np.ndarray
    spectrum: np.ndarray
    svd_right: np.ndarray


@dataclass(frozen=True, eq=False)
class SvdTransform:
    """Per-run maps into the score space's principal-direction coordinates.

    item_map and user_map are e x e' (e' = rank kept, e' == e under the
    strict policy). Transformed Grams are diagonal and both equal the
    retained spectrum; the score product is unchanged.
    """

    item_map: np.ndarray
    user_map: np.ndarray
    spectrum: np.ndarray
    run_id: str = ""

    def __post_init__(self) -> None:
        for name in ("item_map", "user_map", "spectrum"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, _readonly(arr))

    @property
    def input_dim(self) -> int:
        return self.item_map.shape[0]

    @property
    def rank(self) -> int:
        return self.spectrum.shape[0]


def qr_thin(matrix) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR factorization with a nonnegative diagonal on the R factor.

    Returns (q, r) with orthonormal columns in q and upper-triangular r such
    that q @ r reconstructs the input. The sign convention makes the result
    a deterministic function of the input.
    """
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise DimensionMismatch(f"expected a nonempty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFinite("matrix contains NaN or Inf")
    q, r = np.linalg.qr(a, mode="reduced")
    signs = np.sign(np.diag(r)).copy()
    signs[signs == 0] = 1.0
    return q * signs, signs[:, None] * r


def _r_factor(a: np.ndarray) -> np.ndarray:
    # R-only thin QR, same sign convention as qr_thin; Q is never materialized.
    r = np.linalg.qr(a, mode="r")
    signs = np.sign(np.diag(r)).copy()
    signs[signs == 0] = 1.0
    return signs[:, None] * r


def _canonical_svd(k: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # SVD with each left-vector column flipped so its largest-magnitude entry
    # is positive; right vectors flipped to match. Resolves sign ambiguity
    # deterministically for distinct singular values.
    u, s, vt = np.linalg.svd(k, full_matrices=False)
    peak = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[peak, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, s, signs[:, None] * vt


def factored_decomposition(items: EmbeddingMatrix, users: EmbeddingMatrix) -> FactoredDecomposition:
    """Materialize all intermediate factors. For diagnostics and tests only;
    production use goes through low_rank_svd_trans, which skips the Q factors."""
    _check_pair(items, users)
    q_t, r_t = qr_thin(items.vectors)
    q_w, r_w = qr_thin(users.vectors)
    u, s, vt = _canonical_svd(r_t @ r_w.T)
    return FactoredDecomposition(
        q_items=q_t,
        r_items=r_t,
        q_users=q_w,
        r_users=r_w,
        svd_left=u,
        spectrum=s,
        svd_right=vt.T,
    )


def _check_pair(items: EmbeddingMatrix, users: EmbeddingMatrix) -> None:
    if items.role is not Role.ITEM:
        raise RoleMismatch(f"expected an item matrix, got role {items.role.name}")
    if users.role is not Role.USER:
        raise RoleMismatch(f"expected a user matrix, got role {users.role.name}")
    if items.dim != users.dim:
        raise DimensionMismatch(
            f"item embedding width {items.dim} != user embedding width {users.dim}"
        )
    if items.n < 1 or users.n < 1:
        raise DimensionMismatch("embedding matrices must have at least one row")


def low_rank_svd_trans(
    items: EmbeddingMatrix,
    users: EmbeddingMatrix,
    rank_policy: str = "strict",
    run_id: str = "",
) -> SvdTransform:
    """Compute the score-space SVD transform from the factors alone.

    Args:
        items: n x e item embeddings.
        users: m x e user embeddings.
        rank_policy: "strict" raises RankDeficient when any singular value
            falls below SV_TRUNCATION_RTOL times the largest; "truncate"
            drops the affected columns instead, shrinking the output
            dimension.
        run_id: opaque tag carried on the result.

    Returns:
        SvdTransform whose maps diagonalize both transformed Grams and
        preserve the score product items @ users.T exactly up to rounding.

    Raises:
        RoleMismatch, DimensionMismatch, RankDeficient. Non-finite input is
        rejected at EmbeddingMatrix construction.
    """
    if rank_policy not in RANK_POLICIES:
        raise ValueError(f"rank_policy must be one of {RANK_POLICIES}, got {rank_policy!r}")
    _check_pair(items, users)
    # All decomposition work in float64: the inverse square root of the
    # spectrum amplifies rounding error at lower precision.
    t = items.vectors.astype(np.float64, copy=False)
    w = users.vectors.astype(np.float64, copy=False)
    r_t = _r_factor(t)
    r_w = _r_factor(w)
    u, s, vt = _canonical_svd(r_t @ r_w.T)

    dim = items.dim
    threshold = SV_TRUNCATION_RTOL * (s[0] if s.size else 0.0)
    kept = int(np.count_nonzero(s > threshold))
    if kept == 0:
        raise RankDeficient("score space has no singular value above the truncation threshold")
    if kept < dim:
        if rank_policy == "strict":
            raise RankDeficient(
                f"{dim - kept} of {dim} singular values fall below the truncation "
                f"threshold; rerun with rank_policy='truncate' to drop them"
            )
        warnings.warn(
            RankTruncationWarning(
                f"dropping {dim - kept} of {dim} singular values below threshold; "
                f"output dimension {kept}"
            ),
            stacklevel=2,
        )

    inv_sqrt = 1.0 / np.sqrt(s[:kept])
    item_map = (r_w.T @ vt[:kept].T) * inv_sqrt
    user_map = (r_t.T @ u[:, :kept]) * inv_sqrt
    return SvdTransform(item_map=item_map, user_map=user_map, spectrum=s[:kept], run_id=run_id)


def rowwise_matmul(rows: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Matrix product with a fixed ascending-k accumulation order.

    Every output element depends only on its own input row, so applying the
    map to any row partition reproduces the sequential per-row result bit
    for bit. A single BLAS matmul does not guarantee that: its reduction
    order varies with the operand shape.
    """
    rows = np.asarray(rows, dtype=np.float64)
    out = np.zeros((rows.shape[0], m.shape[1]), dtype=np.float64)
    for k in range(m.shape[0]):
        out += rows[:, k, None] * m[k, None, :]
    return out


def apply_transform(emb: EmbeddingMatrix, matrix) -> EmbeddingMatrix:
    """Right-multiply every embedding row by the given map.

    Ids, order, and role are preserved; output dtype matches the input
    (products are accumulated in float64 either way). Results are
    bit-identical under any row partitioning, see rowwise_matmul.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionMismatch(f"transform must be 2-D, got {m.ndim}-D")
    if emb.dim != m.shape[0]:
        raise DimensionMismatch(
            f"embedding width {emb.dim} != transform row count {m.shape[0]}"
        )
    out = rowwise_matmul(emb.vectors, m)
    if emb.vectors.dtype == np.float32:
        out = out.astype(np.float32)
    return EmbeddingMatrix(emb.role, emb.ids, out)
