"""Composition of the score-space SVD transform with Procrustes alignment.

A reference run seeds the standard space: its SVD-transformed item
embeddings become the anchor. Every later run is SVD-transformed the same
way, its items are aligned onto the anchor with an orthogonal map, and the
two steps collapse into a single small matrix per side. Each stabilized
run can serve as the anchor for the next one (reference chaining), which
avoids treating the seed run as a special case forever.

Alignment is computed from items only; user embeddings ride along through
their own composed map. Because the alignment is orthogonal, stabilization
never changes any user-item score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InsufficientOverlap
from .lowrank import EmbeddingMatrix, SvdTransform, apply_transform, low_rank_svd_trans
from .procrustes import AlignmentMap, ortho_procrustes


def default_min_overlap(dim: int) -> int:
    """Smallest id overlap accepted for alignment: max(dim, 10).

    Fewer than dim well-spread rows underdetermine the orthogonal map."""
    return max(dim, 10)


@dataclass(frozen=True, eq=False)
class ReferenceSpace:
    """Anchor for aligning future runs: a run's stabilized item embeddings."""

    run_id: str
    anchor_items: EmbeddingMatrix

    def __post_init__(self) -> None:
        if self.anchor_items.n == 0:
            raise DimensionMismatch("reference anchor must be non-empty")

    @property
    def dimension(self) -> int:
        return self.anchor_items.dim


@dataclass(frozen=True, eq=False)
class StabilizedRun:
    """One run's embeddings mapped into the standard space.

    item_map and user_map are the composed per-side transforms (SVD step
    times alignment); stabilized_items/users are exactly the raw inputs
    pushed through apply_transform with those maps.
    """

    run_id: str
    reference_run_id: str
    item_map: np.ndarray
    user_map: np.ndarray
    stabilized_items: EmbeddingMatrix
    stabilized_users: EmbeddingMatrix
    spectrum: np.ndarray
    alignment: AlignmentMap | None = None

    @property
    def effective_rank(self) -> int:
        return self.spectrum.shape[0]

    @property
    def input_dim(self) -> int:
        return self.item_map.shape[0]

    @property
    def output_dim(self) -> int:
        return self.item_map.shape[1]


def _build_run(
    run_id: str,
    reference_run_id: str,
    items: EmbeddingMatrix,
    users: EmbeddingMatrix,
    transform: SvdTransform,
    alignment: AlignmentMap | None,
) -> tuple[StabilizedRun, ReferenceSpace]:
    if alignment is None:
        item_map = transform.item_map
        user_map = transform.user_map
    else:
        item_map = transform.item_map @ alignment.matrix
        user_map = transform.user_map @ alignment.matrix
    stabilized_items = apply_transform(items, item_map)
    stabilized_users = apply_transform(users, user_map)
    run = StabilizedRun(
        run_id=run_id,
        reference_run_id=reference_run_id,
        item_map=item_map,
        user_map=user_map,
        stabilized_items=stabilized_items,
        stabilized_users=stabilized_users,
        spectrum=transform.spectrum,
        alignment=alignment,
    )
    return run, ReferenceSpace(run_id=run_id, anchor_items=stabilized_items)


def init_reference(
    items: EmbeddingMatrix,
    users: EmbeddingMatrix,
    run_id: str,
    rank_policy: str = "strict",
) -> tuple[StabilizedRun, ReferenceSpace]:
    """Seed the standard space from one run.

    The run's own SVD space is the standard space, so no alignment is
    applied and the composed maps equal the SVD maps. The returned
    ReferenceSpace carries the stabilized items as the anchor for
    subsequent runs.
    """
    transform = low_rank_svd_trans(items, users, rank_policy=rank_policy, run_id=run_id)
    return _build_run(run_id, run_id, items, users, transform, alignment=None)


def stabilize_run(
    items: EmbeddingMatrix,
    users: EmbeddingMatrix,
    ref: ReferenceSpace,
    run_id: str,
    rank_policy: str = "strict",
    min_overlap: int | None = None,
) -> tuple[StabilizedRun, ReferenceSpace]:
    """Map one run's embeddings into the reference's standard space.

    The run is SVD-transformed, then the rows whose item ids also appear in
    the anchor are Procrustes-aligned onto the matching anchor rows. Items
    absent from the reference are transformed but never influence the
    alignment. The returned ReferenceSpace holds this run's stabilized
    items, ready to serve as the next (rolling) anchor.

    Raises InsufficientOverlap when fewer than min_overlap ids are shared
    (default max(dim, 10)), DimensionMismatch when the run's width differs
    from the reference's.
    """
    if items.dim != ref.dimension:
        raise DimensionMismatch(
            f"run width {items.dim} != reference dimension {ref.dimension}"
        )
    if min_overlap is None:
        min_overlap = default_min_overlap(items.dim)
    transform = low_rank_svd_trans(items, users, rank_policy=rank_policy, run_id=run_id)

    shared = np.intersect1d(items.ids, ref.anchor_items.ids)
    if shared.size < min_overlap:
        raise InsufficientOverlap(
            f"{shared.size} shared item ids with reference {ref.run_id!r}, "
            f"need at least {min_overlap}"
        )
    svd_items = items.vectors.astype(np.float64, copy=False) @ transform.item_map
    source = svd_items[items.positions(shared)]
    target = ref.anchor_items.vectors.astype(np.float64, copy=False)[
        ref.anchor_items.positions(shared)
    ]
    alignment = ortho_procrustes(source, target, source_run=run_id, target_run=ref.run_id)
    return _build_run(run_id, ref.run_id, items, users, transform, alignment)


def score_product_error(
    raw_items: EmbeddingMatrix,
    raw_users: EmbeddingMatrix,
    stabilized_items: EmbeddingMatrix,
    stabilized_users: EmbeddingMatrix,
    max_rows: int | None = None,
    seed: int = 0,
) -> float:
    """Relative Frobenius gap between raw and stabilized score products.

    With max_rows set, the comparison runs on a deterministic random block
    of rows from each side, which keeps the check affordable at production
    scale. Returns ||stab - raw||_F / ||raw||_F over the block.
    """
    it = slice(None)
    us = slice(None)
    if max_rows is not None:
        rng = np.random.default_rng(seed)
        if raw_items.n > max_rows:
            it = rng.choice(raw_items.n, size=max_rows, replace=False)
        if raw_users.n > max_rows:
            us = rng.choice(raw_users.n, size=max_rows, replace=False)
    t = raw_items.vectors.astype(np.float64, copy=False)[it]
    w = raw_users.vectors.astype(np.float64, copy=False)[us]
    t_hat = stabilized_items.vectors.astype(np.float64, copy=False)[it]
    w_hat = stabilized_users.vectors.astype(np.float64, copy=False)[us]
    raw = t @ w.T
    gap = np.linalg.norm(t_hat @ w_hat.T - raw)
    denom = np.linalg.norm(raw)
    return float(gap / denom) if denom > 0 else float(gap)


@dataclass(frozen=True)
class ChainEquivalenceReport:
    """Frobenius gaps between stabilizing a run directly against the seed
    reference versus through a chained intermediate reference."""

    item_gap: float
    user_gap: float
    item_gap_rel: float
    user_gap_rel: float


def chain_equivalence_check(
    run0: tuple[EmbeddingMatrix, EmbeddingMatrix],
    run1: tuple[EmbeddingMatrix, EmbeddingMatrix],
    run2: tuple[EmbeddingMatrix, EmbeddingMatrix],
    rank_policy: str = "strict",
    min_overlap: int | None = None,
) -> ChainEquivalenceReport:
    """Stabilize run2 twice, once against run0's reference and once against
    the reference chained through run1, and report the output gaps.

    All three runs must share the same id vocabulary. The gaps vanish only
    when successive runs are exact orthogonal transforms of one another;
    for noisy runs this measures, but does not bound, the chaining error.
    """
    for a, b in zip(run0, run1):
        if not np.array_equal(np.sort(a.ids), np.sort(b.ids)):
            raise DimensionMismatch("chain equivalence requires a fixed id vocabulary")
    for a, b in zip(run0, run2):
        if not np.array_equal(np.sort(a.ids), np.sort(b.ids)):
            raise DimensionMismatch("chain equivalence requires a fixed id vocabulary")

    _, ref0 = init_reference(*run0, run_id="chain-seed", rank_policy=rank_policy)
    direct, _ = stabilize_run(
        *run2, ref0, run_id="chain-direct", rank_policy=rank_policy, min_overlap=min_overlap
    )
    _, ref1 = stabilize_run(
        *run1, ref0, run_id="chain-intermediate", rank_policy=rank_policy, min_overlap=min_overlap
    )
    chained, _ = stabilize_run(
        *run2, ref1, run_id="chain-chained", rank_policy=rank_policy, min_overlap=min_overlap
    )

    item_gap = float(
        np.linalg.norm(
            direct.stabilized_items.vectors.astype(np.float64)
            - chained.stabilized_items.vectors.astype(np.float64)
        )
    )
    user_gap = float(
        np.linalg.norm(
            direct.stabilized_users.vectors.astype(np.float64)
            - chained.stabilized_users.vectors.astype(np.float64)
        )
    )
    item_norm = float(np.linalg.norm(direct.stabilized_items.vectors))
    user_norm = float(np.linalg.norm(direct.stabilized_users.vectors))
    return ChainEquivalenceReport(
        item_gap=item_gap,
        user_gap=user_gap,
        item_gap_rel=item_gap / item_norm if item_norm > 0 else item_gap,
        user_gap_rel=user_gap / user_norm if user_norm > 0 else user_gap,
    )
