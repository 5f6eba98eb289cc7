"""Orthogonal Procrustes alignment between embedding coordinate systems.

Finds the orthogonal map that, applied on the right of one set of row
vectors, brings it as close as possible (in Frobenius norm) to a second
set. Because the map is orthogonal it cannot change any dot product
between rows that are transformed consistently on both sides.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateAlignmentWarning, DimensionMismatch, NonFinite

# Cross-covariance singular values below this fraction of the largest mean
# the optimal alignment is not unique.
DEGENERATE_SV_RTOL = 1e-12

ORTHONORMALITY_RTOL = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    view = a.view()
    view.setflags(write=False)
    return view


@dataclass(frozen=True, eq=False)
class AlignmentMap:
    """Right-multiplication map from a source coordinate system into a target one.

    matrix has orthonormal rows: square (p == q) in normal operation, p < q
    only when a rank-truncated source is injected into a larger target
    space. Reflections (determinant -1) are permitted; sign-flip ambiguity
    between SVD spaces requires them.
    """

    matrix: np.ndarray
    source_run: str = ""
    target_run: str = ""

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] > m.shape[1]:
            raise DimensionMismatch(f"alignment matrix shape {m.shape} is not p x q with p <= q")
        p, q = m.shape
        gram_gap = np.linalg.norm(m @ m.T - np.eye(p))
        if gram_gap > ORTHONORMALITY_RTOL * q:
            raise ValueError(f"alignment rows are not orthonormal: residual {gram_gap:.3e}")
        if p == q:
            det = float(np.linalg.det(m))
            if abs(abs(det) - 1.0) > 1e-10:
                raise ValueError(f"|det| = {abs(det):.12f} is not 1")
            object.__setattr__(self, "_det", det)
        else:
            object.__setattr__(self, "_det", None)
        object.__setattr__(self, "matrix", _readonly(m))

    @property
    def is_reflection(self) -> bool:
        det = getattr(self, "_det")
        if det is None:
            raise ValueError("determinant is undefined for a non-square alignment")
        return det < 0

    @property
    def source_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def target_dim(self) -> int:
        return self.matrix.shape[1]


def ortho_procrustes(a, b, source_run: str = "", target_run: str = "") -> AlignmentMap:
    """Solve min over orthonormal-row maps r of ||a @ r - b||_F.

    a and b must have the same number of rows (paired observations) and,
    in normal operation, the same number of columns. The solution is the
    transposed polar factor of b.T @ a; it is unique whenever that
    cross-covariance has full rank, and a DegenerateAlignmentWarning is
    emitted when it does not (any completion is equally optimal).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionMismatch("alignment inputs must be 2-D")
    if a.shape[0] != b.shape[0]:
        raise DimensionMismatch(f"row counts differ: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < 1:
        raise DimensionMismatch("alignment needs at least one row")
    if a.shape[1] > b.shape[1]:
        raise DimensionMismatch(
            f"source width {a.shape[1]} exceeds target width {b.shape[1]}"
        )
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NonFinite("alignment inputs contain NaN or Inf")

    cross = b.T @ a
    u, s, vt = np.linalg.svd(cross, full_matrices=False)
    if s.size == 0 or s[-1] <= DEGENERATE_SV_RTOL * s[0]:
        warnings.warn(
            DegenerateAlignmentWarning(
                "cross-covariance is rank deficient; alignment is optimal but not unique"
            ),
            stacklevel=2,
        )
    r = (u @ vt).T
    return AlignmentMap(matrix=r, source_run=source_run, target_run=target_run)
