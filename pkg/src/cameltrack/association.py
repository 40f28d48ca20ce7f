"""Cost matrices, Hungarian assignment and similarity gating."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNIT_NORM_TOL = 1e-6


class NonUnitNorm(ValueError):
    pass


class NonFiniteCost(ValueError):
    pass


@dataclass
class Assignment:
    matches: list = field(default_factory=list)  # (row, col, cost)
    unmatched_rows: list = field(default_factory=list)
    unmatched_cols: list = field(default_factory=list)

    @property
    def pairs(self):
        return [(r, c) for r, c, _ in self.matches]

    def total_cost(self):
        return float(sum(c for _, _, c in self.matches))


def build_cost_matrix(trk_emb, det_emb):
    """Pairwise Euclidean distances between unit-norm embeddings."""
    trk = np.asarray(trk_emb, dtype=np.float64)
    det = np.asarray(det_emb, dtype=np.float64)
    if trk.size == 0 or det.size == 0:
        return np.zeros((len(trk), len(det)))
    for name, e in (("tracklet", trk), ("detection", det)):
        if np.max(np.abs(np.linalg.norm(e, axis=1) - 1.0)) > UNIT_NORM_TOL:
            raise NonUnitNorm(f"{name} embeddings are not unit-norm")
    diff = trk[:, None, :] - det[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def _solve_square(cost):
    """O(n^3) shortest augmenting path Hungarian with row/column potentials.

    Returns ``col_of_row``. Columns are scanned in index order and the first
    minimum wins, so ties resolve toward the lowest indices.
    """
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_of_col = np.zeros(n + 1, dtype=np.int64)  # 1-based rows, 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        row_of_col[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            used_idx = np.flatnonzero(used)
            u[row_of_col[used_idx]] += delta
            v[used_idx] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if row_of_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=np.int64)
    col_of_row[row_of_col[1:] - 1] = np.arange(n)
    return col_of_row


def hungarian(cost) -> Assignment:
    """Minimum-cost matching of size min(M, N).

    Rectangular inputs are padded to square with a finite sentinel larger
    than any achievable real total; matches landing on padding are dropped.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if not np.all(np.isfinite(cost)):
        raise NonFiniteCost("cost matrix has non-finite entries")
    M, N = cost.shape
    if M == 0 or N == 0:
        return Assignment([], list(range(M)), list(range(N)))
    n = max(M, N)
    # shift so every real entry is >= 0; argmin matching is shift-invariant
    shifted = cost - cost.min()
    sentinel = 2.0 * max(float(shifted.max()), 1.0) * n
    square = np.full((n, n), sentinel)
    square[:M, :N] = shifted
    col_of_row = _solve_square(square)
    matches = []
    for r in range(M):
        c = int(col_of_row[r])
        if c < N:
            matches.append((r, c, float(cost[r, c])))
    matched_cols = {c for _, c, _ in matches}
    matched_rows = {r for r, _, _ in matches}
    return Assignment(
        matches,
        [r for r in range(M) if r not in matched_rows],
        [c for c in range(N) if c not in matched_cols],
    )


def cost_to_similarity(d):
    """Distance between unit vectors to cosine similarity."""
    return 1.0 - np.asarray(d, dtype=np.float64) ** 2 / 2.0


def gate_assignment(a: Assignment, threshold, similarity=None) -> Assignment:
    """Demote matched pairs whose similarity falls below ``threshold``.

    By default a match's cost is read as a distance between unit vectors and
    converted with ``1 - d^2/2``; heuristic scorers pass their own
    similarity matrix instead.
    """
    kept, rows, cols = [], list(a.unmatched_rows), list(a.unmatched_cols)
    for r, c, d in a.matches:
        s = cost_to_similarity(d) if similarity is None else similarity[r, c]
        if s < threshold:
            rows.append(r)
            cols.append(c)
        else:
            kept.append((r, c, d))
    return Assignment(kept, sorted(rows), sorted(cols))
