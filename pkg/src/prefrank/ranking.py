"""Self-supervised dynamic ranking of a candidate pool.

The ranking walks the fused distance matrix greedily: at each step the
largest surviving pairwise distance is located and the endpoint that
ranks higher semantically is placed next, then removed from play.  When
no strictly positive distance survives, the remaining candidates are
appended in semantic-rank order.  ``brute_force_rank`` implements the
same contract by rescanning the full matrix against an exclusion set at
every step and exists purely as an independent check on
``dynamic_rank``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .apdf import ApdfMatrix
from .embed import cosine
from .errors import ValidationError


@dataclass(frozen=True)
class SemanticRank:
    """0-indexed semantic ranks: rank_of[c] == 0 means c is closest to the question."""

    rank_of: np.ndarray

    def __post_init__(self):
        rank_of = np.asarray(self.rank_of, dtype=np.int64)
        if sorted(rank_of.tolist()) != list(range(rank_of.size)):
            raise ValidationError("rank_of must be a permutation of 0..M-1")
        object.__setattr__(self, "rank_of", rank_of)

    def __len__(self) -> int:
        return self.rank_of.size

    def by_rank(self) -> list[int]:
        """Candidate indices from most to least semantically similar."""
        return list(np.argsort(self.rank_of, kind="stable"))


@dataclass(frozen=True)
class DynamicRanking:
    """Candidate indices in dynamic-ranking order, best first."""

    order: list[int]

    def __post_init__(self):
        if sorted(self.order) != list(range(len(self.order))):
            raise ValidationError("order must be a permutation of 0..M-1")
        object.__setattr__(self, "order", [int(i) for i in self.order])

    def __len__(self) -> int:
        return len(self.order)

    def top(self) -> int:
        return self.order[0]


def semantic_rank(question_emb: np.ndarray, candidate_embs: list[np.ndarray]) -> SemanticRank:
    """Rank candidates by descending cosine with the question; ties by index."""
    if not candidate_embs:
        raise ValidationError("candidate pool must be non-empty")
    sims = [cosine(question_emb, emb) for emb in candidate_embs]
    order = sorted(range(len(sims)), key=lambda i: (-sims[i], i))
    rank_of = np.empty(len(sims), dtype=np.int64)
    for position, idx in enumerate(order):
        rank_of[idx] = position
    return SemanticRank(rank_of)


def _check_inputs(multi: ApdfMatrix, arank: SemanticRank) -> None:
    if multi.size != len(arank):
        raise ValidationError(
            f"matrix is {multi.size}x{multi.size} but semantic rank covers {len(arank)} candidates"
        )


def dynamic_rank(multi: ApdfMatrix, arank: SemanticRank) -> DynamicRanking:
    """Greedy placement by maximal surviving distance, semantic rank deciding.

    Ties on the maximal entry go to the lexicographically smallest
    (row, col) with row < col; symmetry makes the orientation irrelevant.
    """
    _check_inputs(multi, arank)
    size = multi.size
    work = multi.values.copy()
    rank_of = arank.rank_of
    order: list[int] = []
    placed = np.zeros(size, dtype=bool)
    while len(order) < size:
        peak = work.max()
        if peak <= 0.0:
            break
        rows, cols = np.nonzero(work == peak)
        upper = [(r, c) for r, c in zip(rows.tolist(), cols.tolist()) if r < c]
        row, col = min(upper)
        winner = row if rank_of[row] < rank_of[col] else col
        order.append(winner)
        placed[winner] = True
        work[winner, :] = 0.0
        work[:, winner] = 0.0
    for candidate in arank.by_rank():
        if not placed[candidate]:
            order.append(candidate)
    return DynamicRanking(order)


def brute_force_rank(multi: ApdfMatrix, arank: SemanticRank) -> DynamicRanking:
    """Reference implementation: full rescan over unplaced pairs each step."""
    _check_inputs(multi, arank)
    size = multi.size
    values = multi.values
    rank_of = arank.rank_of
    order: list[int] = []
    while len(order) < size:
        best = None  # (value, row, col)
        for row in range(size):
            if row in order:
                continue
            for col in range(row + 1, size):
                if col in order:
                    continue
                value = values[row, col]
                if value <= 0.0:
                    continue
                if best is None or value > best[0] or (value == best[0] and (row, col) < best[1:]):
                    best = (value, row, col)
        if best is None:
            break
        _, row, col = best
        winner = row if rank_of[row] < rank_of[col] else col
        order.append(winner)
    for candidate in arank.by_rank():
        if candidate not in order:
            order.append(candidate)
    return DynamicRanking(order)
