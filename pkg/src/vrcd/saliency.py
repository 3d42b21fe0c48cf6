"""Visual saliency extraction, pairwise overlap, and within-step percentile ranks.

Saliency extraction subtracts the uniform attention level 1/N from a
normalized token-to-image attention row and renormalizes the positive
residual.  A row with no positive residual (uniform or sub-uniform
everywhere) carries no visual signal and is flagged non-visual.

Pairwise similarity of two saliency distributions is the Bhattacharyya
coefficient, and overlaps are compared within a decoding step through their
percentile rank over all candidate-pair overlaps of that step.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

# Residual mass at or below this level is treated as exactly zero: an
# exactly-uniform row can leave O(eps) positive residue in float arithmetic,
# and normalizing that residue would manufacture saliency out of noise.
_RESIDUAL_FLOOR = 1e-12


class DimensionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SaliencyVector:
    """Normalized positive-residual attention for one candidate position.

    ``values`` sums to 1 when ``is_visual`` and is all zeros otherwise.
    """

    position: int
    values: np.ndarray
    is_visual: bool


def extract_saliency(attention, num_image_tokens: int, position: int = -1) -> SaliencyVector:
    """Subtract the uniform level 1/N, clip at zero, renormalize.

    Returns a non-visual zero vector when no image token rises above the
    uniform level.
    """
    a = np.asarray(attention, dtype=np.float64)
    if a.ndim != 1 or a.shape[0] != num_image_tokens:
        raise DimensionError(
            f"attention must have length {num_image_tokens}, got shape {a.shape}"
        )
    residual = np.maximum(a - 1.0 / num_image_tokens, 0.0)
    total = float(residual.sum())
    if total > _RESIDUAL_FLOOR:
        values = residual / total
        visual = True
    else:
        values = np.zeros(num_image_tokens)
        visual = False
    values.flags.writeable = False
    return SaliencyVector(position=position, values=values, is_visual=visual)


def bhattacharyya_overlap(q_i: SaliencyVector, q_j: SaliencyVector) -> float:
    """Bhattacharyya coefficient of two saliency distributions, in [0, 1]."""
    if not (q_i.is_visual and q_j.is_visual):
        raise ValueError("overlap is defined only between visual candidates")
    if q_i.values.shape != q_j.values.shape:
        raise DimensionError(
            f"saliency lengths differ: {q_i.values.shape} vs {q_j.values.shape}"
        )
    return float(np.sqrt(q_i.values * q_j.values).sum())


def pairwise_root_product(roots: np.ndarray) -> np.ndarray:
    # quadratic stage of overlap_matrix, split out so it can be timed alone
    return roots @ roots.T


def overlap_matrix(saliency_rows: np.ndarray) -> np.ndarray:
    """All pairwise Bhattacharyya coefficients of the given rows.

    ``saliency_rows`` is an (M, N) matrix of saliency distributions; rows of
    zeros produce zero overlaps.  The row prep is linear in M * N; the
    pairwise product is the stage that costs O(M^2 N).
    """
    return pairwise_root_product(np.sqrt(saliency_rows))


@dataclass(frozen=True)
class OverlapTable:
    """Pairwise overlaps (and, once assigned, percentile ranks) for a step.

    Keys are position pairs ``(i, j)`` with ``i < j``; the diagonal is never
    stored.  Both maps are symmetric by construction of :meth:`overlap` /
    :meth:`rank`.
    """

    pairs: dict[tuple[int, int], float]
    ranks: dict[tuple[int, int], float] = field(default_factory=dict)

    @staticmethod
    def _key(i: int, j: int) -> tuple[int, int]:
        if i == j:
            raise KeyError("self-pairs are not stored")
        return (i, j) if i < j else (j, i)

    def overlap(self, i: int, j: int) -> float:
        return self.pairs[self._key(i, j)]

    def rank(self, i: int, j: int) -> float:
        return self.ranks[self._key(i, j)]


def pairwise_overlaps(saliencies: list[SaliencyVector]) -> OverlapTable:
    """Overlap table over every unordered pair of the given visual candidates."""
    if not all(s.is_visual for s in saliencies):
        raise ValueError("pairwise_overlaps expects only visual candidates")
    if not saliencies:
        return OverlapTable(pairs={})
    rows = np.vstack([s.values for s in saliencies])
    gram = overlap_matrix(rows)
    pairs: dict[tuple[int, int], float] = {}
    for a in range(len(saliencies)):
        for b in range(a + 1, len(saliencies)):
            key = OverlapTable._key(saliencies[a].position, saliencies[b].position)
            pairs[key] = float(gram[a, b])
    return OverlapTable(pairs=pairs)


def pct_rank_all(overlaps: OverlapTable) -> OverlapTable:
    """Assign each pair the fraction of step overlaps at or below its own.

    Ties share the maximal count-of-<= rank, so equal overlaps always get
    equal ranks and the step maximum always ranks 1.0; a single pair ranks
    1.0.  An empty table stays empty.
    """
    values = sorted(overlaps.pairs.values())
    n = len(values)
    ranks = {key: bisect_right(values, o) / n for key, o in overlaps.pairs.items()}
    return OverlapTable(pairs=dict(overlaps.pairs), ranks=ranks)
