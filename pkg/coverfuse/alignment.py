"""
Diagonally constrained Smith-Waterman over a binary cross-similarity matrix.

Steps are restricted to (1, 1), (2, 1) and (1, 2), so an alignment can absorb
a local tempo ratio of up to 2 but never runs horizontally or vertically.
The score approximates the length of the longest run of matched blocks.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .config import AlignmentParams
from .cross_similarity import BinaryCSM
from .errors import EmptyMask

logger = logging.getLogger(__name__)

# (di, dj) predecessor offsets in traceback preference order
STEPS = ((1, 1), (2, 1), (1, 2))


@dataclass(frozen=True, eq=False)
class AlignmentResult:
    score: float
    argmax_cell: Tuple[int, int]
    table: Optional[np.ndarray] = None
    path: Optional[List[Tuple[int, int]]] = None


def _as_mask(mask) -> np.ndarray:
    arr = mask.mask if isinstance(mask, BinaryCSM) else np.asarray(mask)
    if arr.ndim != 2 or arr.size == 0:
        raise EmptyMask(f"alignment needs a non-empty 2-D mask, got shape {arr.shape}")
    return arr.astype(bool)


def _next_row(hit: np.ndarray, prev1: np.ndarray, prev2: np.ndarray,
              params: AlignmentParams) -> np.ndarray:
    """
    One DP row. ``prev1``/``prev2`` are rows i-1 and i-2 with two leading
    zero columns, so index j reads column j-2.
    """
    d11 = prev1[1:-1]
    d21 = prev2[1:-1]
    d12 = prev1[:-2]
    best = np.maximum(np.maximum(d11, d21), d12)
    miss = np.maximum(
        np.maximum(d11 - params.mismatch_penalty, d21 - params.gap_penalty),
        np.maximum(d12 - params.gap_penalty, 0.0),
    )
    return np.where(hit, best + params.match, miss)


def smith_waterman(mask, params: AlignmentParams = AlignmentParams(),
                   full_table: bool = False) -> AlignmentResult:
    """
    Score a binary CSM (BinaryCSM or boolean array).

    Only three rows are kept unless ``full_table`` is set, in which case the
    whole M x N table and a traceback path from the best cell are returned.

    Raises:
        EmptyMask: the mask has no cells
    """
    hits = _as_mask(mask)
    m, n = hits.shape

    table = np.zeros((m, n)) if full_table else None
    prev2 = np.zeros(n + 2)
    prev1 = np.zeros(n + 2)
    best_score, best_cell = 0.0, (0, 0)
    for i in range(m):
        row = _next_row(hits[i], prev1, prev2, params)
        j = int(np.argmax(row))
        if row[j] > best_score:
            best_score, best_cell = float(row[j]), (i, j)
        if table is not None:
            table[i] = row
        prev2 = prev1
        prev1 = np.concatenate(([0.0, 0.0], row))

    path = traceback(table, hits, params, best_cell) if full_table else None
    return AlignmentResult(score=best_score, argmax_cell=best_cell, table=table, path=path)


def traceback(table: np.ndarray, hits: np.ndarray, params: AlignmentParams,
              start: Tuple[int, int]) -> List[Tuple[int, int]]:
    """Cells of the best local alignment ending at ``start``, first cell first."""
    def value(i, j):
        return table[i, j] if i >= 0 and j >= 0 else 0.0

    i, j = start
    if table[i, j] <= 0:
        return []
    path = [(i, j)]
    while True:
        preds = [(i - di, j - dj) for di, dj in STEPS]
        if hits[i, j]:
            candidates = [value(*p) for p in preds]
        else:
            penalties = (params.mismatch_penalty, params.gap_penalty, params.gap_penalty)
            candidates = [value(*p) - pen for p, pen in zip(preds, penalties)]
        k = int(np.argmax(candidates))  # first maximum follows STEPS order
        if candidates[k] <= 0:
            break
        i, j = preds[k]
        path.append((i, j))
    return path[::-1]
