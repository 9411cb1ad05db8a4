"""
Cross-similarity between two songs' block sets.

MFCC and SSM blocks are compared with the Euclidean distance. HPCP blocks
are compared with the cosine distance after the second song is transposed
by the optimal transposition index (OTI) of the two mean HPCPs.
"""

import enum
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from .blocks import BlockSet, Metric
from .constants import HPCP_BINS, NEIGHBOR_COUNT_TOLERANCE
from .errors import ChannelMismatch, ConfigError, EmptyCSM, LengthMismatch

logger = logging.getLogger(__name__)


class Direction(str, enum.Enum):
    SMALLEST = "smallest"  # distances
    LARGEST = "largest"  # probabilities / similarities


@dataclass(frozen=True, eq=False)
class CrossSimilarityMatrix:
    """M x N block distances between song A (rows) and song B (columns)."""

    values: np.ndarray
    metric: Metric
    oti: Optional[int] = None
    zero_profile: bool = False  # OTI fell back to 0 on an all-zero mean HPCP

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True, eq=False)
class BinaryCSM:
    """Mutual nearest neighbor mask of a CSM."""

    mask: np.ndarray
    kappa: float

    @property
    def shape(self):
        return self.mask.shape

    @property
    def density(self) -> float:
        return float(self.mask.mean()) if self.mask.size else 0.0


def neighbor_count(kappa: float, n: int) -> int:
    """ceil(kappa * n), tolerant to float noise, clamped to [1, n]."""
    k = math.ceil(kappa * n - NEIGHBOR_COUNT_TOLERANCE)
    return int(min(max(k, 1), max(n, 1)))


def is_zero_profile(profile: np.ndarray) -> bool:
    return not np.any(np.asarray(profile) > 0)


def estimate_oti(mean_a: np.ndarray, mean_b: np.ndarray) -> int:
    """
    Circular shift s (0-11) maximizing mean_a . roll(mean_b, s).
    Ties go to the smallest shift. An all-zero profile gives 0.
    """
    mean_a = np.asarray(mean_a, dtype=np.float64)
    mean_b = np.asarray(mean_b, dtype=np.float64)
    if is_zero_profile(mean_a) or is_zero_profile(mean_b):
        logger.warning("Zero mean HPCP profile; using transposition index 0")
        return 0
    scores = np.array([np.dot(mean_a, np.roll(mean_b, s)) for s in range(HPCP_BINS)])
    # argmax returns the first (smallest) index among ties
    return int(np.argmax(scores))


def transpose_blocks(blocks: np.ndarray, shift: int) -> np.ndarray:
    """Roll every 12-bin chunk of every block by ``shift`` pitch classes."""
    if shift % HPCP_BINS == 0:
        return blocks
    n, length = blocks.shape
    chunks = blocks.reshape(n, length // HPCP_BINS, HPCP_BINS)
    return np.roll(chunks, shift, axis=2).reshape(n, length)


def cosine_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """1 - cos(a_i, b_j); any pair involving a zero-norm block gets 1."""
    norm_a = np.linalg.norm(a, axis=1)
    norm_b = np.linalg.norm(b, axis=1)
    unit_a = a / np.where(norm_a > 0, norm_a, 1.0)[:, None]
    unit_b = b / np.where(norm_b > 0, norm_b, 1.0)[:, None]
    dist = 1.0 - unit_a @ unit_b.T
    dist[norm_a == 0, :] = 1.0
    dist[:, norm_b == 0] = 1.0
    return np.clip(dist, 0.0, 2.0)


def _check_pair(blocks_a: BlockSet, blocks_b: BlockSet):
    if blocks_a.channel != blocks_b.channel or blocks_a.metric != blocks_b.metric:
        raise ChannelMismatch(f"cannot compare {blocks_a.channel.value} with {blocks_b.channel.value} blocks")
    if blocks_a.block_length != blocks_b.block_length:
        raise LengthMismatch(f"block lengths differ: {blocks_a.block_length} vs {blocks_b.block_length}")


def compute_csm(blocks_a: BlockSet, blocks_b: BlockSet) -> CrossSimilarityMatrix:
    """
    Block-to-block distances between two songs on the same channel.

    Raises:
        ChannelMismatch: the block sets come from different channels
        LengthMismatch: block vector lengths differ
    """
    _check_pair(blocks_a, blocks_b)

    if blocks_a.metric == Metric.EUCLIDEAN:
        values = cdist(blocks_a.blocks, blocks_b.blocks, metric="euclidean")
        return CrossSimilarityMatrix(values, Metric.EUCLIDEAN)

    zero = is_zero_profile(blocks_a.mean_hpcp) or is_zero_profile(blocks_b.mean_hpcp)
    oti = estimate_oti(blocks_a.mean_hpcp, blocks_b.mean_hpcp)
    rolled = transpose_blocks(blocks_b.blocks, oti)
    values = cosine_distances(blocks_a.blocks, rolled)
    return CrossSimilarityMatrix(values, Metric.COSINE_OTI, oti=oti, zero_profile=zero)


def self_distances(blocks: BlockSet) -> np.ndarray:
    """
    Block SSM of one song (its own channel metric, no transposition):
    symmetric with an exactly zero diagonal.
    """
    x = blocks.blocks
    if blocks.metric == Metric.EUCLIDEAN:
        dist = cdist(x, x, metric="euclidean")
    else:
        dist = cosine_distances(x, x)
    dist = 0.5 * (dist + dist.T)
    np.fill_diagonal(dist, 0.0)
    return dist


def _rank_mask(values: np.ndarray, k: int, axis: int, direction: Direction) -> np.ndarray:
    """Entries within the k best along ``axis``; ties with the k-th value included."""
    if direction == Direction.SMALLEST:
        kth = np.partition(values, k - 1, axis=axis).take(k - 1, axis=axis)
        return values <= np.expand_dims(kth, axis)
    n = values.shape[axis]
    kth = np.partition(values, n - k, axis=axis).take(n - k, axis=axis)
    return values >= np.expand_dims(kth, axis)


def binarize_mutual_knn(csm, kappa: float, direction: Direction = Direction.SMALLEST) -> BinaryCSM:
    """
    Keep entry (i, j) iff it ranks within the ceil(kappa*N) best of row i and
    the ceil(kappa*M) best of column j. ``csm`` is a CrossSimilarityMatrix or
    a plain M x N array.

    Raises:
        EmptyCSM: the matrix has no rows or no columns
        ConfigError: kappa outside (0, 1)
    """
    values = csm.values if isinstance(csm, CrossSimilarityMatrix) else np.asarray(csm, dtype=np.float64)
    if values.ndim != 2 or values.size == 0:
        raise EmptyCSM(f"cannot binarize a CSM of shape {values.shape}")
    if not 0.0 < kappa < 1.0:
        raise ConfigError(f"kappa must lie in (0, 1), got {kappa}")

    m, n = values.shape
    rows = _rank_mask(values, neighbor_count(kappa, n), axis=1, direction=direction)
    cols = _rank_mask(values, neighbor_count(kappa, m), axis=0, direction=direction)
    return BinaryCSM(mask=rows & cols, kappa=kappa)
