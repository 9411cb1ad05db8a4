"""
Beat-synchronous block features for coverfuse.

A block spans B consecutive beat intervals and is stacked into one vector.
All three channels of a song are cut at the same beat intervals, so block i
of the MFCC, SSM and HPCP sets always describes the same stretch of audio.
"""

import enum
import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy.interpolate import interp1d
from scipy.ndimage import map_coordinates
from scipy.spatial.distance import pdist, squareform

from .beats import BeatTrack
from .config import BlockConfig
from .constants import HPCP_BINS, ZNORM_MIN_STD
from .errors import DegenerateBlock, TooFewBeats
from .features import FeatureKind, FeatureMatrix

logger = logging.getLogger(__name__)


class Channel(str, enum.Enum):
    MFCC = "mfcc"
    MFCC_SSM = "ssm"
    HPCP = "hpcp"


class Metric(str, enum.Enum):
    EUCLIDEAN = "euclidean"
    COSINE_OTI = "cosine_oti"


@dataclass(frozen=True, eq=False)
class BlockSet:
    """
    Ordered block vectors of one song for one channel.

    ``blocks`` is an (n_blocks, length) array; ``mean_hpcp`` is only set for
    the HPCP channel and feeds the transposition estimate.
    """

    blocks: np.ndarray
    channel: Channel
    metric: Metric
    beat_index_of_block: np.ndarray
    mean_hpcp: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.blocks.ndim != 2:
            raise ValueError("blocks must be an (n_blocks, length) array")
        if self.beat_index_of_block.shape != (self.blocks.shape[0],):
            raise ValueError("one start beat per block is required")

    def __len__(self) -> int:
        return self.blocks.shape[0]

    @property
    def block_length(self) -> int:
        return self.blocks.shape[1]


def block_starts(n_onsets: int, cfg: BlockConfig) -> np.ndarray:
    """Start beat of every block: max(0, intervals - B + 1) blocks at stride 1."""
    n_intervals = max(0, n_onsets - 1)
    return np.arange(0, max(0, n_intervals - cfg.B + 1), cfg.stride, dtype=np.int64)


def _require_beats(beats: BeatTrack, cfg: BlockConfig):
    if beats.onsets.size < cfg.B + 1:
        raise TooFewBeats(
            f"{beats.onsets.size} onsets at bias {beats.tempo_bias} bpm; "
            f"a {cfg.B}-beat block needs {cfg.B + 1}"
        )


def znormalize_block(block: np.ndarray) -> np.ndarray:
    """
    Z-normalize every column over the block's frames (population std).
    Columns whose std is below 1e-12 become all zeros.

    Raises:
        DegenerateBlock: fewer than 2 frames
    """
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 2 or block.shape[0] < 2:
        raise DegenerateBlock(f"Z-normalization needs >= 2 frames, got shape {block.shape}")
    centered = block - block.mean(axis=0)
    std = block.std(axis=0)
    flat = std < ZNORM_MIN_STD
    out = centered / np.where(flat, 1.0, std)
    out[:, flat] = 0.0
    return out


# ============================================================================
# MFCC / SSM blocks
# ============================================================================

def _frame_span(starts: np.ndarray, t0: float, t1: float) -> tuple:
    """Frames whose start time lies in [t0, t1), widened to at least 2 frames."""
    n = starts.size
    lo = int(np.searchsorted(starts, t0, side="left"))
    hi = int(np.searchsorted(starts, t1, side="left"))
    hi = min(hi, n)
    lo = min(lo, n - 2)
    if hi - lo < 2:
        hi = lo + 2
    return lo, hi


def mfcc_block_matrices(mfcc: FeatureMatrix, beats: BeatTrack, cfg: BlockConfig) -> List[np.ndarray]:
    """
    Slice the song's MFCC frames per block, resample each slice linearly to
    ``frames_per_block`` rows and Z-normalize it.

    Raises:
        TooFewBeats: fewer than B + 1 onsets
        DegenerateBlock: the song has fewer than 2 MFCC frames
    """
    _require_beats(beats, cfg)
    if mfcc.n_frames < 2:
        raise DegenerateBlock(f"song has {mfcc.n_frames} MFCC frame(s)")

    starts = mfcc.frame_starts()
    matrices = []
    for b in block_starts(beats.onsets.size, cfg):
        lo, hi = _frame_span(starts, beats.onsets[b], beats.onsets[b + cfg.B])
        segment = mfcc.frames[lo:hi]
        positions = np.linspace(0.0, segment.shape[0] - 1.0, cfg.frames_per_block)
        resampled = interp1d(np.arange(segment.shape[0]), segment, axis=0)(positions)
        matrices.append(znormalize_block(resampled))
    return matrices


def build_mfcc_blocks(mfcc: FeatureMatrix, beats: BeatTrack, cfg: BlockConfig) -> BlockSet:
    """
    Beat-synchronous Z-normalized MFCC blocks, flattened row-major to
    vectors of length frames_per_block * n_mfcc.
    """
    matrices = mfcc_block_matrices(mfcc, beats, cfg)
    return blockset_from_matrices(matrices, beats, cfg)


def blockset_from_matrices(matrices: List[np.ndarray], beats: BeatTrack, cfg: BlockConfig) -> BlockSet:
    """Flatten precomputed block matrices into the MFCC BlockSet."""
    starts = block_starts(beats.onsets.size, cfg)
    width = matrices[0].size if matrices else cfg.frames_per_block
    blocks = np.array([m.ravel() for m in matrices]).reshape(len(matrices), width)
    return BlockSet(blocks, Channel.MFCC, Metric.EUCLIDEAN, starts)


def _resize_image(image: np.ndarray, d: int) -> np.ndarray:
    """Bilinear resize of a square image to d x d (corner samples aligned)."""
    coords = np.linspace(0.0, image.shape[0] - 1.0, d)
    rows, cols = np.meshgrid(coords, coords, indexing="ij")
    return map_coordinates(image, [rows, cols], order=1, mode="nearest")


def block_ssm(block: np.ndarray) -> np.ndarray:
    """Euclidean self-similarity (distance) matrix between all frames of a block."""
    return squareform(pdist(block, metric="euclidean"))


def build_ssm_blocks(mfcc_blocks: List[np.ndarray], beat_index_of_block: np.ndarray,
                     cfg: BlockConfig) -> BlockSet:
    """
    SSM blocks: per Z-normalized MFCC block, the frame distance matrix resized
    to d x d and flattened.

    Raises:
        DegenerateBlock: a block has fewer than 2 frames
    """
    images = []
    for block in mfcc_blocks:
        if block.shape[0] < 2:
            raise DegenerateBlock(f"SSM needs >= 2 frames, got {block.shape[0]}")
        images.append(_resize_image(block_ssm(block), cfg.d).ravel())
    blocks = np.array(images).reshape(len(images), cfg.d * cfg.d)
    return BlockSet(blocks, Channel.MFCC_SSM, Metric.EUCLIDEAN,
                    np.asarray(beat_index_of_block, dtype=np.int64))


# ============================================================================
# HPCP blocks
# ============================================================================

def half_beat_profiles(hpcp: FeatureMatrix, onsets: np.ndarray) -> np.ndarray:
    """
    Average HPCP over each half of each beat interval: (2 * n_intervals, 12).
    An empty half takes the frame whose center is nearest the half's center.
    """
    centers = hpcp.frame_centers()
    mids = 0.5 * (onsets[:-1] + onsets[1:])
    edges = np.empty(2 * mids.size + 1)
    edges[0::2] = onsets
    edges[1::2] = mids

    csum = np.vstack([np.zeros((1, HPCP_BINS)), np.cumsum(hpcp.frames, axis=0)])
    idx = np.searchsorted(centers, edges, side="left")
    lo, hi = idx[:-1], idx[1:]
    counts = hi - lo
    sums = csum[hi] - csum[lo]
    out = sums / np.maximum(counts, 1)[:, None]

    empty = np.flatnonzero(counts == 0)
    if empty.size:
        half_centers = 0.5 * (edges[:-1] + edges[1:])[empty]
        nearest = np.abs(centers[None, :] - half_centers[:, None]).argmin(axis=1)
        out[empty] = hpcp.frames[nearest]
    return out


def build_hpcp_blocks(hpcp: FeatureMatrix, beats: BeatTrack, cfg: BlockConfig) -> BlockSet:
    """
    Stacked delay embedding of half-beat HPCP averages: 2B twelve-vectors per
    block (length 24B), plus the song's mean HPCP for transposition.

    Raises:
        TooFewBeats: fewer than B + 1 onsets
    """
    _require_beats(beats, cfg)
    if hpcp.kind != FeatureKind.HPCP or hpcp.n_frames == 0:
        raise DegenerateBlock("HPCP blocks need a non-empty HPCP feature matrix")

    halves = half_beat_profiles(hpcp, beats.onsets)
    starts = block_starts(beats.onsets.size, cfg)
    width = 2 * cfg.B
    blocks = np.array([halves[2 * s:2 * s + width].ravel() for s in starts])
    blocks = blocks.reshape(starts.size, width * HPCP_BINS)
    return BlockSet(
        blocks=blocks,
        channel=Channel.HPCP,
        metric=Metric.COSINE_OTI,
        beat_index_of_block=starts,
        mean_hpcp=hpcp.frames.mean(axis=0),
    )
