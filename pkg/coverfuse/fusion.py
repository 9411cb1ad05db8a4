"""
Similarity network fusion for coverfuse.

Every channel becomes an autotuned Gaussian kernel, then a full transition
matrix P (half the mass kept on the diagonal) and a kNN-truncated transition
matrix S. Cross-diffusion repeatedly pushes each channel's P through its own
S while averaging in the other channels, and the fused result is the mean of
the diffused matrices.

Two uses:
  - early fusion: per song pair, each channel's two block SSMs and its CSM
    form a "parent" kernel over the M + N blocks of both songs; the fused
    upper-right M x N block is a cross-probability matrix.
  - late fusion: per corpus, each channel's N x N song score matrix is turned
    into a kernel and the channels are fused into one similarity matrix.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from .constants import LATE_FUSION_EPSILON, SIGMA_FLOOR
from .cross_similarity import BinaryCSM, Direction, binarize_mutual_knn, neighbor_count
from .errors import ConfigError, DimensionMismatch, NegativeDistance, NonSquare

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Kernel:
    W: np.ndarray
    sigma: np.ndarray
    knn_k: int

    @property
    def n(self) -> int:
        return self.W.shape[0]


@dataclass(frozen=True, eq=False)
class TransitionPair:
    P: np.ndarray  # dense, regularized diagonal
    S: sparse.csr_matrix  # kNN-truncated
    isolated_rows: np.ndarray  # rows with no off-diagonal affinity

    @property
    def any_isolated(self) -> bool:
        return bool(self.isolated_rows.any())


@dataclass(frozen=True, eq=False)
class ParentKernel:
    """Kernel over the blocks of song A followed by the blocks of song B."""

    W_A: np.ndarray
    W_B: np.ndarray
    W_C: np.ndarray
    sigma_A: np.ndarray
    sigma_B: np.ndarray
    sigma_C: np.ndarray
    knn_k: int

    @property
    def M(self) -> int:
        return self.W_A.shape[0]

    @property
    def N(self) -> int:
        return self.W_B.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return np.block([[self.W_A, self.W_C], [self.W_C.T, self.W_B]])

    def as_kernel(self) -> Kernel:
        sigma = np.block([[self.sigma_A, self.sigma_C], [self.sigma_C.T, self.sigma_B]])
        return Kernel(W=self.matrix, sigma=sigma, knn_k=self.knn_k)


@dataclass(frozen=True, eq=False)
class FusedProbability:
    P_hat: np.ndarray
    iterations: int
    trajectory: Optional[List[np.ndarray]] = None
    isolated_rows: int = 0


@dataclass(frozen=True, eq=False)
class EarlyFusion:
    """Result of fusing one song pair across channels."""

    cross_probability: np.ndarray  # M x N block of the fused parent matrix
    binary: BinaryCSM
    fused: FusedProbability
    parents: List[ParentKernel] = field(default_factory=list)


# ============================================================================
# Kernels
# ============================================================================

def _check_distances(dist: np.ndarray) -> np.ndarray:
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise NonSquare(f"distance matrix must be square, got shape {dist.shape}")
    if not np.all(np.isfinite(dist)):
        raise NegativeDistance("distance matrix has non-finite entries")
    if np.any(dist < 0):
        raise NegativeDistance(f"distance matrix has negative entries (min {dist.min():g})")
    return dist


def _gaussian(dist: np.ndarray, sigma: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    sigma = np.maximum(sigma, SIGMA_FLOOR)
    return np.exp(-dist ** 2 / (2.0 * sigma ** 2)), sigma


def _mean_smallest(values: np.ndarray, k: int, axis: int) -> np.ndarray:
    if k <= 0 or values.shape[axis] == 0:
        return np.zeros(values.shape[1 - axis])
    part = np.partition(values, k - 1, axis=axis)
    return np.take(part, np.arange(k), axis=axis).mean(axis=axis)


def mean_knn_distance(dist: np.ndarray, knn_k: int) -> np.ndarray:
    """Mean distance from each point to its k nearest other points."""
    n = dist.shape[0]
    k = min(knn_k, n - 1)
    off = dist.copy()
    np.fill_diagonal(off, np.inf)
    return _mean_smallest(off, k, axis=1)


def autotuned_kernel(dist: np.ndarray, knn_k: int) -> Kernel:
    """
    W(i, j) = exp(-d(i, j)^2 / (2 sigma_ij^2)) with
    sigma_ij = (meanKNN(i) + meanKNN(j) + d(i, j)) / 3, floored at 1e-12.

    Raises:
        NonSquare: ``dist`` is not square
        NegativeDistance: ``dist`` has negative or non-finite entries
    """
    dist = _check_distances(dist)
    knn = mean_knn_distance(dist, knn_k)
    W, sigma = _gaussian(dist, (knn[:, None] + knn[None, :] + dist) / 3.0)
    return Kernel(W=W, sigma=sigma, knn_k=knn_k)


def cross_kernel(csm: np.ndarray, kappa: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Kernel of an M x N cross-distance block. Neighborhood scales come from the
    CSM alone: ceil(kappa*N) smallest per row and ceil(kappa*M) per column.
    """
    csm = np.asarray(csm, dtype=np.float64)
    if np.any(csm < 0) or not np.all(np.isfinite(csm)):
        raise NegativeDistance("cross-distance block has negative or non-finite entries")
    m, n = csm.shape
    row_knn = _mean_smallest(csm, neighbor_count(kappa, n), axis=1)
    col_knn = _mean_smallest(csm, neighbor_count(kappa, m), axis=0)
    return _gaussian(csm, (row_knn[:, None] + col_knn[None, :] + csm) / 3.0)


# ============================================================================
# Transition matrices
# ============================================================================

def _regularize(P: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Off-diagonal mass scaled to 1/2 per row, diagonal set to 1/2.
    Rows without off-diagonal mass become a self-loop of 1."""
    off = np.array(P, dtype=np.float64)
    np.fill_diagonal(off, 0.0)
    row_sum = off.sum(axis=1)
    isolated = row_sum <= 0
    out = off / (2.0 * np.where(isolated, 1.0, row_sum))[:, None]
    np.fill_diagonal(out, np.where(isolated, 1.0, 0.5))
    return out, isolated


def _weights(kernel) -> np.ndarray:
    return kernel.W if isinstance(kernel, Kernel) else np.asarray(kernel, dtype=np.float64)


def full_transition(kernel) -> Tuple[np.ndarray, np.ndarray]:
    """
    Full transition matrix: P(i, j) = W(i, j) / (2 sum_{k != i} W(i, k)),
    P(i, i) = 1/2. Returns (P, isolated_rows).
    """
    P, isolated = _regularize(_weights(kernel))
    if isolated.any():
        logger.warning(f"{int(isolated.sum())} isolated kernel row(s) turned into self-loops")
    return P, isolated


def knn_transition(kernel, knn_k: int) -> sparse.csr_matrix:
    """
    kNN-truncated transition matrix. The neighbor set of i holds the knn_k
    largest W(i, .) including i itself, plus any ties with the k-th value;
    each row is renormalized over that set.
    """
    W = _weights(kernel)
    n = W.shape[0]
    k = min(max(knn_k, 1), n)
    kth = np.partition(W, n - k, axis=1)[:, n - k]
    keep = W >= kth[:, None]
    values = np.where(keep, W, 0.0)
    norm = values.sum(axis=1)
    empty = norm <= 0
    values = values / np.where(empty, 1.0, norm)[:, None]
    rows = np.flatnonzero(empty)
    values[rows] = 0.0
    values[rows, rows] = 1.0
    S = sparse.csr_matrix(values)
    S.eliminate_zeros()
    return S


def transition_pair(kernel: Kernel, knn_k: Optional[int] = None) -> TransitionPair:
    P, isolated = full_transition(kernel)
    S = knn_transition(kernel, kernel.knn_k if knn_k is None else knn_k)
    return TransitionPair(P=P, S=S, isolated_rows=isolated)


# ============================================================================
# Cross-diffusion
# ============================================================================

def _order_free_sum(mats: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise sum whose rounding does not depend on the order of ``mats``."""
    if len(mats) == 1:
        return np.array(mats[0])
    return np.sort(np.stack(mats), axis=0).sum(axis=0)


def cross_diffuse(kernels: Sequence, knn_k: int, iterations: int,
                  keep_trajectory: bool = False) -> FusedProbability:
    """
    P_f <- S_f (mean_{v != f} P_v) S_f^T for every channel f, all channels
    updated from the previous iteration, each P_f re-regularized afterwards.
    Returns the mean of the final P_f.

    Raises:
        ConfigError: fewer than two kernels
        DimensionMismatch: kernels differ in size
    """
    m = len(kernels)
    if m < 2:
        raise ConfigError(f"cross-diffusion needs at least 2 kernels, got {m}")
    sizes = {_weights(k).shape for k in kernels}
    if len(sizes) != 1:
        raise DimensionMismatch(f"kernels differ in shape: {sorted(sizes)}")

    Ps, Ss, isolated = [], [], 0
    for kernel in kernels:
        P, iso = full_transition(kernel)
        Ps.append(P)
        Ss.append(knn_transition(kernel, knn_k))
        isolated += int(iso.sum())

    trajectory = [_order_free_sum(Ps) / m] if keep_trajectory else None
    for it in range(iterations):
        next_Ps = []
        for f in range(m):
            others = _order_free_sum([Ps[v] for v in range(m) if v != f]) / (m - 1)
            # S * others * S^T with the sparse factor on the left
            left = Ss[f].dot(others.T)
            diffused = np.asarray(Ss[f].dot(left.T))
            next_Ps.append(_regularize(diffused)[0])
        Ps = next_Ps
        if trajectory is not None:
            trajectory.append(_order_free_sum(Ps) / m)
        logger.debug(f"Cross-diffusion iteration {it + 1}/{iterations} done")

    return FusedProbability(
        P_hat=_order_free_sum(Ps) / m,
        iterations=iterations,
        trajectory=trajectory,
        isolated_rows=isolated,
    )


# ============================================================================
# Early fusion
# ============================================================================

def build_parent_kernel(ssm_a: np.ndarray, ssm_b: np.ndarray, csm: np.ndarray,
                        kappa: float, knn_k: int) -> ParentKernel:
    """
    Assemble the (M + N) x (M + N) kernel [[W_A, W_C], [W_C^T, W_B]] with
    neighborhood scales computed separately inside each quadrant.

    Raises:
        DimensionMismatch: the CSM is not M x N for the given SSMs
    """
    ssm_a = np.asarray(ssm_a, dtype=np.float64)
    ssm_b = np.asarray(ssm_b, dtype=np.float64)
    csm = np.asarray(csm, dtype=np.float64)
    m, n = ssm_a.shape[0], ssm_b.shape[0]
    if csm.shape != (m, n):
        raise DimensionMismatch(f"CSM shape {csm.shape} does not match SSMs ({m}, {n})")

    kernel_a = autotuned_kernel(ssm_a, knn_k)
    kernel_b = autotuned_kernel(ssm_b, knn_k)
    W_C, sigma_C = cross_kernel(csm, kappa)
    return ParentKernel(
        W_A=kernel_a.W, W_B=kernel_b.W, W_C=W_C,
        sigma_A=kernel_a.sigma, sigma_B=kernel_b.sigma, sigma_C=sigma_C,
        knn_k=knn_k,
    )


def early_fuse_pair(feature_pairs: Sequence[Tuple[np.ndarray, np.ndarray, np.ndarray]],
                    kappa: float, knn_k: int, iterations: int,
                    keep_trajectory: bool = False) -> EarlyFusion:
    """
    Fuse per-channel (ssm_a, ssm_b, csm) triples of one song pair.

    The fused parent matrix's upper-right M x N block is binarized by keeping
    mutually highest probabilities.

    Raises:
        DimensionMismatch: channels disagree on M or N
    """
    shapes = {np.shape(csm) for _, _, csm in feature_pairs}
    if len(shapes) != 1:
        raise DimensionMismatch(f"channels disagree on block counts: {sorted(shapes)}")
    m, n = shapes.pop()

    parents = [build_parent_kernel(a, b, c, kappa, knn_k) for a, b, c in feature_pairs]
    fused = cross_diffuse([p.as_kernel() for p in parents], knn_k, iterations, keep_trajectory)
    cross = fused.P_hat[:m, m:m + n]
    binary = binarize_mutual_knn(cross, kappa, direction=Direction.LARGEST)
    return EarlyFusion(cross_probability=cross, binary=binary, fused=fused, parents=parents)


# ============================================================================
# Late fusion
# ============================================================================

def scores_to_distances(scores: np.ndarray) -> np.ndarray:
    """rho = 1 / (S + eps) off the diagonal, 0 on it."""
    scores = np.array(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise NonSquare(f"score matrix must be square, got shape {scores.shape}")
    np.fill_diagonal(scores, 0.0)
    if np.any(scores < 0) or not np.all(np.isfinite(scores)):
        raise NegativeDistance("score matrices must be finite and nonnegative")
    rho = 1.0 / (scores + LATE_FUSION_EPSILON)
    np.fill_diagonal(rho, 0.0)
    return rho


def late_fuse_scores(score_matrices: Sequence[np.ndarray], knn_k: int, iterations: int) -> FusedProbability:
    """
    Fuse corpus-level N x N score matrices (higher = more similar) into one
    matrix where higher is again more similar. The diagonal is ignored.

    Raises:
        DimensionMismatch: matrices differ in size
    """
    sizes = {np.shape(s) for s in score_matrices}
    if len(sizes) != 1:
        raise DimensionMismatch(f"score matrices differ in shape: {sorted(sizes)}")
    kernels = [autotuned_kernel(scores_to_distances(s), knn_k) for s in score_matrices]
    logger.info(f"Late fusion of {len(kernels)} score matrices over {kernels[0].n} songs")
    return cross_diffuse(kernels, knn_k, iterations)
