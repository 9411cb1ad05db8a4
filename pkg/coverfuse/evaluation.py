"""
Ranking evaluation and late-fusion variants for coverfuse.

Every song with at least one other clique member is a query. The other songs
are ranked by descending score (ties broken by song id); the rank of the
first clique member gives MR, MRR and the Top-N counts, and the ranks of all
clique members give the average precision.
"""

import enum
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import Config
from .constants import ALL_CHANNELS, CHANNEL_EARLY, FEATURE_CHANNELS, TOP_N_LEVELS
from .errors import ConfigError, DimensionMismatch, MissingFeatures
from .fusion import late_fuse_scores

logger = logging.getLogger(__name__)


class FusionMode(str, enum.Enum):
    LATE_ALL = "late"
    EARLY_PLUS_LATE = "early+late"
    LATE_CUSTOM = "custom"


@dataclass
class EvalReport:
    method: str
    n_queries: int
    mean_rank: float
    mrr: float
    top_n: Dict[int, int]
    ranks: Dict[str, int] = field(default_factory=dict)
    tie_flagged: List[str] = field(default_factory=list)
    excluded_singletons: List[str] = field(default_factory=list)
    map: Optional[float] = None
    map_by_clique: Dict[str, float] = field(default_factory=dict)
    ab_correct: Optional[int] = None
    ab_queries: Optional[int] = None

    def to_dict(self) -> dict:
        data = asdict(self)
        data["top_n"] = {str(k): v for k, v in self.top_n.items()}
        return data

    def summary(self) -> str:
        tops = "  ".join(f"Top-{n:<2d} {self.top_n[n]:4d}" for n in sorted(self.top_n))
        line = f"{self.method:<14s} MR {self.mean_rank:8.2f}  MRR {self.mrr:.3f}  {tops}"
        if self.map is not None:
            line += f"  MAP {self.map:.3f}"
        if self.ab_queries:
            line += f"  A/B {self.ab_correct}/{self.ab_queries}"
        return line


def average_precision(ranks: Sequence[int]) -> float:
    """AP of a query from the 1-based ranks of all its relevant songs."""
    ranks = sorted(ranks)
    if not ranks:
        return 0.0
    return float(np.mean([(k + 1) / r for k, r in enumerate(ranks)]))


def _ordering(scores: np.ndarray, i: int, id_rank: np.ndarray) -> np.ndarray:
    """Other songs for query i, best first; equal scores fall back to id order."""
    others = np.flatnonzero(np.arange(scores.shape[0]) != i)
    order = np.lexsort((id_rank[others], -scores[i, others]))
    return others[order]


def evaluate(scores: np.ndarray, song_ids: Sequence[str], cliques: Sequence[Optional[str]],
             sets: Optional[Sequence[Optional[str]]] = None, method: str = "") -> EvalReport:
    """
    Rank metrics for an N x N score matrix (higher = more similar, rows are
    queries, the diagonal is ignored).
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = len(song_ids)
    if scores.shape != (n, n):
        raise DimensionMismatch(f"score matrix shape {scores.shape} does not match {n} songs")
    id_rank = np.argsort(np.argsort(np.asarray(song_ids, dtype=object)))
    clique_arr = np.asarray(cliques, dtype=object)

    ranks, tie_flagged, singletons, aps = {}, [], [], {}
    for i, song_id in enumerate(song_ids):
        same = clique_arr == clique_arr[i]
        same[i] = False
        if cliques[i] is None or not same.any():
            singletons.append(song_id)
            continue
        order = _ordering(scores, i, id_rank)
        hits = np.flatnonzero(same[order]) + 1
        ranks[song_id] = int(hits[0])
        first = order[hits[0] - 1]
        rivals = ~same[order]
        if np.any(scores[i, order[rivals]] == scores[i, first]):
            tie_flagged.append(song_id)
        aps[song_id] = average_precision(hits.tolist())

    if singletons:
        logger.warning(f"{len(singletons)} song(s) without clique mates excluded from the queries")
    if tie_flagged:
        logger.warning(f"{len(tie_flagged)} query rank(s) decided by tie-breaking on song id")
    if not ranks:
        raise MissingFeatures("no song has a clique mate; nothing to evaluate")

    values = np.array(list(ranks.values()), dtype=np.float64)
    by_clique: Dict[str, List[float]] = {}
    for i, song_id in enumerate(song_ids):
        if song_id in aps:
            by_clique.setdefault(str(cliques[i]), []).append(aps[song_id])

    report = EvalReport(
        method=method,
        n_queries=len(ranks),
        mean_rank=float(values.mean()),
        mrr=float(np.mean(1.0 / values)),
        top_n={k: int(np.sum(values <= k)) for k in TOP_N_LEVELS},
        ranks=ranks,
        tie_flagged=tie_flagged,
        excluded_singletons=singletons,
        map=float(np.mean(list(aps.values()))),
        map_by_clique={c: float(np.mean(v)) for c, v in sorted(by_clique.items())},
    )

    if sets is not None and any(s is not None for s in sets):
        report.ab_correct, report.ab_queries = _ab_protocol(scores, song_ids, cliques, sets, id_rank)

    return report


def _ab_protocol(scores, song_ids, cliques, sets, id_rank) -> Tuple[int, int]:
    """Each set-A song declares the top-ranked set-B song its cover."""
    in_b = np.array([s == "B" for s in sets])
    correct = queries = 0
    for i in range(len(song_ids)):
        if sets[i] != "A":
            continue
        candidates = np.flatnonzero(in_b & (np.arange(len(song_ids)) != i))
        if candidates.size == 0:
            continue
        queries += 1
        order = np.lexsort((id_rank[candidates], -scores[i, candidates]))
        best = candidates[order[0]]
        correct += int(cliques[best] == cliques[i])
    return correct, queries


# ============================================================================
# Fusion variants
# ============================================================================

def parse_mode(text: str) -> Tuple[FusionMode, Tuple[str, ...]]:
    """
    'late' and 'early+late' name the standard modes; any other '+'-joined
    channel list (e.g. 'mfcc+ssm') is a custom late fusion.

    Raises:
        ConfigError: unknown channel names
    """
    text = text.strip().lower()
    if text == FusionMode.LATE_ALL.value:
        return FusionMode.LATE_ALL, FEATURE_CHANNELS
    if text == FusionMode.EARLY_PLUS_LATE.value:
        return FusionMode.EARLY_PLUS_LATE, FEATURE_CHANNELS + (CHANNEL_EARLY,)
    channels = tuple(c.strip() for c in text.split("+") if c.strip())
    unknown = [c for c in channels if c not in ALL_CHANNELS]
    if unknown:
        raise ConfigError(f"unknown channel(s) in mode '{text}': {', '.join(unknown)}")
    return FusionMode.LATE_CUSTOM, channels


def fuse_and_rank(score_matrices, mode: FusionMode, cfg: Config,
                  channels: Optional[Sequence[str]] = None) -> EvalReport:
    """
    Late-fuse corpus score matrices and evaluate the fused ranking.

    ``score_matrices`` is a pipeline.ScoreMatrices. LATE_ALL fuses the three
    feature channels, EARLY_PLUS_LATE adds the early-fusion channel and
    LATE_CUSTOM fuses ``channels``.

    Raises:
        ConfigError: fewer than two channels
        MissingFeatures: a requested channel was not scored
    """
    if mode == FusionMode.LATE_ALL:
        channels = FEATURE_CHANNELS
    elif mode == FusionMode.EARLY_PLUS_LATE:
        channels = FEATURE_CHANNELS + (CHANNEL_EARLY,)
    channels = tuple(channels or ())
    if len(channels) < 2:
        raise ConfigError(f"late fusion needs at least 2 channels, got {list(channels)}")
    missing = [c for c in channels if c not in score_matrices.matrices]
    if missing:
        raise MissingFeatures(f"score matrices lack channel(s): {', '.join(missing)}")

    fused = late_fuse_scores(
        [score_matrices.matrices[c] for c in channels],
        knn_k=cfg.fusion.knn,
        iterations=cfg.fusion.late_iterations,
    )
    method = mode.value if mode != FusionMode.LATE_CUSTOM else "late:" + "+".join(channels)
    return evaluate(fused.P_hat, score_matrices.song_ids, score_matrices.cliques(),
                    score_matrices.sets(), method=method)


def evaluate_all(score_matrices, cfg: Config, modes: Sequence[str] = ()) -> List[EvalReport]:
    """Every scored channel on its own, then each requested fusion mode."""
    reports = [
        evaluate(score_matrices.matrices[c], score_matrices.song_ids, score_matrices.cliques(),
                 score_matrices.sets(), method=c)
        for c in score_matrices.channels
    ]
    for text in modes:
        mode, channels = parse_mode(text)
        reports.append(fuse_and_rank(score_matrices, mode, cfg, channels))
    return reports
