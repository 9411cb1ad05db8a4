"""
Corpus pipeline for coverfuse: feature extraction into the cache, pairwise
scoring over tempo-bias combinations, and checkpointed corpus scoring.
"""

import csv
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .alignment import smith_waterman
from .audio import AudioClip, load_audio
from .beats import BeatTrack, track_beats
from .blocks import BlockSet, build_hpcp_blocks, build_ssm_blocks, blockset_from_matrices, mfcc_block_matrices
from .cache import Container, FeatureCache, read_container, read_header, write_container
from .config import Config
from .constants import (
    CACHE_SUFFIX,
    CHANNEL_EARLY,
    CHANNEL_HPCP,
    CHANNEL_MFCC,
    CHANNEL_OR,
    CHANNEL_SSM,
    CHECKPOINT_FILENAME,
    EXTRACT_ERRORS_FILENAME,
    FEATURE_CHANNELS,
    SCORES_CSV_FILENAME,
    SCORES_FILENAME,
)
from .cross_similarity import BinaryCSM, binarize_mutual_knn, compute_csm, self_distances
from .errors import CacheFormatError, DataError, ManifestError, MissingFeatures, TooFewBeats
from .features import FeatureKind, FeatureMatrix, compute_hpcp, compute_mfcc
from .fusion import early_fuse_pair

logger = logging.getLogger(__name__)


# ============================================================================
# Manifest
# ============================================================================

@dataclass(frozen=True)
class ManifestEntry:
    song_id: str
    path: Path
    clique_id: str
    title: str = ""
    artist: str = ""
    set: Optional[str] = None

    def metadata(self) -> dict:
        return {
            "clique_id": self.clique_id,
            "title": self.title,
            "artist": self.artist,
            "set": self.set,
        }


def load_manifest(path) -> List[ManifestEntry]:
    """
    Read a JSON array of {song_id, path, clique_id, title?, artist?, set?}.
    Relative audio paths are resolved against the manifest's directory.

    Raises:
        ManifestError: unreadable file, missing keys or duplicate song ids
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"Error loading manifest {path}: {e}") from e
    if not isinstance(data, list):
        raise ManifestError(f"Manifest {path} must hold a JSON array")

    entries, seen = [], set()
    for n, item in enumerate(data):
        try:
            song_id = str(item["song_id"])
            audio = Path(item["path"])
            clique = str(item["clique_id"])
        except (KeyError, TypeError) as e:
            raise ManifestError(f"Manifest entry {n} is missing {e}") from e
        if song_id in seen:
            raise ManifestError(f"Duplicate song_id in manifest: {song_id}")
        seen.add(song_id)
        if item.get("set") not in (None, "A", "B"):
            raise ManifestError(f"Manifest entry {song_id}: set must be 'A' or 'B'")
        entries.append(ManifestEntry(
            song_id=song_id,
            path=audio if audio.is_absolute() else path.parent / audio,
            clique_id=clique,
            title=str(item.get("title", "")),
            artist=str(item.get("artist", "")),
            set=item.get("set"),
        ))
    return entries


# ============================================================================
# Song features
# ============================================================================

@dataclass(frozen=True, eq=False)
class BiasFeatures:
    """Beat track for one tempo bias, or the reason it failed."""

    tempo_bias: float
    beats: Optional[BeatTrack] = None
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.beats is None


@dataclass(eq=False)
class SongFeatures:
    """
    Everything cached per song. MFCC and HPCP frames do not depend on the
    tempo bias, so they are stored once and shared by every bias entry.
    """

    song_id: str
    mfcc: FeatureMatrix
    hpcp: FeatureMatrix
    biases: List[BiasFeatures]
    metadata: dict = field(default_factory=dict)

    @property
    def clique_id(self) -> Optional[str]:
        return self.metadata.get("clique_id")

    def tracks(self) -> List[BeatTrack]:
        return [b.beats for b in self.biases if not b.failed]

    def to_container(self) -> Container:
        tensors = {"mfcc": self.mfcc.frames, "hpcp": self.hpcp.frames}
        bias_meta = []
        for b in self.biases:
            bias_meta.append({
                "tempo_bias": b.tempo_bias,
                "period_estimate": None if b.failed else b.beats.period_estimate,
                "fallback": False if b.failed else b.beats.fallback,
                "error": b.error,
            })
            if not b.failed:
                tensors[f"beats/{b.tempo_bias:g}"] = b.beats.onsets
        metadata = dict(self.metadata)
        metadata["features"] = {
            name: {"hop": m.hop, "window": m.window, "sample_rate": m.sample_rate}
            for name, m in (("mfcc", self.mfcc), ("hpcp", self.hpcp))
        }
        metadata["biases"] = bias_meta
        return Container(song_id=self.song_id, metadata=metadata, tensors=tensors)

    @classmethod
    def from_container(cls, container: Container) -> "SongFeatures":
        """
        Raises:
            CacheFormatError: required tensors or metadata are missing
        """
        meta = dict(container.metadata)
        try:
            feature_meta = meta.pop("features")
            bias_meta = meta.pop("biases")
            matrices = {
                name: FeatureMatrix(
                    frames=container.tensors[name],
                    kind=kind,
                    **feature_meta[name],
                )
                for name, kind in (("mfcc", FeatureKind.MFCC), ("hpcp", FeatureKind.HPCP))
            }
            biases = []
            for entry in bias_meta:
                bias = entry["tempo_bias"]
                if entry.get("error") is not None:
                    biases.append(BiasFeatures(bias, None, entry["error"]))
                    continue
                track = BeatTrack(
                    onsets=container.tensors[f"beats/{bias:g}"],
                    tempo_bias=bias,
                    period_estimate=entry["period_estimate"],
                    fallback=entry["fallback"],
                )
                biases.append(BiasFeatures(bias, track))
        except (KeyError, TypeError, ValueError) as e:
            raise CacheFormatError(f"cache entry for '{container.song_id}' is incomplete: {e}") from e
        return cls(container.song_id, matrices["mfcc"], matrices["hpcp"], biases, meta)


def compute_song_features(clip: AudioClip, cfg: Config, song_id: str,
                          metadata: Optional[dict] = None) -> SongFeatures:
    """Extract MFCC, HPCP and one beat track per configured tempo bias."""
    mfcc = compute_mfcc(clip, cfg.mfcc)
    hpcp = compute_hpcp(clip, cfg.hpcp)
    biases = []
    for bias in cfg.tempo_biases:
        try:
            biases.append(BiasFeatures(bias, track_beats(clip, bias, cfg.beats)))
        except DataError as e:
            logger.warning(f"{song_id}: beat tracking at {bias} bpm failed: {e}")
            biases.append(BiasFeatures(bias, None, str(e)))
    return SongFeatures(song_id, mfcc, hpcp, biases, dict(metadata or {}))


# ============================================================================
# Extraction
# ============================================================================

@dataclass
class ExtractReport:
    written: List[str] = field(default_factory=list)
    skipped: List[str] = field(default_factory=list)
    failed: Dict[str, str] = field(default_factory=dict)


def content_hash(path: Path, fingerprint: str) -> str:
    """sha256 over the file bytes and the extraction settings."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    digest.update(fingerprint.encode("utf-8"))
    return digest.hexdigest()


def _extract_one(entry: ManifestEntry, cfg_data: dict, out_dir: str, digest: str) -> Optional[str]:
    """Extract one song into the cache. Returns an error message or None."""
    cfg = Config.from_dict(cfg_data)
    cache = FeatureCache(out_dir)
    meta = entry.metadata()
    meta.update(content_hash=digest, extraction_fingerprint=cfg.extraction_fingerprint())
    try:
        if entry.path.suffix.lower() == CACHE_SUFFIX:
            # precomputed features: validate, then store under the manifest's id
            song = SongFeatures.from_container(read_container(entry.path))
            song.song_id = entry.song_id
            song.metadata.update(meta)
        else:
            clip = load_audio(entry.path, cfg.sample_rate)
            song = compute_song_features(clip, cfg, entry.song_id, meta)
        cache.store(song.to_container())
    except DataError as e:
        return f"{type(e).__name__}: {e}"
    return None


def extract_features(entries: Sequence[ManifestEntry], out_dir, cfg: Config,
                     quiet: bool = False) -> ExtractReport:
    """
    Fill the feature cache for every manifest entry.

    Entries whose cached content hash matches are skipped. Per-song failures
    are collected into ``extract_errors.json`` and never abort the run.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache = FeatureCache(out_dir)
    fingerprint = cfg.extraction_fingerprint()
    report = ExtractReport()

    pending = []
    for entry in entries:
        try:
            digest = content_hash(entry.path, fingerprint)
        except OSError as e:
            report.failed[entry.song_id] = f"CorruptFile: {entry.path}: {e.strerror or e}"
            continue
        if cache.content_hash(entry.song_id) == digest:
            report.skipped.append(entry.song_id)
        else:
            pending.append((entry, digest))

    logger.info(f"Extracting {len(pending)} song(s), {len(report.skipped)} already cached")
    cfg_data = cfg.to_dict()
    progress = tqdm(total=len(pending), desc="extract", unit="song", disable=_no_progress(quiet))
    results = {}
    if cfg.workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = {
                pool.submit(_extract_one, entry, cfg_data, str(out_dir), digest): entry.song_id
                for entry, digest in pending
            }
            for future in as_completed(futures):
                results[futures[future]] = future.result()
                progress.update(1)
    else:
        for entry, digest in pending:
            results[entry.song_id] = _extract_one(entry, cfg_data, str(out_dir), digest)
            progress.update(1)
    progress.close()

    for entry, _ in pending:
        error = results[entry.song_id]
        if error is None:
            report.written.append(entry.song_id)
        else:
            report.failed[entry.song_id] = error

    with open(out_dir / EXTRACT_ERRORS_FILENAME, "w", encoding="utf-8") as f:
        json.dump(report.failed, f, indent=2, sort_keys=True)
    for song_id, error in sorted(report.failed.items()):
        logger.warning(f"Extraction failed for {song_id}: {error}")
    return report


def load_song(cache: FeatureCache, song_id: str) -> SongFeatures:
    return SongFeatures.from_container(cache.load(song_id))


# ============================================================================
# Pair scoring
# ============================================================================

@dataclass(eq=False)
class SongBlocks:
    """The three block sets of one song at one tempo bias."""

    tempo_bias: float
    blocksets: Dict[str, BlockSet]
    _ssms: Dict[str, np.ndarray] = field(default_factory=dict)

    def self_distances(self, channel: str) -> np.ndarray:
        if channel not in self._ssms:
            self._ssms[channel] = self_distances(self.blocksets[channel])
        return self._ssms[channel]


def song_blocks(song: SongFeatures, track: BeatTrack, cfg: Config) -> SongBlocks:
    """
    Raises:
        TooFewBeats: the track has fewer than B + 1 onsets
    """
    matrices = mfcc_block_matrices(song.mfcc, track, cfg.blocks)
    mfcc = blockset_from_matrices(matrices, track, cfg.blocks)
    ssm = build_ssm_blocks(matrices, mfcc.beat_index_of_block, cfg.blocks)
    hpcp = build_hpcp_blocks(song.hpcp, track, cfg.blocks)
    return SongBlocks(track.tempo_bias, {CHANNEL_MFCC: mfcc, CHANNEL_SSM: ssm, CHANNEL_HPCP: hpcp})


def _blocks_by_bias(song: SongFeatures, cfg: Config) -> Dict[float, SongBlocks]:
    out = {}
    for track in song.tracks():
        try:
            out[track.tempo_bias] = song_blocks(song, track, cfg)
        except TooFewBeats as e:
            logger.warning(f"{song.song_id}: {e}")
    return out


@dataclass
class PairScore:
    """Best score per channel over all tempo combinations of two songs."""

    song_a: str
    song_b: str
    scores: Dict[str, float]
    winners: Dict[str, Optional[Tuple[float, float]]]
    too_few_beats: bool = False
    zero_profile: bool = False

    def to_dict(self) -> dict:
        return {
            "a": self.song_a,
            "b": self.song_b,
            "scores": self.scores,
            "winners": {c: (list(w) if w else None) for c, w in self.winners.items()},
            "too_few_beats": self.too_few_beats,
            "zero_profile": self.zero_profile,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PairScore":
        return cls(
            song_a=data["a"],
            song_b=data["b"],
            scores={c: float(s) for c, s in data["scores"].items()},
            winners={c: (tuple(w) if w else None) for c, w in data["winners"].items()},
            too_few_beats=data.get("too_few_beats", False),
            zero_profile=data.get("zero_profile", False),
        )


class PairDump:
    """Collects intermediate matrices of one score_pair call."""

    def __init__(self, csm: bool = False, fusion: bool = False, sw: bool = False):
        self.csm = csm
        self.fusion = fusion
        self.sw = sw
        self.tensors: Dict[str, np.ndarray] = {}
        self.combos: List[dict] = []
        self.order: Optional[List[str]] = None

    @property
    def active(self) -> bool:
        return self.csm or self.fusion or self.sw

    def write(self, path, song_a: str, song_b: str, pair: PairScore) -> Path:
        container = Container(
            song_id=f"{song_a}__{song_b}",
            metadata={"song_a": song_a, "song_b": song_b, "order": self.order, "combos": self.combos,
                      "pair": pair.to_dict()},
            tensors=self.tensors,
        )
        write_container(path, container)
        return Path(path)


def _needed_channels(cfg: Config) -> List[str]:
    needed = {c for c in cfg.channels if c in FEATURE_CHANNELS}
    if CHANNEL_OR in cfg.channels:
        needed.update(FEATURE_CHANNELS)
    if CHANNEL_EARLY in cfg.channels:
        needed.update(cfg.fusion.early_channels)
    return [c for c in FEATURE_CHANNELS if c in needed]


def _align(mask: BinaryCSM, cfg: Config, dump: Optional[PairDump], key: str) -> float:
    if dump is not None and dump.sw:
        result = smith_waterman(mask, cfg.alignment, full_table=True)
        dump.tensors[f"sw/{key}"] = result.table
        dump.tensors[f"path/{key}"] = np.array(result.path, dtype=np.int64).reshape(-1, 2)
        return result.score
    return smith_waterman(mask, cfg.alignment).score


def score_pair(a: SongFeatures, b: SongFeatures, cfg: Config,
               dump: Optional[PairDump] = None) -> PairScore:
    """
    Score two songs on every configured channel.

    Each channel keeps its best Smith-Waterman score over all combinations of
    the two songs' tempo biases. A song without enough beats at any bias
    scores 0 on every channel and the result is flagged.

    The pair is always scored with the smaller song id first, so
    score_pair(a, b) and score_pair(b, a) agree exactly. Dumped matrices
    follow that order (recorded as ``order`` in the dump).
    """
    if b.song_id >= a.song_id:
        return _score_ordered(a, b, cfg, dump)
    pair = _score_ordered(b, a, cfg, dump)
    return PairScore(
        song_a=a.song_id,
        song_b=b.song_id,
        scores=pair.scores,
        winners={c: (w[::-1] if w else None) for c, w in pair.winners.items()},
        too_few_beats=pair.too_few_beats,
        zero_profile=pair.zero_profile,
    )


def _score_ordered(a: SongFeatures, b: SongFeatures, cfg: Config,
                   dump: Optional[PairDump]) -> PairScore:
    channels = list(cfg.channels)
    scores = {c: 0.0 for c in channels}
    winners: Dict[str, Optional[Tuple[float, float]]] = {c: None for c in channels}
    needed = _needed_channels(cfg)
    kappa = cfg.fusion.kappa

    blocks_a = _blocks_by_bias(a, cfg)
    blocks_b = _blocks_by_bias(b, cfg)
    if not blocks_a or not blocks_b:
        logger.warning(f"{a.song_id} vs {b.song_id}: too few beats at every tempo bias; scoring 0")
        return PairScore(a.song_id, b.song_id, scores, winners, too_few_beats=True)

    if dump is not None:
        dump.order = [a.song_id, b.song_id]
    zero_profile = False
    for bias_a, sa in blocks_a.items():
        for bias_b, sb in blocks_b.items():
            combo = (bias_a, bias_b)
            tag = f"{bias_a:g}x{bias_b:g}"
            csms = {c: compute_csm(sa.blocksets[c], sb.blocksets[c]) for c in needed}
            binaries = {c: binarize_mutual_knn(csm, kappa) for c, csm in csms.items()}
            if CHANNEL_HPCP in csms:
                zero_profile |= csms[CHANNEL_HPCP].zero_profile
            if dump is not None and dump.csm:
                for c in needed:
                    dump.tensors[f"csm/{c}/{tag}"] = csms[c].values
                    dump.tensors[f"mask/{c}/{tag}"] = binaries[c].mask
            if dump is not None:
                dump.combos.append({"tag": tag, "oti": csms[CHANNEL_HPCP].oti if CHANNEL_HPCP in csms else None})

            combo_scores = {}
            for c in channels:
                if c in FEATURE_CHANNELS:
                    combo_scores[c] = _align(binaries[c], cfg, dump, f"{c}/{tag}")
                elif c == CHANNEL_OR:
                    union = np.logical_or.reduce([binaries[f].mask for f in FEATURE_CHANNELS])
                    combo_scores[c] = _align(BinaryCSM(union, kappa), cfg, dump, f"{c}/{tag}")
                elif c == CHANNEL_EARLY:
                    triples = [
                        (sa.self_distances(f), sb.self_distances(f), csms[f].values)
                        for f in cfg.fusion.early_channels
                    ]
                    early = early_fuse_pair(triples, kappa, cfg.fusion.knn, cfg.fusion.early_iterations)
                    if dump is not None and dump.fusion:
                        for f, parent in zip(cfg.fusion.early_channels, early.parents):
                            dump.tensors[f"parent/{f}/{tag}"] = parent.matrix
                        dump.tensors[f"fused/{tag}"] = early.cross_probability
                        dump.tensors[f"mask/early/{tag}"] = early.binary.mask
                    combo_scores[c] = _align(early.binary, cfg, dump, f"{c}/{tag}")

            for c, value in combo_scores.items():
                if winners[c] is None or value > scores[c]:
                    scores[c], winners[c] = value, combo

    logger.debug(f"{a.song_id} vs {b.song_id}: " + ", ".join(f"{c}={s:g}" for c, s in scores.items()))
    return PairScore(a.song_id, b.song_id, scores, winners, zero_profile=zero_profile)


# ============================================================================
# Corpus scoring
# ============================================================================

@dataclass(eq=False)
class ScoreMatrices:
    """Symmetric N x N score matrix per channel; the diagonal is stored as 0."""

    song_ids: List[str]
    matrices: Dict[str, np.ndarray]
    metadata: Dict[str, dict] = field(default_factory=dict)
    fingerprint: str = ""

    @property
    def channels(self) -> List[str]:
        return list(self.matrices)

    def cliques(self) -> List[Optional[str]]:
        return [self.metadata.get(s, {}).get("clique_id") for s in self.song_ids]

    def sets(self) -> List[Optional[str]]:
        return [self.metadata.get(s, {}).get("set") for s in self.song_ids]

    def save(self, out_dir) -> Path:
        """Write ``scores.cfse`` plus a long-format ``scores.csv``."""
        out_dir = Path(out_dir)
        path = out_dir / SCORES_FILENAME
        write_container(path, Container(
            song_id="scores",
            metadata={"song_ids": self.song_ids, "songs": self.metadata, "fingerprint": self.fingerprint},
            tensors={f"scores/{c}": m for c, m in self.matrices.items()},
        ))
        with open(out_dir / SCORES_CSV_FILENAME, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["song_i", "song_j", "channel", "score"])
            n = len(self.song_ids)
            for c, m in self.matrices.items():
                for i in range(n):
                    for j in range(i + 1, n):
                        writer.writerow([self.song_ids[i], self.song_ids[j], c, repr(float(m[i, j]))])
        return path

    @classmethod
    def load(cls, path) -> "ScoreMatrices":
        """Load from a scores directory or a ``scores.cfse`` file."""
        path = Path(path)
        if path.is_dir():
            path = path / SCORES_FILENAME
        if not path.exists():
            raise MissingFeatures(f"no score matrices at {path}")
        container = read_container(path)
        matrices = {
            name.split("/", 1)[1]: t for name, t in container.tensors.items() if name.startswith("scores/")
        }
        return cls(
            song_ids=list(container.metadata.get("song_ids", [])),
            matrices=matrices,
            metadata=container.metadata.get("songs", {}),
            fingerprint=container.metadata.get("fingerprint", ""),
        )


class Checkpoint:
    """
    Append-only JSONL record of finished pairs. The first line holds the
    scoring fingerprint; each record carries the content hashes of its two
    songs, so re-extracted songs are scored again.
    """

    def __init__(self, path, header: dict):
        self.path = Path(path)
        self.header = header
        self._file = None

    def load(self, hashes: Dict[str, Optional[str]]) -> Dict[Tuple[str, str], PairScore]:
        """Read valid finished pairs and rewrite the file with only those."""
        done: Dict[Tuple[str, str], dict] = {}
        if self.path.exists():
            with open(self.path, "r", encoding="utf-8") as f:
                lines = f.read().splitlines()
            try:
                header = json.loads(lines[0]) if lines else None
            except json.JSONDecodeError:
                header = None
            if header == self.header:
                for line in lines[1:]:
                    try:
                        record = json.loads(line)
                    except json.JSONDecodeError:
                        logger.warning(f"Dropping a truncated checkpoint record in {self.path}")
                        continue
                    if (record.get("hash_a") == hashes.get(record["a"])
                            and record.get("hash_b") == hashes.get(record["b"])):
                        done[(record["a"], record["b"])] = record
            else:
                logger.info(f"Checkpoint {self.path} was written with other settings; starting over")

        tmp = self.path.with_name(self.path.name + ".tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(json.dumps(self.header, sort_keys=True) + "\n")
            for record in done.values():
                f.write(json.dumps(record, sort_keys=True) + "\n")
        os.replace(tmp, self.path)
        return {key: PairScore.from_dict(r) for key, r in done.items()}

    def append(self, pair: PairScore, hashes: Dict[str, Optional[str]]):
        if self._file is None:
            self._file = open(self.path, "a", encoding="utf-8")
        record = pair.to_dict()
        record.update(hash_a=hashes.get(pair.song_a), hash_b=hashes.get(pair.song_b))
        self._file.write(json.dumps(record, sort_keys=True) + "\n")
        self._file.flush()

    def close(self):
        if self._file is not None:
            self._file.close()
            self._file = None


# Per-process state for scoring workers
_SONGS: Dict[str, SongFeatures] = {}
_CONFIG: Optional[Config] = None


def _init_scoring(cache_dir: str, song_ids: List[str], cfg_data: dict):
    global _CONFIG
    cache = FeatureCache(cache_dir)
    _SONGS.clear()
    _SONGS.update({s: load_song(cache, s) for s in song_ids})
    _CONFIG = Config.from_dict(cfg_data)


def _score_batch(pairs: List[Tuple[str, str]]) -> List[dict]:
    return [score_pair(_SONGS[a], _SONGS[b], _CONFIG).to_dict() for a, b in pairs]


def _no_progress(quiet: bool) -> bool:
    return quiet or not sys.stderr.isatty()


def _batches(items: List, size: int) -> Iterable[List]:
    for start in range(0, len(items), size):
        yield items[start:start + size]


def score_corpus(cache_dir, cfg: Config, out_dir, song_ids: Optional[Sequence[str]] = None,
                 quiet: bool = False) -> ScoreMatrices:
    """
    Score all N(N-1)/2 song pairs and write the score matrices to ``out_dir``.

    Finished pairs are appended to a checkpoint as they complete, so an
    interrupted run resumes where it stopped. Results are placed by pair
    index, making the output independent of the worker count.

    Raises:
        MissingFeatures: a requested song is not in the cache
    """
    cache = FeatureCache(cache_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ids = list(song_ids) if song_ids is not None else cache.song_ids()
    missing = [s for s in ids if s not in cache]
    if missing:
        raise MissingFeatures(f"no cached features for: {', '.join(missing)}")
    if len(ids) < 2:
        raise MissingFeatures(f"need at least 2 cached songs, found {len(ids)}")

    headers = {s: read_header(cache.path_for(s)).metadata for s in ids}
    hashes = {s: headers[s].get("content_hash") for s in ids}
    song_meta = {
        s: {k: headers[s].get(k) for k in ("clique_id", "title", "artist", "set")} for s in ids
    }

    pairs = [(ids[i], ids[j]) for i in range(len(ids)) for j in range(i + 1, len(ids))]
    checkpoint = Checkpoint(
        out_dir / CHECKPOINT_FILENAME,
        {"scoring": cfg.scoring_fingerprint(), "channels": list(cfg.channels)},
    )
    results = checkpoint.load(hashes)
    pending = [p for p in pairs if p not in results]
    logger.info(f"Scoring {len(pending)} of {len(pairs)} pairs ({len(results)} from checkpoint)")

    progress = tqdm(total=len(pending), desc="score", unit="pair", disable=_no_progress(quiet))
    cfg_data = cfg.to_dict()
    try:
        if cfg.workers > 1 and len(pending) > 1:
            batch = max(1, min(16, len(pending) // (4 * cfg.workers)))
            with ProcessPoolExecutor(max_workers=cfg.workers, initializer=_init_scoring,
                                     initargs=(str(cache.directory), ids, cfg_data)) as pool:
                futures = [pool.submit(_score_batch, chunk) for chunk in _batches(pending, batch)]
                for future in as_completed(futures):
                    for record in future.result():
                        pair = PairScore.from_dict(record)
                        results[(pair.song_a, pair.song_b)] = pair
                        checkpoint.append(pair, hashes)
                        progress.update(1)
        elif pending:
            _init_scoring(str(cache.directory), ids, cfg_data)
            for pair_ids in pending:
                pair = PairScore.from_dict(_score_batch([pair_ids])[0])
                results[pair_ids] = pair
                checkpoint.append(pair, hashes)
                progress.update(1)
    finally:
        progress.close()
        checkpoint.close()

    index = {s: i for i, s in enumerate(ids)}
    matrices = {c: np.zeros((len(ids), len(ids))) for c in cfg.channels}
    for (a, b) in pairs:
        pair = results[(a, b)]
        i, j = index[a], index[b]
        for c in cfg.channels:
            matrices[c][i, j] = matrices[c][j, i] = pair.scores[c]

    scores = ScoreMatrices(ids, matrices, song_meta, cfg.scoring_fingerprint())
    scores.save(out_dir)
    logger.info(f"Wrote score matrices for {len(ids)} songs to {out_dir}")
    return scores
