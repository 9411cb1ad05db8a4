"""
Configuration management for coverfuse.

Parameter groups are small frozen dataclasses handed to the pure feature,
block, fusion and alignment functions. Config bundles them with the run
settings and persists everything as a flat-ish JSON settings file.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

from .constants import (
    ALL_CHANNELS,
    DEFAULT_BEAT_TIGHTNESS,
    DEFAULT_BLOCK_BEATS,
    DEFAULT_BLOCK_STRIDE,
    DEFAULT_CHANNELS,
    DEFAULT_EARLY_ITERATIONS,
    DEFAULT_FRAMES_PER_BLOCK,
    DEFAULT_GAP_PENALTY,
    DEFAULT_HOP,
    DEFAULT_HPCP_BIN_WIDTH,
    DEFAULT_HPCP_DECAY,
    DEFAULT_HPCP_HARMONICS,
    DEFAULT_HPCP_HOP,
    DEFAULT_HPCP_MAX_FREQ,
    DEFAULT_HPCP_MIN_FREQ,
    DEFAULT_HPCP_PEAK_FLOOR_DB,
    DEFAULT_HPCP_REFERENCE,
    DEFAULT_HPCP_WINDOW,
    DEFAULT_HPCP_WINDOWS_PER_BEAT,
    DEFAULT_KAPPA,
    DEFAULT_KNN,
    DEFAULT_LATE_ITERATIONS,
    DEFAULT_LIFTER_EXPONENT,
    DEFAULT_MATCH_SCORE,
    DEFAULT_MEL_FMAX,
    DEFAULT_MEL_FMIN,
    DEFAULT_MFCC_WINDOW_SECONDS,
    DEFAULT_MISMATCH_PENALTY,
    DEFAULT_N_MELS,
    DEFAULT_N_MFCC,
    DEFAULT_ONSET_HOP,
    DEFAULT_SAMPLE_RATE,
    DEFAULT_SSM_DIM,
    DEFAULT_TEMPO_BIASES,
    DEFAULT_TEMPO_PRIOR_OCTAVES,
    FEATURE_CHANNELS,
    MAX_FUSION_CHANNELS,
)
from .errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MfccParams:
    window_seconds: float = DEFAULT_MFCC_WINDOW_SECONDS
    hop: int = DEFAULT_HOP
    n_mels: int = DEFAULT_N_MELS
    fmin: float = DEFAULT_MEL_FMIN
    fmax: float = DEFAULT_MEL_FMAX
    n_mfcc: int = DEFAULT_N_MFCC
    lifter: float = DEFAULT_LIFTER_EXPONENT

    def window_samples(self, sample_rate: int) -> int:
        """Analysis window length in samples (22050 at 44.1 kHz)."""
        return int(round(self.window_seconds * sample_rate))


@dataclass(frozen=True)
class HpcpParams:
    window: int = DEFAULT_HPCP_WINDOW
    hop: int = DEFAULT_HPCP_HOP
    reference: float = DEFAULT_HPCP_REFERENCE
    harmonics: int = DEFAULT_HPCP_HARMONICS
    decay: float = DEFAULT_HPCP_DECAY
    min_freq: float = DEFAULT_HPCP_MIN_FREQ
    max_freq: float = DEFAULT_HPCP_MAX_FREQ
    peak_floor_db: float = DEFAULT_HPCP_PEAK_FLOOR_DB
    bin_width: float = DEFAULT_HPCP_BIN_WIDTH


@dataclass(frozen=True)
class BeatParams:
    tightness: float = DEFAULT_BEAT_TIGHTNESS
    prior_octaves: float = DEFAULT_TEMPO_PRIOR_OCTAVES
    hop: int = DEFAULT_ONSET_HOP


@dataclass(frozen=True)
class BlockConfig:
    B: int = DEFAULT_BLOCK_BEATS
    frames_per_block: int = DEFAULT_FRAMES_PER_BLOCK
    d: int = DEFAULT_SSM_DIM
    hpcp_windows_per_beat: int = DEFAULT_HPCP_WINDOWS_PER_BEAT
    stride: int = DEFAULT_BLOCK_STRIDE

    def __post_init__(self):
        if self.B < 2:
            raise ConfigError(f"block needs at least 2 beats, got B={self.B}")
        if self.frames_per_block < 2:
            raise ConfigError(f"frames_per_block must be >= 2, got {self.frames_per_block}")
        if self.d < 4:
            raise ConfigError(f"SSM image side must be >= 4, got d={self.d}")
        if self.stride < 1:
            raise ConfigError(f"block stride must be >= 1, got {self.stride}")
        if self.hpcp_windows_per_beat != 2:
            # the half-beat split is the only layout the HPCP blocks implement
            raise ConfigError("hpcp_windows_per_beat must be 2")


@dataclass(frozen=True)
class FusionParams:
    kappa: float = DEFAULT_KAPPA
    knn: int = DEFAULT_KNN
    early_iterations: int = DEFAULT_EARLY_ITERATIONS
    late_iterations: int = DEFAULT_LATE_ITERATIONS
    early_channels: tuple = FEATURE_CHANNELS

    def __post_init__(self):
        if not 0.0 < self.kappa < 1.0:
            raise ConfigError(f"kappa must lie in (0, 1), got {self.kappa}")
        if self.knn < 1:
            raise ConfigError(f"knn must be >= 1, got {self.knn}")
        if self.early_iterations < 0 or self.late_iterations < 0:
            raise ConfigError("iteration counts must be >= 0")
        unknown = set(self.early_channels) - set(FEATURE_CHANNELS)
        if unknown:
            raise ConfigError(f"unknown early fusion channels: {sorted(unknown)}")
        if not 2 <= len(self.early_channels) <= MAX_FUSION_CHANNELS:
            raise ConfigError("early fusion needs between 2 and 4 channels")


@dataclass(frozen=True)
class AlignmentParams:
    match: float = DEFAULT_MATCH_SCORE
    mismatch_penalty: float = DEFAULT_MISMATCH_PENALTY
    gap_penalty: float = DEFAULT_GAP_PENALTY


# Which groups matter for which fingerprint
_EXTRACTION_GROUPS = ("mfcc", "hpcp", "beats")
_SCORING_GROUPS = ("blocks", "fusion", "alignment")
_GROUP_TYPES = {
    "mfcc": MfccParams,
    "hpcp": HpcpParams,
    "beats": BeatParams,
    "blocks": BlockConfig,
    "fusion": FusionParams,
    "alignment": AlignmentParams,
}


@dataclass
class Config:
    """All tunable settings for one coverfuse run."""

    mfcc: MfccParams = field(default_factory=MfccParams)
    hpcp: HpcpParams = field(default_factory=HpcpParams)
    beats: BeatParams = field(default_factory=BeatParams)
    blocks: BlockConfig = field(default_factory=BlockConfig)
    fusion: FusionParams = field(default_factory=FusionParams)
    alignment: AlignmentParams = field(default_factory=AlignmentParams)
    sample_rate: int = DEFAULT_SAMPLE_RATE
    tempo_biases: tuple = DEFAULT_TEMPO_BIASES
    channels: tuple = DEFAULT_CHANNELS
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.channels) - set(ALL_CHANNELS)
        if unknown:
            raise ConfigError(f"unknown channels: {sorted(unknown)}")
        if not self.tempo_biases or any(b <= 0 for b in self.tempo_biases):
            raise ConfigError(f"tempo biases must be positive, got {self.tempo_biases}")
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")

    # ------------------------------------------------------------------
    # Persistence
    # ------------------------------------------------------------------

    def to_dict(self) -> dict:
        data = asdict(self)
        data["tempo_biases"] = list(self.tempo_biases)
        data["channels"] = list(self.channels)
        data["fusion"]["early_channels"] = list(self.fusion.early_channels)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        """Build a Config from a (possibly partial) dict; missing keys keep defaults."""
        kwargs = {}
        known = {f.name for f in fields(cls)}
        for key, value in data.items():
            if key not in known:
                logger.warning(f"Ignoring unknown config key: {key}")
                continue
            if key in _GROUP_TYPES:
                group_type = _GROUP_TYPES[key]
                group_known = {f.name for f in fields(group_type)}
                group_kwargs = {}
                for gkey, gvalue in (value or {}).items():
                    if gkey not in group_known:
                        logger.warning(f"Ignoring unknown config key: {key}.{gkey}")
                        continue
                    group_kwargs[gkey] = tuple(gvalue) if isinstance(gvalue, list) else gvalue
                kwargs[key] = group_type(**group_kwargs)
            elif isinstance(value, list):
                kwargs[key] = tuple(value)
            else:
                kwargs[key] = value
        try:
            return cls(**kwargs)
        except TypeError as e:
            raise ConfigError(f"Invalid config: {e}") from e

    @classmethod
    def load(cls, path: Path) -> "Config":
        """Load configuration from a JSON file."""
        path = Path(path)
        try:
            with open(path, "r") as f:
                data = json.load(f)
        except FileNotFoundError as e:
            raise ConfigError(f"Config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"Error loading config {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object")
        return cls.from_dict(data)

    def save(self, path: Path):
        """Save configuration to a JSON file."""
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    def with_overrides(self, **overrides) -> "Config":
        """
        Return a copy with dotted-path overrides applied, e.g.
        ``with_overrides(**{"fusion.kappa": 0.2, "workers": 4})``.
        None values are skipped so unset CLI flags leave the file value alone.
        """
        data = self.to_dict()
        for dotted, value in overrides.items():
            if value is None:
                continue
            target = data
            parts = dotted.split(".")
            for part in parts[:-1]:
                target = target[part]
            target[parts[-1]] = list(value) if isinstance(value, tuple) else value
        return Config.from_dict(data)

    # ------------------------------------------------------------------
    # Fingerprints
    # ------------------------------------------------------------------

    def _fingerprint(self, groups: Sequence[str], extra: Optional[dict] = None) -> str:
        data = self.to_dict()
        payload = {g: data[g] for g in groups}
        payload.update(extra or {})
        blob = json.dumps(payload, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def extraction_fingerprint(self) -> str:
        """Hash of every setting that changes extracted features."""
        return self._fingerprint(
            _EXTRACTION_GROUPS,
            {"sample_rate": self.sample_rate, "tempo_biases": list(self.tempo_biases)},
        )

    def scoring_fingerprint(self) -> str:
        """Hash of every setting that changes pair scores."""
        return self._fingerprint(_SCORING_GROUPS)
