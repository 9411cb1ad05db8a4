"""
Beat tracking for coverfuse.

librosa's dynamic-programming tracker run with an explicit tempo bias. The
same song is tracked at several biases (60/120/180 bpm by default) because the
tracker may lock onto any level of the rhythmic hierarchy; the pipeline then
compares all bias combinations between two songs.
"""

import logging
from dataclasses import dataclass

import librosa
import numpy as np

from .audio import AudioClip
from .config import BeatParams
from .constants import MIN_BEAT_CLIP_SECONDS
from .errors import ClipTooShort

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BeatTrack:
    """Beat onset times (seconds) found with one tempo bias."""

    onsets: np.ndarray
    tempo_bias: float
    period_estimate: float
    fallback: bool = False  # True when the onset envelope was flat (NoOnsets)

    def __post_init__(self):
        if self.onsets.ndim != 1:
            raise ValueError("onsets must be 1-D")
        if self.onsets.size and self.onsets[0] < 0:
            raise ValueError("onsets must be >= 0")
        if np.any(np.diff(self.onsets) <= 0):
            raise ValueError("onsets must be strictly increasing")

    @property
    def n_intervals(self) -> int:
        return max(0, self.onsets.size - 1)


def onset_envelope(clip: AudioClip, params: BeatParams) -> np.ndarray:
    """Half-wave-rectified mel-spectral flux, one value per hop."""
    return librosa.onset.onset_strength(
        y=clip.samples.astype(np.float32), sr=clip.sample_rate, hop_length=params.hop
    ).astype(np.float64)


def estimate_tempo(envelope: np.ndarray, sample_rate: int, hop: int, tempo_bias: float,
                   prior_octaves: float) -> float:
    """
    Global tempo in bpm.

    Autocorrelation tempogram of the envelope weighted by a log-normal tempo
    prior centered on ``tempo_bias`` with ``prior_octaves`` spread.
    """
    tempo = librosa.feature.tempo(
        onset_envelope=envelope, sr=sample_rate, hop_length=hop,
        start_bpm=tempo_bias, std_bpm=prior_octaves,
    )
    bpm = float(np.atleast_1d(tempo)[0])
    return bpm if bpm > 0 else float(tempo_bias)


def _uniform_grid(duration: float, tempo_bias: float) -> np.ndarray:
    step = 60.0 / tempo_bias
    grid = np.arange(0.0, duration + step, step)
    return grid[grid <= duration + 1e-12]


def track_beats(clip: AudioClip, tempo_bias: float, params: BeatParams = BeatParams()) -> BeatTrack:
    """
    Track beats with the given tempo bias (bpm).

    The tempo is estimated under a prior centered on the bias, then librosa's
    dynamic-programming tracker places beats at that tempo. A flat onset
    envelope (silence, drones) gives a uniform grid at the bias tempo with
    ``fallback=True`` instead of raising.

    Raises:
        ClipTooShort: the clip is shorter than 2 seconds
    """
    if clip.duration < MIN_BEAT_CLIP_SECONDS:
        raise ClipTooShort(f"beat tracking needs >= {MIN_BEAT_CLIP_SECONDS} s, got {clip.duration:.2f} s")

    envelope = onset_envelope(clip, params)

    if not np.any(envelope > 0) or np.ptp(envelope) == 0:
        logger.warning(f"Flat onset envelope at bias {tempo_bias} bpm; using a uniform beat grid")
        return BeatTrack(
            onsets=_uniform_grid(clip.duration, tempo_bias),
            tempo_bias=tempo_bias,
            period_estimate=60.0 / tempo_bias,
            fallback=True,
        )

    bpm = estimate_tempo(envelope, clip.sample_rate, params.hop, tempo_bias, params.prior_octaves)
    _, frames = librosa.beat.beat_track(
        onset_envelope=envelope, sr=clip.sample_rate, hop_length=params.hop,
        bpm=bpm, tightness=params.tightness, units="frames",
    )
    onsets = librosa.frames_to_time(np.unique(frames), sr=clip.sample_rate, hop_length=params.hop)
    onsets = onsets[(onsets >= 0) & (onsets <= clip.duration)]
    period_seconds = 60.0 / bpm

    if onsets.size < 2 and clip.duration > 2.0 * period_seconds:
        logger.warning(f"Tracker found {onsets.size} beat(s) at bias {tempo_bias} bpm; using a uniform grid")
        return BeatTrack(_uniform_grid(clip.duration, bpm), tempo_bias, period_seconds, fallback=True)

    logger.debug(f"Bias {tempo_bias} bpm: tempo {bpm:.1f} bpm, {onsets.size} beats")
    return BeatTrack(onsets=onsets, tempo_bias=tempo_bias, period_estimate=period_seconds)
