"""
Audio loading for coverfuse.
Decodes a file into a mono AudioClip at the requested sample rate.
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import soundfile as sf
from scipy.signal import firwin, resample_poly

from .constants import LIBROSA_FORMATS, NATIVE_FORMATS, RESAMPLER_KAISER_BETA, RESAMPLER_TAPS
from .errors import CorruptFile, EmptyAudio, UnsupportedFormat

logger = logging.getLogger(__name__)

# Extension (lowercase, with dot) -> callable(path) -> (samples, sample_rate).
# Used for formats libsndfile cannot open (mp3, m4a, ...).
Decoder = Callable[[str], Tuple[np.ndarray, int]]
_EXTERNAL_DECODERS: Dict[str, Decoder] = {}


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono audio buffer. Samples are float64 in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise EmptyAudio("audio clip has no samples")
        if not np.all(np.isfinite(self.samples)):
            raise CorruptFile("audio clip contains non-finite samples")

    @property
    def duration(self) -> float:
        return self.samples.size / float(self.sample_rate)

    def __len__(self) -> int:
        return self.samples.size


def register_decoder(extension: str, decoder: Decoder):
    """Register an external decoder for a file extension such as '.mp3'."""
    _EXTERNAL_DECODERS[extension.lower()] = decoder


def librosa_decoder(path: str) -> Tuple[np.ndarray, int]:
    """External decode hook backed by librosa/audioread, native rate, channels kept."""
    import librosa

    samples, sr = librosa.load(path, sr=None, mono=False)
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 2:
        samples = samples.T  # librosa returns (channels, time)
    return samples, int(sr)


def resample(samples: np.ndarray, source_rate: int, target_rate: int) -> np.ndarray:
    """
    Band-limited resampling with a Kaiser-windowed sinc filter.

    The filter has RESAMPLER_TAPS taps per polyphase branch and cuts off at the
    lower of the two Nyquist frequencies.
    """
    if source_rate == target_rate:
        return np.asarray(samples, dtype=np.float64)
    ratio = Fraction(int(target_rate), int(source_rate))
    up, down = ratio.numerator, ratio.denominator
    max_rate = max(up, down)
    taps = firwin(RESAMPLER_TAPS * max_rate + 1, 1.0 / max_rate,
                  window=("kaiser", RESAMPLER_KAISER_BETA))
    return resample_poly(np.asarray(samples, dtype=np.float64), up, down, window=taps)


def _decode(path: Path) -> Tuple[np.ndarray, int]:
    """Decode to (samples[time, channels], sample_rate)."""
    ext = path.suffix.lower()
    try:
        info = sf.info(str(path))
        native_error = None if info.format in NATIVE_FORMATS else f"container {info.format}"
    except Exception as e:
        native_error = str(e)

    if native_error is not None:
        decoder = _EXTERNAL_DECODERS.get(ext)
        if decoder is not None:
            try:
                samples, sr = decoder(str(path))
            except Exception as e:
                raise CorruptFile(f"{path}: external decoder failed: {e}") from e
            return np.atleast_2d(np.asarray(samples, dtype=np.float64).T).T, int(sr)
        if ext in (".wav", ".wave", ".flac", ".aif", ".aiff", ".ogg"):
            raise CorruptFile(f"{path}: {native_error}")
        raise UnsupportedFormat(f"{path}: no decoder for '{ext or path.name}' ({native_error})")

    try:
        samples, sr = sf.read(str(path), dtype="float64", always_2d=True)
    except Exception as e:
        raise CorruptFile(f"{path}: {e}") from e
    return samples, int(sr)


def load_audio(path, target_rate: int) -> AudioClip:
    """
    Load an audio file as a mono clip at ``target_rate``.

    Channels are averaged; the rate is converted with ``resample``.
    Identical input bytes always give identical output.

    Raises:
        UnsupportedFormat: no decoder handles the file
        CorruptFile: decoding failed or produced non-finite samples
        EmptyAudio: the file holds no samples
    """
    path = Path(path)
    if not path.exists():
        raise CorruptFile(f"{path}: file not found")

    samples, sr = _decode(path)
    if samples.size == 0:
        raise EmptyAudio(f"{path}: no audio samples")

    mono = samples.mean(axis=1) if samples.shape[1] > 1 else samples[:, 0]
    if not np.all(np.isfinite(mono)):
        raise CorruptFile(f"{path}: non-finite samples")

    mono = resample(mono, sr, target_rate)
    peak = np.max(np.abs(mono))
    if peak > 1.0:
        # float WAVs and resampler overshoot may leave [-1, 1]
        logger.debug(f"{path.name}: clipping peak amplitude {peak:.4f} to 1.0")
        mono = np.clip(mono, -1.0, 1.0)

    logger.debug(f"Loaded {path.name}: {sr} Hz -> {target_rate} Hz, {mono.size} samples")
    return AudioClip(np.ascontiguousarray(mono), int(target_rate))


def clip_from_array(samples, sample_rate: int, target_rate: Optional[int] = None) -> AudioClip:
    """Wrap an in-memory array (mono or [time, channels]) as an AudioClip."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr.mean(axis=1)
    if target_rate is not None and target_rate != sample_rate:
        arr = resample(arr, sample_rate, target_rate)
        sample_rate = target_rate
    return AudioClip(arr, int(sample_rate))


for _ext in LIBROSA_FORMATS:
    register_decoder(_ext, librosa_decoder)
