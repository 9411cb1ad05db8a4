"""
Frame-level features for coverfuse: exponentially liftered MFCCs and HPCPs.

Both are pure functions of (clip, params). MFCCs use a long (0.5 s) window so
the log mel energies summarize timbre over a beat-scale neighborhood; HPCPs
fold spectral peaks and their subharmonic interpretations onto 12 pitch
classes.
"""

import enum
import logging
from dataclasses import dataclass

import librosa
import numpy as np
from scipy.fft import dct, rfft
from scipy.signal import find_peaks, get_window

from .audio import AudioClip
from .config import HpcpParams, MfccParams
from .constants import (
    HPCP_BINS,
    LOG_FLOOR,
    MFCC_CHUNK_FRAMES,
    PITCH_CLASS_OF_REFERENCE,
    RELATIVE_MEL_FLOOR,
)
from .errors import ClipTooShort

logger = logging.getLogger(__name__)


class FeatureKind(str, enum.Enum):
    MFCC = "MFCC"
    HPCP = "HPCP"
    ONSET = "ONSET"


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """T x F frame features (rows are time frames)."""

    frames: np.ndarray
    hop: int
    window: int
    kind: FeatureKind
    sample_rate: int

    def __post_init__(self):
        if self.hop <= 0:
            raise ValueError(f"hop must be positive, got {self.hop}")
        if self.frames.ndim != 2:
            raise ValueError("feature frames must be a 2-D array")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("feature frames contain non-finite values")
        if self.kind == FeatureKind.HPCP:
            if self.frames.shape[1] != HPCP_BINS or np.any(self.frames < 0):
                raise ValueError("HPCP frames must be nonnegative with 12 bins")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def frame_starts(self) -> np.ndarray:
        """Start time (seconds) of every frame."""
        return np.arange(self.n_frames) * self.hop / float(self.sample_rate)

    def frame_centers(self) -> np.ndarray:
        """Center time (seconds) of every frame."""
        return (np.arange(self.n_frames) * self.hop + self.window / 2.0) / float(self.sample_rate)


def _frames(samples: np.ndarray, window: int, hop: int) -> np.ndarray:
    """[n_frames, window] strided view; frames lie fully inside the signal."""
    return librosa.util.frame(samples, frame_length=window, hop_length=hop, axis=0)


# ============================================================================
# MFCC
# ============================================================================

def mel_energies(clip: AudioClip, cfg: MfccParams) -> np.ndarray:
    """
    Mel-band energies per frame (T x n_mels), before the log and DCT.

    Power spectra are projected onto the filterbank in chunks so the
    22050-point spectra of a whole song never sit in memory at once.
    """
    window = cfg.window_samples(clip.sample_rate)
    if len(clip) < window:
        raise ClipTooShort(
            f"clip has {len(clip)} samples, MFCC window needs {window}"
        )
    fmax = min(cfg.fmax, clip.sample_rate / 2.0)
    filterbank = librosa.filters.mel(
        sr=clip.sample_rate, n_fft=window, n_mels=cfg.n_mels, fmin=cfg.fmin, fmax=fmax
    )
    taper = get_window("hann", window, fftbins=True)
    frames = _frames(clip.samples, window, cfg.hop)

    energies = np.empty((frames.shape[0], cfg.n_mels))
    for start in range(0, frames.shape[0], MFCC_CHUNK_FRAMES):
        chunk = frames[start:start + MFCC_CHUNK_FRAMES] * taper
        power = np.abs(rfft(chunk, axis=1)) ** 2
        energies[start:start + chunk.shape[0]] = power @ filterbank.T
    return energies


def log_mel_energies(energies: np.ndarray) -> np.ndarray:
    """
    Log of mel energies floored relative to each frame's strongest band, so a
    gain on the signal shifts every band equally. Silent frames get LOG_FLOOR.
    """
    peak = energies.max(axis=1, keepdims=True)
    floor = np.where(peak > 0, RELATIVE_MEL_FLOOR * peak, LOG_FLOOR)
    return np.log(np.maximum(energies, floor))


def lifter(cepstra: np.ndarray, exponent: float) -> np.ndarray:
    """Exponential liftering c'_n = n^exponent * c_n for n >= 1; c_0 kept."""
    out = np.array(cepstra, dtype=np.float64)
    n = np.arange(1, out.shape[1], dtype=np.float64)
    out[:, 1:] *= n ** exponent
    return out


def compute_mfcc(clip: AudioClip, cfg: MfccParams) -> FeatureMatrix:
    """
    Exponentially liftered MFCCs: power spectrum -> mel -> log -> DCT-II -> lifter.

    Raises:
        ClipTooShort: the clip is shorter than one analysis window
    """
    energies = mel_energies(clip, cfg)
    log_mel = log_mel_energies(energies)
    cepstra = dct(log_mel, type=2, axis=1, norm="ortho")[:, :cfg.n_mfcc]
    if cfg.lifter != 0:
        cepstra = lifter(cepstra, cfg.lifter)
    return FeatureMatrix(
        frames=cepstra,
        hop=cfg.hop,
        window=cfg.window_samples(clip.sample_rate),
        kind=FeatureKind.MFCC,
        sample_rate=clip.sample_rate,
    )


# ============================================================================
# HPCP
# ============================================================================

def _spectral_peaks(magnitude: np.ndarray, freqs: np.ndarray, cfg: HpcpParams):
    """
    Local maxima of one magnitude spectrum inside [min_freq, max_freq] that
    rise above the frame's noise floor. Peak positions are refined with
    parabolic interpolation on the dB spectrum.
    """
    top = magnitude.max()
    if top <= 0:
        return np.empty(0), np.empty(0)
    floor = top * 10.0 ** (cfg.peak_floor_db / 20.0)
    idx, _ = find_peaks(magnitude, height=floor)
    idx = idx[(freqs[idx] >= cfg.min_freq) & (freqs[idx] <= cfg.max_freq)]
    if idx.size == 0:
        return np.empty(0), np.empty(0)

    db = 20.0 * np.log10(np.maximum(magnitude, 1e-300))
    left, centre, right = db[idx - 1], db[idx], db[idx + 1]
    denom = left - 2.0 * centre + right
    offset = np.where(denom != 0, 0.5 * (left - right) / np.where(denom != 0, denom, 1.0), 0.0)
    bin_hz = freqs[1] - freqs[0]
    peak_freqs = freqs[idx] + offset * bin_hz
    peak_db = centre - 0.25 * (left - right) * offset
    return peak_freqs, 10.0 ** (peak_db / 20.0)


def _fold_peaks(peak_freqs: np.ndarray, peak_mags: np.ndarray, cfg: HpcpParams) -> np.ndarray:
    """Accumulate one frame's peaks into a 12-bin profile."""
    profile = np.zeros(HPCP_BINS)
    if peak_freqs.size == 0:
        return profile
    half_width = cfg.bin_width / 2.0
    bins = np.arange(HPCP_BINS)
    energy = peak_mags ** 2
    for h in range(1, cfg.harmonics + 1):
        # peak read as the h-th harmonic of a fundamental at f / h
        f0 = peak_freqs / h
        semis = 12.0 * np.log2(f0 / cfg.reference) + PITCH_CLASS_OF_REFERENCE
        # signed circular distance (semitones) from each peak to each bin
        dist = (semis[:, None] - bins[None, :] + 6.0) % 12.0 - 6.0
        inside = np.abs(dist) <= half_width
        weights = np.where(inside, np.cos(0.5 * np.pi * dist / half_width) ** 2, 0.0)
        profile += (cfg.decay ** (h - 1)) * (energy[:, None] * weights).sum(axis=0)
    return profile


def compute_hpcp(clip: AudioClip, cfg: HpcpParams) -> FeatureMatrix:
    """
    Harmonic pitch class profiles, one unit-max 12-vector per frame.

    Raises:
        ClipTooShort: the clip is shorter than one analysis window
    """
    if len(clip) < cfg.window:
        raise ClipTooShort(
            f"clip has {len(clip)} samples, HPCP window needs {cfg.window}"
        )
    frames = _frames(clip.samples, cfg.window, cfg.hop)
    taper = get_window("blackmanharris", cfg.window, fftbins=True)
    freqs = np.fft.rfftfreq(cfg.window, d=1.0 / clip.sample_rate)

    out = np.zeros((frames.shape[0], HPCP_BINS))
    for t, frame in enumerate(frames):
        magnitude = np.abs(rfft(frame * taper))
        profile = _fold_peaks(*_spectral_peaks(magnitude, freqs, cfg), cfg)
        peak = profile.max()
        if peak > 0:
            out[t] = profile / peak
    return FeatureMatrix(
        frames=out,
        hop=cfg.hop,
        window=cfg.window,
        kind=FeatureKind.HPCP,
        sample_rate=clip.sample_rate,
    )
