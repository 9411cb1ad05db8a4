"""
Synthetic cover-song corpus.

A clique is one song template: a key, a tempo, a chord progression, a melody
and a drum pattern. Each version renders the template with its own
transposition, tempo factor, timbre and background noise, so the clique
structure is known exactly. Percussive-only cliques carry drums and nothing
pitched.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import soundfile as sf
from scipy.signal import butter, lfilter

from .constants import DEFAULT_SAMPLE_RATE

logger = logging.getLogger(__name__)

MANIFEST_FILENAME = "manifest.json"

# Diatonic chord roots (semitones above the tonic) and whether they are minor
DIATONIC_CHORDS = ((0, False), (2, True), (4, True), (5, False), (7, False), (9, True))
MAJOR_SCALE = (0, 2, 4, 5, 7, 9, 11)
STEPS_PER_BEAT = 4
BEATS_PER_BAR = 4
HARMONICS = 8


@dataclass(frozen=True)
class SongTemplate:
    key: int
    tempo: float
    chords: Tuple[Tuple[int, bool], ...]  # one per bar
    melody: Tuple[int, ...]  # scale-degree offsets in semitones, one per eighth note
    drums: np.ndarray  # 3 x 16 booleans: kick, snare, hat
    percussive_only: bool = False


@dataclass(frozen=True)
class Timbre:
    harmonics: np.ndarray
    attack: float
    release: float
    drum_gain: float
    hat_cutoff: float
    kick_pitch: float


def random_template(rng: np.random.Generator, bars: int, percussive_only: bool = False) -> SongTemplate:
    chords = tuple(DIATONIC_CHORDS[i] for i in rng.integers(0, len(DIATONIC_CHORDS), size=bars))
    chords = ((0, False),) + chords[1:]
    melody = tuple(int(rng.choice(MAJOR_SCALE)) for _ in range(bars * BEATS_PER_BAR * 2))

    steps = STEPS_PER_BEAT * BEATS_PER_BAR
    drums = np.zeros((3, steps), dtype=bool)
    drums[0, 0] = True
    drums[0] |= rng.random(steps) < (0.35 if percussive_only else 0.15)
    drums[1, [4, 12]] = True
    drums[1] |= rng.random(steps) < (0.2 if percussive_only else 0.05)
    drums[2] = rng.random(steps) < rng.uniform(0.3, 0.8)
    return SongTemplate(
        key=int(rng.integers(0, 12)),
        tempo=float(rng.uniform(95.0, 135.0)),
        chords=chords,
        melody=melody,
        drums=drums,
        percussive_only=percussive_only,
    )


def random_timbre(rng: np.random.Generator) -> Timbre:
    rolloff = rng.uniform(0.3, 0.9)
    harmonics = rolloff ** np.arange(HARMONICS) * rng.uniform(0.5, 1.0, size=HARMONICS)
    harmonics[0] = 1.0
    return Timbre(
        harmonics=harmonics,
        attack=float(rng.uniform(0.005, 0.05)),
        release=float(rng.uniform(0.05, 0.2)),
        drum_gain=float(rng.uniform(0.3, 0.8)),
        hat_cutoff=float(rng.uniform(5000.0, 9000.0)),
        kick_pitch=float(rng.uniform(45.0, 70.0)),
    )


# ============================================================================
# Rendering
# ============================================================================

def _filter(signal: np.ndarray, cutoff, kind: str, sample_rate: int) -> np.ndarray:
    nyquist = sample_rate / 2.0
    normalized = np.clip(np.asarray(cutoff, dtype=np.float64) / nyquist, 0.001, 0.99)
    b, a = butter(2, normalized, btype=kind)
    return lfilter(b, a, signal)


def _envelope(n: int, attack: float, release: float, sample_rate: int) -> np.ndarray:
    a = max(1, min(n, int(attack * sample_rate)))
    r = max(1, min(n - a, int(release * sample_rate))) if n > a else 0
    env = np.ones(n)
    env[:a] = np.linspace(0.0, 1.0, a)
    if r:
        env[n - r:] = np.linspace(1.0, 0.0, r)
    return env


def _tone(freq: float, n: int, timbre: Timbre, sample_rate: int) -> np.ndarray:
    t = np.arange(n) / float(sample_rate)
    out = np.zeros(n)
    for h, amp in enumerate(timbre.harmonics, start=1):
        if freq * h >= 0.45 * sample_rate:
            break
        out += amp * np.sin(2.0 * np.pi * freq * h * t)
    return out * _envelope(n, timbre.attack, timbre.release, sample_rate)


def _midi_freq(note: float) -> float:
    return 440.0 * 2.0 ** ((note - 69.0) / 12.0)


def _drum_hits(timbre: Timbre, sample_rate: int, rng: np.random.Generator) -> List[np.ndarray]:
    t = np.arange(int(0.25 * sample_rate)) / float(sample_rate)
    sweep = timbre.kick_pitch * (1.0 + 2.0 * np.exp(-t / 0.03))
    kick = np.sin(2.0 * np.pi * np.cumsum(sweep) / sample_rate) * np.exp(-t / 0.12)
    noise = rng.standard_normal(t.size)
    snare = _filter(noise, [1000.0, 5000.0], "band", sample_rate) * np.exp(-t / 0.08)
    hat = _filter(noise, timbre.hat_cutoff, "high", sample_rate) * np.exp(-t / 0.02)
    return [kick, 0.8 * snare / np.max(np.abs(snare)), 0.4 * hat / np.max(np.abs(hat))]


def _add(signal: np.ndarray, note: np.ndarray, start: int):
    if start >= signal.size:
        return
    end = min(signal.size, start + note.size)
    signal[start:end] += note[:end - start]


def render_song(template: SongTemplate, timbre: Timbre, sample_rate: int = DEFAULT_SAMPLE_RATE,
                transpose: int = 0, tempo_factor: float = 1.0, snr_db: Optional[float] = None,
                rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Render one version of ``template`` as mono float samples in [-0.9, 0.9]."""
    rng = rng if rng is not None else np.random.default_rng(0)
    beat = 60.0 / (template.tempo * tempo_factor)
    bars = len(template.chords)
    total = int((bars * BEATS_PER_BAR * beat + 1.0) * sample_rate)
    pitched = np.zeros(total)
    drums = np.zeros(total)
    key = 48 + template.key + transpose  # tonic in the C3 octave

    if not template.percussive_only:
        bar_len = int(BEATS_PER_BAR * beat * sample_rate)
        for b, (root, minor) in enumerate(template.chords):
            start = int(b * BEATS_PER_BAR * beat * sample_rate)
            for interval in (0, 3 if minor else 4, 7):
                _add(pitched, 0.3 * _tone(_midi_freq(key + root + interval), bar_len, timbre, sample_rate), start)
        eighth = int(0.5 * beat * sample_rate)
        for k, degree in enumerate(template.melody):
            start = int(k * 0.5 * beat * sample_rate)
            _add(pitched, 0.5 * _tone(_midi_freq(key + 24 + degree), eighth, timbre, sample_rate), start)

    hits = _drum_hits(timbre, sample_rate, rng)
    step = beat / STEPS_PER_BEAT
    n_steps = template.drums.shape[1]
    for s in range(bars * BEATS_PER_BAR * STEPS_PER_BEAT):
        for voice, hit in enumerate(hits):
            if template.drums[voice, s % n_steps]:
                _add(drums, hit, int(s * step * sample_rate))

    gain = 1.0 if template.percussive_only else timbre.drum_gain
    mix = pitched + gain * drums
    if snr_db is not None:
        power = np.mean(mix ** 2)
        mix = mix + rng.standard_normal(mix.size) * np.sqrt(power / 10.0 ** (snr_db / 10.0))
    peak = np.max(np.abs(mix))
    return 0.9 * mix / peak if peak > 0 else mix


# ============================================================================
# Corpus
# ============================================================================

def generate_corpus(out_dir, n_cliques: int = 20, covers_per_clique: int = 2, seed: int = 0,
                    sample_rate: int = DEFAULT_SAMPLE_RATE, bars: int = 12,
                    percussive_cliques: int = 0) -> Path:
    """
    Write ``n_cliques * covers_per_clique`` WAV files and a manifest.

    Version 0 of each clique is the original (set A); every other version is
    transposed by 1-5 semitones, played 0.7-1.3 times as fast and re-timbred
    (version 1 is set B). All versions get noise at 20-30 dB SNR. The last
    ``percussive_cliques`` cliques are drums only.

    Returns the manifest path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    manifest = []
    for c in range(n_cliques):
        template = random_template(rng, bars, percussive_only=c >= n_cliques - percussive_cliques)
        for v in range(covers_per_clique):
            if v == 0:
                transpose, factor = 0, 1.0
            else:
                transpose = int(rng.choice([-5, -4, -3, -2, -1, 1, 2, 3, 4, 5]))
                factor = float(rng.uniform(0.7, 1.3))
            samples = render_song(
                template, random_timbre(rng), sample_rate,
                transpose=transpose, tempo_factor=factor,
                snr_db=float(rng.uniform(20.0, 30.0)), rng=rng,
            )
            song_id = f"c{c:02d}_v{v}"
            sf.write(str(out_dir / f"{song_id}.wav"), samples, sample_rate, subtype="PCM_16")
            manifest.append({
                "song_id": song_id,
                "path": f"{song_id}.wav",
                "clique_id": f"c{c:02d}",
                "title": f"synthetic {c:02d}" + (" (drums)" if template.percussive_only else ""),
                "artist": f"version {v}",
                "set": "A" if v == 0 else ("B" if v == 1 else None),
                "transpose": transpose,
                "tempo_factor": factor,
            })
        logger.debug(f"Rendered clique {c + 1}/{n_cliques}")

    path = out_dir / MANIFEST_FILENAME
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    logger.info(f"Wrote {len(manifest)} synthetic songs to {out_dir}")
    return path
