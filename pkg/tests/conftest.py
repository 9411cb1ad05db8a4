"""Shared fixtures: seeded randomness, small configs and synthetic songs."""

import logging

import numpy as np
import pytest
import soundfile as sf

import coverfuse.main as main_module
from coverfuse.beats import BeatTrack
from coverfuse.config import BlockConfig, Config, FusionParams
from coverfuse.features import FeatureKind, FeatureMatrix
from coverfuse.pipeline import BiasFeatures, SongFeatures

SR = 22050
MFCC_HOP = 512
MFCC_WINDOW = 11025
HPCP_HOP = 2048
HPCP_WINDOW = 4096
BEAT = 0.5


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def fast_config():
    """Short blocks and small neighborhoods so pair scoring stays fast."""
    return Config(
        blocks=BlockConfig(B=4, frames_per_block=20, d=8),
        fusion=FusionParams(kappa=0.2, knn=5),
        sample_rate=SR,
        tempo_biases=(60, 120, 180),
    )


def click_track(bpm=120.0, seconds=8.0, sr=SR, pitch=None):
    """Decaying noise bursts on every beat, optionally over a steady tone."""
    rng = np.random.default_rng(7)
    out = np.zeros(int(seconds * sr))
    burst = rng.standard_normal(int(0.03 * sr)) * np.exp(-np.arange(int(0.03 * sr)) / (0.005 * sr))
    for start in np.arange(0.0, seconds, 60.0 / bpm):
        i = int(start * sr)
        end = min(out.size, i + burst.size)
        out[i:end] += burst[:end - i]
    if pitch is not None:
        out += 0.3 * np.sin(2.0 * np.pi * pitch * np.arange(out.size) / sr)
    return 0.9 * out / np.max(np.abs(out))


def write_wav(path, samples, sr=SR):
    sf.write(str(path), samples, sr, subtype="PCM_16")
    return path


def uniform_beats(n_beats, bias=120.0, beat=BEAT):
    return BeatTrack(onsets=np.arange(n_beats + 1) * beat, tempo_bias=bias, period_estimate=beat)


def random_frames(rng, n_beats, beat=BEAT):
    """MFCC and HPCP frames covering ``n_beats`` beats plus a second of slack."""
    seconds = n_beats * beat + 1.0
    mfcc = rng.normal(size=(int(seconds * SR / MFCC_HOP), 20))
    hpcp = rng.random((int(seconds * SR / HPCP_HOP), 12))
    return mfcc, hpcp


def feature_song(song_id, mfcc, hpcp, n_beats, clique_id=None, biases=(120.0,)):
    """SongFeatures straight from frame arrays, with uniform beat grids."""
    return SongFeatures(
        song_id=song_id,
        mfcc=FeatureMatrix(mfcc, MFCC_HOP, MFCC_WINDOW, FeatureKind.MFCC, SR),
        hpcp=FeatureMatrix(hpcp, HPCP_HOP, HPCP_WINDOW, FeatureKind.HPCP, SR),
        biases=[BiasFeatures(b, uniform_beats(n_beats, b)) for b in biases],
        metadata={"clique_id": clique_id} if clique_id else {},
    )


@pytest.fixture
def make_song(rng):
    """Random song factory; ``cover_of`` perturbs another song's frames and transposes its HPCP."""

    def make(song_id, n_beats=16, clique_id=None, cover_of=None, transpose=0, noise=0.1):
        if cover_of is None:
            mfcc, hpcp = random_frames(rng, n_beats)
        else:
            mfcc = cover_of.mfcc.frames + noise * rng.normal(size=cover_of.mfcc.frames.shape)
            hpcp = np.roll(cover_of.hpcp.frames, transpose, axis=1)
            n_beats = cover_of.biases[0].beats.n_intervals
        return feature_song(song_id, mfcc, hpcp, n_beats, clique_id)

    return make


@pytest.fixture(autouse=True)
def _reset_logging():
    """Drop the handlers main.setup_logging installs on the root logger."""
    yield
    root = logging.getLogger()
    while main_module._handlers:
        handler = main_module._handlers.pop()
        root.removeHandler(handler)
        handler.close()
    root.setLevel(logging.WARNING)
