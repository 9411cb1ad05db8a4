import librosa
import numpy as np
import pytest

from coverfuse.audio import AudioClip
from coverfuse.config import HpcpParams, MfccParams
from coverfuse.errors import ClipTooShort
from coverfuse.features import (
    FeatureKind,
    FeatureMatrix,
    compute_hpcp,
    compute_mfcc,
    lifter,
    log_mel_energies,
    mel_energies,
)

SR = 22050


def tones(*freqs, seconds=1.0, amplitude=0.5, sr=SR):
    t = np.arange(int(seconds * sr)) / sr
    return sum(amplitude * np.sin(2 * np.pi * f * t) for f in freqs)


def sine(freq, seconds=1.0, sr=SR):
    return AudioClip(tones(freq, seconds=seconds, sr=sr), sr)


class TestMfcc:
    def test_shape_and_frame_count(self, rng):
        clip = AudioClip(0.1 * rng.standard_normal(2 * SR), SR)
        mfcc = compute_mfcc(clip, MfccParams())
        window = MfccParams().window_samples(SR)
        assert window == 11025
        assert mfcc.frames.shape == (1 + (2 * SR - window) // 512, 20)
        assert mfcc.kind == FeatureKind.MFCC
        assert np.all(np.isfinite(mfcc.frames))

    def test_clip_shorter_than_window(self):
        with pytest.raises(ClipTooShort):
            compute_mfcc(AudioClip(np.ones(1000) * 0.1, SR), MfccParams())

    def test_silence_gives_identical_frames(self):
        frames = compute_mfcc(AudioClip(np.zeros(SR), SR), MfccParams()).frames
        assert np.all(np.isfinite(frames))
        np.testing.assert_array_equal(frames, np.broadcast_to(frames[0], frames.shape))

    @pytest.mark.parametrize("gain", [0.01, 0.5, 3.0])
    @pytest.mark.parametrize("source", ["tone", "noise"])
    def test_gain_only_moves_c0(self, rng, source, gain):
        if source == "tone":
            samples = 0.3 * tones(440.0, seconds=2.0, amplitude=1.0)
        else:
            samples = 0.1 * rng.standard_normal(2 * SR)
        params = MfccParams()
        base = compute_mfcc(AudioClip(samples, SR), params).frames
        scaled = compute_mfcc(AudioClip(gain * samples, SR), params).frames
        np.testing.assert_allclose(scaled[:, 1:], base[:, 1:], rtol=0, atol=1e-6)
        # an ortho DCT maps a constant log offset onto c_0 alone
        offset = 2.0 * np.log(gain) * np.sqrt(params.n_mels)
        np.testing.assert_allclose(scaled[:, 0] - base[:, 0], offset, rtol=0, atol=1e-6)

    def test_silent_frames_use_absolute_floor(self):
        energies = np.array([[0.0, 0.0, 0.0], [4.0, 0.0, 1.0]])
        logs = log_mel_energies(energies)
        np.testing.assert_allclose(logs[0], np.log(1e-10))
        np.testing.assert_allclose(logs[1], [np.log(4.0), np.log(4e-10), 0.0])

    def test_deterministic(self, rng):
        clip = AudioClip(0.2 * rng.standard_normal(2 * SR), SR)
        np.testing.assert_array_equal(compute_mfcc(clip, MfccParams()).frames,
                                      compute_mfcc(clip, MfccParams()).frames)

    def test_tone_energy_in_matching_band(self):
        params = MfccParams()
        energy = mel_energies(sine(440.0), params).mean(axis=0)
        centers = librosa.mel_frequencies(params.n_mels + 2, fmin=params.fmin, fmax=params.fmax)[1:-1]
        spacing = np.diff(centers)
        band = int(np.argmax(energy))
        assert abs(centers[band] - 440.0) <= spacing[band]
        assert np.sort(energy)[-2:].sum() > 0.95 * energy.sum()

    def test_lifter(self, rng):
        cepstra = rng.standard_normal((5, 20))
        np.testing.assert_array_equal(lifter(cepstra, 0.0), cepstra)
        out = lifter(cepstra, 0.6)
        np.testing.assert_array_equal(out[:, 0], cepstra[:, 0])
        np.testing.assert_allclose(out[:, 3], cepstra[:, 3] * 3 ** 0.6)

    def test_timbre_differs(self):
        params = MfccParams()
        low = compute_mfcc(sine(200.0), params).frames.mean(axis=0)
        high = compute_mfcc(sine(3000.0), params).frames.mean(axis=0)
        assert np.linalg.norm(low - high) > 1.0


class TestHpcp:
    @pytest.mark.parametrize("freq,pitch_class", [(440.0, 9), (261.63, 0), (392.0, 7)])
    def test_pure_tone_peak(self, freq, pitch_class):
        hpcp = compute_hpcp(sine(freq), HpcpParams())
        assert hpcp.kind == FeatureKind.HPCP
        profile = hpcp.frames.mean(axis=0)
        assert int(np.argmax(profile)) == pitch_class

    def test_a440_wins_every_voiced_frame(self):
        frames = compute_hpcp(sine(440.0, seconds=2.0), HpcpParams()).frames
        voiced = frames[frames.max(axis=1) > 0]
        assert len(voiced) == len(frames)
        assert np.all(np.argmax(voiced, axis=1) == 9)

    def test_major_triad(self):
        clip = AudioClip(tones(261.63, 329.63, 392.0, seconds=2.0, amplitude=0.3), SR)
        frames = compute_hpcp(clip, HpcpParams()).frames
        for frame in frames:
            assert set(np.argsort(frame)[-3:]) == {0, 4, 7}

    def test_pitch_shift_moves_argmax(self):
        a = compute_hpcp(sine(440.0, seconds=2.0), HpcpParams()).frames
        c = compute_hpcp(sine(440.0 * 2 ** (3 / 12), seconds=2.0), HpcpParams()).frames
        voiced = (a.max(axis=1) > 0) & (c.max(axis=1) > 0)
        moved = (np.argmax(a, axis=1) + 3) % 12 == np.argmax(c, axis=1)
        assert moved[voiced].mean() >= 0.9

    def test_deterministic(self, rng):
        clip = AudioClip(0.2 * rng.standard_normal(SR), SR)
        np.testing.assert_array_equal(compute_hpcp(clip, HpcpParams()).frames,
                                      compute_hpcp(clip, HpcpParams()).frames)

    def test_unit_max_and_nonnegative(self, rng):
        clip = AudioClip(0.2 * rng.standard_normal(SR), SR)
        frames = compute_hpcp(clip, HpcpParams()).frames
        assert frames.shape[1] == 12
        assert np.all(frames >= 0)
        np.testing.assert_allclose(frames.max(axis=1), 1.0)

    def test_silence_gives_zero_frames(self):
        frames = compute_hpcp(AudioClip(np.zeros(SR), SR), HpcpParams()).frames
        assert not np.any(frames)

    def test_transposed_tone_rolls_profile(self):
        a = compute_hpcp(sine(440.0), HpcpParams()).frames.mean(axis=0)
        c = compute_hpcp(sine(440.0 * 2 ** (3 / 12)), HpcpParams()).frames.mean(axis=0)
        np.testing.assert_allclose(np.roll(a, 3), c, atol=0.05)

    def test_clip_shorter_than_window(self):
        with pytest.raises(ClipTooShort):
            compute_hpcp(AudioClip(np.ones(100) * 0.1, SR), HpcpParams())


class TestFeatureMatrix:
    def test_frame_times(self):
        m = FeatureMatrix(np.zeros((4, 3)), hop=512, window=1024, kind=FeatureKind.MFCC, sample_rate=512)
        np.testing.assert_allclose(m.frame_starts(), [0.0, 1.0, 2.0, 3.0])
        np.testing.assert_allclose(m.frame_centers(), [1.0, 2.0, 3.0, 4.0])

    def test_hpcp_validation(self):
        with pytest.raises(ValueError):
            FeatureMatrix(-np.ones((2, 12)), 512, 1024, FeatureKind.HPCP, 22050)
        with pytest.raises(ValueError):
            FeatureMatrix(np.ones((2, 11)), 512, 1024, FeatureKind.HPCP, 22050)
