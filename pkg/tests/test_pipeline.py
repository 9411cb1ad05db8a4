import json

import numpy as np
import pytest

from conftest import SR, click_track, feature_song, uniform_beats, write_wav
from coverfuse.cache import FeatureCache, read_container, write_container
from coverfuse.constants import CHECKPOINT_FILENAME, EXTRACT_ERRORS_FILENAME
from coverfuse.errors import ManifestError, MissingFeatures
from coverfuse.pipeline import (
    BiasFeatures,
    PairDump,
    PairScore,
    ScoreMatrices,
    SongFeatures,
    extract_features,
    load_manifest,
    load_song,
    score_corpus,
    score_pair,
)

CHANNELS = ("mfcc", "ssm", "hpcp", "early", "or")


def write_manifest(path, entries):
    path.write_text(json.dumps(entries))
    return path


class TestManifest:
    def test_relative_paths_and_fields(self, tmp_path):
        manifest = write_manifest(tmp_path / "m.json", [
            {"song_id": "a", "path": "a.wav", "clique_id": "x", "set": "A"},
            {"song_id": "b", "path": str(tmp_path / "b.wav"), "clique_id": "x", "title": "B"},
        ])
        entries = load_manifest(manifest)
        assert entries[0].path == tmp_path / "a.wav"
        assert entries[0].set == "A"
        assert entries[1].title == "B"
        assert entries[1].metadata()["clique_id"] == "x"

    @pytest.mark.parametrize("entries", [
        [{"song_id": "a", "path": "a.wav"}],
        [{"song_id": "a", "path": "a.wav", "clique_id": "x"}, {"song_id": "a", "path": "b.wav", "clique_id": "y"}],
        [{"song_id": "a", "path": "a.wav", "clique_id": "x", "set": "C"}],
        {"song_id": "a"},
    ])
    def test_invalid(self, tmp_path, entries):
        with pytest.raises(ManifestError):
            load_manifest(write_manifest(tmp_path / "m.json", entries))

    def test_unreadable(self, tmp_path):
        with pytest.raises(ManifestError):
            load_manifest(tmp_path / "absent.json")


class TestSongFeatures:
    def test_container_round_trip(self, make_song):
        song = make_song("s1", clique_id="c1")
        back = SongFeatures.from_container(song.to_container())
        assert back.song_id == "s1"
        assert back.clique_id == "c1"
        np.testing.assert_array_equal(back.mfcc.frames, song.mfcc.frames)
        np.testing.assert_array_equal(back.hpcp.frames, song.hpcp.frames)
        assert back.mfcc.hop == song.mfcc.hop and back.hpcp.window == song.hpcp.window
        np.testing.assert_array_equal(back.tracks()[0].onsets, song.tracks()[0].onsets)

    def test_failed_bias_is_kept(self, make_song):
        song = make_song("s1")
        song.biases.append(BiasFeatures(180.0, None, "ClipTooShort: too short"))
        back = SongFeatures.from_container(song.to_container())
        assert len(back.biases) == 2
        assert back.biases[1].failed
        assert len(back.tracks()) == 1


class TestExtract:
    def _corpus(self, tmp_path):
        write_wav(tmp_path / "a.wav", click_track(120.0, 6.0, pitch=440.0))
        write_wav(tmp_path / "b.wav", click_track(100.0, 6.0, pitch=330.0))
        (tmp_path / "bad.wav").write_bytes(b"definitely not audio")
        return load_manifest(write_manifest(tmp_path / "m.json", [
            {"song_id": "a", "path": "a.wav", "clique_id": "x", "set": "A"},
            {"song_id": "b", "path": "b.wav", "clique_id": "x", "set": "B"},
            {"song_id": "bad", "path": "bad.wav", "clique_id": "y"},
            {"song_id": "gone", "path": "gone.wav", "clique_id": "y"},
        ]))

    def test_extract_then_skip(self, tmp_path, fast_config):
        entries = self._corpus(tmp_path)
        out = tmp_path / "cache"
        report = extract_features(entries, out, fast_config, quiet=True)
        assert sorted(report.written) == ["a", "b"]
        assert set(report.failed) == {"bad", "gone"}
        assert report.failed["bad"].startswith("CorruptFile")
        errors = json.loads((out / EXTRACT_ERRORS_FILENAME).read_text())
        assert set(errors) == {"bad", "gone"}

        song = load_song(FeatureCache(out), "a")
        assert song.metadata["clique_id"] == "x"
        assert [b.tempo_bias for b in song.biases] == [60, 120, 180]
        assert song.mfcc.sample_rate == SR

        before = (out / "a.cfse").read_bytes()
        again = extract_features(entries, out, fast_config, quiet=True)
        assert sorted(again.skipped) == ["a", "b"]
        assert again.written == []
        assert (out / "a.cfse").read_bytes() == before

    def test_settings_change_reextracts(self, tmp_path, fast_config):
        entries = self._corpus(tmp_path)[:1]
        out = tmp_path / "cache"
        extract_features(entries, out, fast_config, quiet=True)
        changed = fast_config.with_overrides(tempo_biases=(120,))
        report = extract_features(entries, out, changed, quiet=True)
        assert report.written == ["a"]
        assert len(load_song(FeatureCache(out), "a").biases) == 1

    def test_precomputed_features(self, tmp_path, fast_config, make_song):
        write_container(tmp_path / "pre.cfse", make_song("whatever").to_container())
        entries = load_manifest(write_manifest(tmp_path / "m.json", [
            {"song_id": "p", "path": "pre.cfse", "clique_id": "z"},
        ]))
        report = extract_features(entries, tmp_path / "cache", fast_config, quiet=True)
        assert report.written == ["p"]
        song = load_song(FeatureCache(tmp_path / "cache"), "p")
        assert song.song_id == "p" and song.clique_id == "z"


class TestScorePair:
    def test_self_beats_unrelated(self, make_song, fast_config):
        cfg = fast_config.with_overrides(channels=CHANNELS)
        a, b = make_song("a"), make_song("b")
        same = score_pair(a, a, cfg)
        other = score_pair(a, b, cfg)
        for c in CHANNELS:
            assert same.scores[c] >= other.scores[c]
        # 16 beats, 4-beat blocks: a perfect diagonal of 13 blocks
        assert same.scores["mfcc"] == 13.0
        assert same.winners["mfcc"] == (120.0, 120.0)

    def test_cover_beats_unrelated(self, make_song, fast_config):
        a = make_song("a")
        cover = make_song("a2", cover_of=a, transpose=5)
        b = make_song("b")
        with_cover = score_pair(a, cover, fast_config)
        with_other = score_pair(a, b, fast_config)
        for c in ("mfcc", "hpcp", "early"):
            assert with_cover.scores[c] > with_other.scores[c]

    def test_symmetric(self, make_song, fast_config):
        cfg = fast_config.with_overrides(channels=CHANNELS)
        a, b = make_song("a"), make_song("b", n_beats=20)
        ab, ba = score_pair(a, b, cfg), score_pair(b, a, cfg)
        assert (ba.song_a, ba.song_b) == ("b", "a")
        for c in CHANNELS:
            assert ab.scores[c] == ba.scores[c]
            assert ab.winners[c] == ba.winners[c][::-1]

    def test_early_fusion_symmetric_for_covers(self, make_song, fast_config):
        cfg = fast_config.with_overrides(channels=("early",))
        for k, transpose in enumerate((0, 3, 7)):
            a = make_song(f"x{k}")
            cover = make_song(f"w{k}", cover_of=a, transpose=transpose, noise=0.3)
            assert score_pair(a, cover, cfg).scores == score_pair(cover, a, cfg).scores

    def test_dump_records_scoring_order(self, make_song, fast_config):
        dump = PairDump(fusion=True)
        score_pair(make_song("b"), make_song("a"), fast_config, dump)
        assert dump.order == ["a", "b"]

    def test_too_few_beats(self, make_song, fast_config):
        short = make_song("short", n_beats=3)
        pair = score_pair(short, make_song("b"), fast_config)
        assert pair.too_few_beats
        assert all(s == 0.0 for s in pair.scores.values())
        assert all(w is None for w in pair.winners.values())

    def test_zero_hpcp_flagged(self, make_song, fast_config):
        a = make_song("a")
        silent = feature_song("s", a.mfcc.frames, np.zeros_like(a.hpcp.frames), 16)
        assert score_pair(a, silent, fast_config).zero_profile

    def test_best_combination_wins(self, make_song, fast_config):
        a = make_song("a")
        # a second, wrong beat grid at bias 60 only lowers that combination
        a.biases.append(BiasFeatures(60.0, uniform_beats(7, 60.0, beat=1.1)))
        pair = score_pair(a, make_song("a-copy", cover_of=a, noise=0.0), fast_config)
        assert pair.scores["mfcc"] == 13.0
        assert pair.winners["mfcc"] == (120.0, 120.0)

    def test_dump(self, tmp_path, make_song, fast_config):
        a, b = make_song("a"), make_song("b")
        dump = PairDump(csm=True, fusion=True, sw=True)
        pair = score_pair(a, b, fast_config, dump)
        for key in ("csm/mfcc/120x120", "mask/hpcp/120x120", "parent/ssm/120x120",
                    "fused/120x120", "mask/early/120x120", "sw/early/120x120", "path/mfcc/120x120"):
            assert key in dump.tensors
        path = dump.write(tmp_path / "d.cfse", "a", "b", pair)
        container = read_container(path)
        assert container.metadata["pair"]["scores"]["mfcc"] == pair.scores["mfcc"]
        assert container.metadata["combos"][0]["oti"] is not None

    def test_early_fusion_channel_subset(self, make_song, fast_config):
        cfg = fast_config.with_overrides(**{"channels": ("early",), "fusion.early_channels": ("ssm", "hpcp")})
        a = make_song("a")
        dump = PairDump(csm=True, fusion=True)
        pair = score_pair(a, make_song("a2", cover_of=a, transpose=4), cfg, dump)
        assert set(pair.scores) == {"early"}
        assert pair.scores["early"] > 0
        assert "parent/ssm/120x120" in dump.tensors
        assert "parent/mfcc/120x120" not in dump.tensors
        assert not any(key.startswith("csm/mfcc/") for key in dump.tensors)

    def test_pair_score_dict(self):
        pair = PairScore("a", "b", {"mfcc": 3.5}, {"mfcc": (60.0, 120.0)}, zero_profile=True)
        back = PairScore.from_dict(json.loads(json.dumps(pair.to_dict())))
        assert back == pair


class TestScoreCorpus:
    def _cache(self, tmp_path, make_song):
        cache = FeatureCache(tmp_path / "cache")
        a = make_song("a", clique_id="x")
        songs = [a, make_song("a2", clique_id="x", cover_of=a, transpose=2), make_song("b", clique_id="y"),
                 make_song("c", clique_id="z")]
        for k, song in enumerate(songs):
            song.metadata["content_hash"] = f"hash-{k}"
            song.metadata["set"] = "A" if song.song_id == "a" else ("B" if song.song_id == "a2" else None)
            cache.store(song.to_container())
        return cache.directory

    def test_matrices(self, tmp_path, make_song, fast_config):
        cache_dir = self._cache(tmp_path, make_song)
        scores = score_corpus(cache_dir, fast_config, tmp_path / "out", quiet=True)
        assert scores.song_ids == ["a", "a2", "b", "c"]
        assert scores.channels == list(fast_config.channels)
        for m in scores.matrices.values():
            np.testing.assert_array_equal(m, m.T)
            assert not np.any(np.diag(m))
        assert scores.cliques() == ["x", "x", "y", "z"]
        assert scores.sets() == ["A", "B", None, None]

        loaded = ScoreMatrices.load(tmp_path / "out")
        assert loaded.song_ids == scores.song_ids
        for c in scores.channels:
            np.testing.assert_array_equal(loaded.matrices[c], scores.matrices[c])
        lines = (tmp_path / "out" / "scores.csv").read_text().splitlines()
        assert lines[0] == "song_i,song_j,channel,score"
        assert len(lines) == 1 + 6 * len(scores.channels)

    def test_resume_after_interruption(self, tmp_path, make_song, fast_config):
        cache_dir = self._cache(tmp_path, make_song)
        out = tmp_path / "out"
        first = score_corpus(cache_dir, fast_config, out, quiet=True)

        checkpoint = out / CHECKPOINT_FILENAME
        lines = checkpoint.read_text().splitlines()
        assert len(lines) == 1 + 6
        # keep the header and two records, then a half-written line
        checkpoint.write_text("\n".join(lines[:3]) + "\n" + lines[3][:20])
        (out / "scores.cfse").unlink()

        resumed = score_corpus(cache_dir, fast_config, out, quiet=True)
        for c in first.channels:
            np.testing.assert_array_equal(resumed.matrices[c], first.matrices[c])
        assert len(checkpoint.read_text().splitlines()) == 1 + 6

    def test_changed_settings_start_over(self, tmp_path, make_song, fast_config):
        cache_dir = self._cache(tmp_path, make_song)
        out = tmp_path / "out"
        score_corpus(cache_dir, fast_config, out, quiet=True)
        changed = fast_config.with_overrides(**{"fusion.kappa": 0.3})
        score_corpus(cache_dir, changed, out, quiet=True)
        header = json.loads((out / CHECKPOINT_FILENAME).read_text().splitlines()[0])
        assert header["scoring"] == changed.scoring_fingerprint()

    def test_workers_do_not_change_results(self, tmp_path, make_song, fast_config):
        cache_dir = self._cache(tmp_path, make_song)
        one = score_corpus(cache_dir, fast_config, tmp_path / "one", quiet=True)
        two = score_corpus(cache_dir, fast_config.with_overrides(workers=2), tmp_path / "two", quiet=True)
        for c in one.channels:
            np.testing.assert_array_equal(one.matrices[c], two.matrices[c])

    def test_subset_and_missing(self, tmp_path, make_song, fast_config):
        cache_dir = self._cache(tmp_path, make_song)
        scores = score_corpus(cache_dir, fast_config, tmp_path / "out", song_ids=["b", "a"], quiet=True)
        assert scores.song_ids == ["b", "a"]
        with pytest.raises(MissingFeatures):
            score_corpus(cache_dir, fast_config, tmp_path / "out", song_ids=["a", "nope"], quiet=True)
        with pytest.raises(MissingFeatures):
            score_corpus(cache_dir, fast_config, tmp_path / "out", song_ids=["a"], quiet=True)
