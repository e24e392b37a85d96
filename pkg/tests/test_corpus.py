import numpy as np
import pytest

from avphon import io
from avphon.corpus import Corpus
from avphon.errors import ConfigError, DataError


def make_corpus(root, mode="waveform", splits=None):
    root.mkdir(parents=True, exist_ok=True)
    (root / "corpus.ini").write_text(
        f"[corpus]\nsample_rate = 16000\nfps = 50\nmouth_top = 2\nmouth_left = 3\nmode = {mode}\n")
    io.write_tsv(root / "class_map.tsv", ["phoneme_label", "class"],
                 [{"phoneme_label": "a", "class": "vowel"}, {"phoneme_label": "i", "class": "vowel"}])
    (root / "splits").mkdir(exist_ok=True)
    for name, ids in (splits or {"train": ["u1"], "test": ["u2"]}).items():
        (root / "splits" / f"{name}.txt").write_text("".join(i + "\n" for i in ids))
    return root


def test_missing_ini(tmp_path):
    with pytest.raises(DataError, match="corpus.ini"):
        Corpus(tmp_path)


def test_bad_mode(tmp_path):
    make_corpus(tmp_path, mode="video")
    with pytest.raises(ConfigError, match="mode"):
        Corpus(tmp_path)


def test_overlapping_splits(tmp_path):
    make_corpus(tmp_path, splits={"train": ["u1", "u2"], "test": ["u2"]})
    with pytest.raises(DataError, match="u2"):
        Corpus(tmp_path)


def test_missing_split(tmp_path):
    corpus = Corpus(make_corpus(tmp_path))
    assert corpus.utterances("train") == ["u1"]
    with pytest.raises(DataError, match="pretrain"):
        corpus.utterances("pretrain")


def test_sample_rate_mismatch(tmp_path):
    corpus = Corpus(make_corpus(tmp_path))
    io.write_wav(tmp_path / "audio" / "u1.wav", np.zeros(800), 8000)
    with pytest.raises(DataError, match="sample rate"):
        corpus.load_audio("u1")


def test_clip_without_manifest_uses_fps(tmp_path):
    corpus = Corpus(make_corpus(tmp_path))
    d = tmp_path / "frames" / "u1"
    d.mkdir(parents=True)
    for i in range(3):
        img = np.full((110, 160), i * 10, dtype=np.uint8)
        img[2, 3] = 255
        io.write_pgm(d / f"{i:06d}.pgm", img)
    clip = corpus.load_clip("u1")
    np.testing.assert_allclose(clip.timestamps, [0, 0.02, 0.04])
    assert clip.frames.shape == (3, 100, 150)
    assert clip.frames[0, 0, 0] == 255 and clip.frames[2, 1, 1] == 20


def test_missing_frame(tmp_path):
    corpus = Corpus(make_corpus(tmp_path))
    d = tmp_path / "frames" / "u1"
    d.mkdir(parents=True)
    io.write_tsv(d / "manifest.tsv", ["frame_index", "timestamp_s"],
                 [{"frame_index": 0, "timestamp_s": 0.0}])
    with pytest.raises(DataError, match="frame 0"):
        corpus.load_clip("u1")


def test_alignment_tokens(tmp_path):
    corpus = Corpus(make_corpus(tmp_path))
    io.write_tsv(tmp_path / "alignments" / "u2.tsv", ["start_s", "end_s", "phoneme_label", "word", "speaker"],
                 [{"start_s": 0.0, "end_s": 0.1, "phoneme_label": "a", "word": "w", "speaker": "s"},
                  {"start_s": 0.1, "end_s": 0.2, "phoneme_label": "i", "word": "w", "speaker": "s"}])
    toks = corpus.load_alignment("u2")
    assert [t.label for t in toks] == ["a", "i"]
    assert toks[0].context == ("#", "i") and toks[1].speaker == "s"
