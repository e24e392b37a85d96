"""On-disk corpus layout.

::

    corpus.ini                  [corpus] sample_rate, fps, mouth_top, mouth_left, mode
    class_map.tsv               phoneme_label, class
    splits/{pretrain,train,test}.txt
    alignments/<utt>.tsv        start_s, end_s, phoneme_label, word, speaker
    audio/<utt>.wav             waveform mode
    frames/<utt>/manifest.tsv   frame_index, timestamp_s (+ NNNNNN.pgm/.png images)
    features/<utt>.audio.feat   feature mode (containers)
    features/<utt>.visual.feat
"""

import configparser
import logging
from pathlib import Path

import numpy as np

from avphon import io
from avphon.abx import read_class_map, tokens_from_alignment
from avphon.audio import AudioSignal
from avphon.errors import ConfigError, DataError
from avphon.features import FeatureSequence
from avphon.visual import MOUTH_SHAPE, VideoClip, crop_mouth, image_to_gray

logger = logging.getLogger(__name__)

SPLITS = ("pretrain", "train", "test")
ALIGNMENT_COLUMNS = ("start_s", "end_s", "phoneme_label", "word", "speaker")
IMAGE_SUFFIXES = (".pgm", ".ppm", ".png", ".bmp")


class Corpus:
    def __init__(self, root):
        self.root = Path(root)
        ini = self.root / "corpus.ini"
        if not ini.is_file():
            raise DataError(f"{ini} not found")
        cp = configparser.ConfigParser()
        cp.read(ini, encoding="utf-8")
        if "corpus" not in cp:
            raise ConfigError(f"{ini}: missing [corpus] section")
        sec = cp["corpus"]
        try:
            self.sample_rate = sec.getint("sample_rate", 16000)
            self.fps = sec.getfloat("fps", 60.0)
            self.mouth_top = sec.getint("mouth_top", 0)
            self.mouth_left = sec.getint("mouth_left", 0)
        except ValueError as exc:
            raise ConfigError(f"{ini}: {exc}") from None
        self.mode = sec.get("mode", "waveform")
        if self.mode not in ("waveform", "feature"):
            raise ConfigError(f"{ini}: mode must be waveform or feature, got {self.mode!r}")
        self.class_map = read_class_map(self.root / "class_map.tsv")
        self.splits = {}
        for name in SPLITS:
            path = self.root / "splits" / f"{name}.txt"
            if path.is_file():
                ids = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines()]
                self.splits[name] = [u for u in ids if u]
        seen = {}
        for name, ids in self.splits.items():
            for u in ids:
                if u in seen:
                    raise DataError(f"utterance {u} is in both the {seen[u]} and {name} splits")
                seen[u] = name

    def utterances(self, split):
        if split not in self.splits:
            raise DataError(f"corpus {self.root} has no {split} split")
        return list(self.splits[split])

    def load_audio(self, utt):
        samples, sr = io.read_wav(self.root / "audio" / f"{utt}.wav")
        if sr != self.sample_rate:
            raise DataError(f"utterance {utt}: sample rate {sr} differs from corpus rate "
                            f"{self.sample_rate}")
        return AudioSignal(samples, sr)

    def load_clip(self, utt):
        """Grayscale mouth crops with their timestamps."""
        d = self.root / "frames" / utt
        manifest = d / "manifest.tsv"
        if manifest.is_file():
            rows = io.read_tsv(manifest, required=("frame_index", "timestamp_s"))
            index = [int(r["frame_index"]) for r in rows]
            stamps = [float(r["timestamp_s"]) for r in rows]
        else:
            files = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
            index = [int(p.stem) for p in files]
            stamps = [i / self.fps for i in index]
        frames = np.empty((len(index),) + MOUTH_SHAPE, dtype=np.uint8)
        for j, i in enumerate(index):
            path = self._frame_path(d, i)
            gray = image_to_gray(io.read_image(path))
            frames[j] = crop_mouth(gray, self.mouth_top, self.mouth_left)
        return VideoClip(frames, np.array(stamps))

    @staticmethod
    def _frame_path(d, i):
        for suffix in IMAGE_SUFFIXES:
            p = d / f"{i:06d}{suffix}"
            if p.is_file():
                return p
        raise DataError(f"frame {i} missing under {d}")

    def load_features(self, utt, modality):
        return FeatureSequence.load(self.root / "features" / f"{utt}.{modality}.feat")

    def load_alignment(self, utt):
        rows = io.read_tsv(self.root / "alignments" / f"{utt}.tsv",
                           required=("start_s", "end_s", "phoneme_label"))
        return tokens_from_alignment(rows, utt)
