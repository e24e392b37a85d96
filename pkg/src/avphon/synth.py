"""Synthetic audio-visual corpora with known phoneme categories.

A spec is an INI file::

    [corpus]
    seed = 0
    mode = waveform            ; or "feature"
    grammar = cv               ; alternate consonants and vowels, or "free"
    utterances_pretrain = 10
    utterances_train = 30
    utterances_test = 40
    phones_per_utterance = 8, 12
    speakers = s1
    sample_rate = 16000
    fps = 60
    image_height = 120
    image_width = 170
    mouth_top = 10
    mouth_left = 10
    f0 = 120                   ; pulse rate of voiced excitation, Hz
    f0_jitter = 0.05           ; relative sd of each token's pulse rate
    bandwidth = 90             ; formant resonator bandwidth, Hz
    formant_jitter = 0.04      ; relative sd of each token's formant frequencies
    shape_jitter = 0.05        ; relative sd of each token's mouth aperture and width
    frame_jitter = 0.02        ; extra per-frame shape wobble
    pixel_jitter = 8.0         ; sd of Gaussian pixel noise
    noise_floor_db = -40       ; background noise relative to unit amplitude;
                               ; two values draw a per-utterance level uniformly
    feature_sd = 1.0           ; feature mode: within-phoneme sd

    [phoneme:a]
    class = vowel
    duration = 0.08, 0.16      ; seconds, uniform range
    formants = 700, 1200       ; Hz
    amplitudes = 1.0, 0.5      ; relative formant gains
    source = voiced            ; or "noise" for fricative-like consonants
    loudness = 1.0             ; segment RMS relative to the default level
    aperture = 0.8             ; 0..1 of the mouth box half-height
    width = 0.7                ; 0..1 of the mouth box half-width
    audio_mean = 0, 0, 0       ; feature mode only
    visual_mean = 2, 0         ; feature mode only

Every phoneme section must carry the emission keys of the chosen mode.
Generation is a pure function of the corpus description: each utterance draws from its own
generator keyed by (seed, split, index).
"""

import configparser
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from scipy.signal import freqz, lfilter

from avphon import io
from avphon.errors import ConfigError
from avphon.features import ModalityLayout, FeatureSequence, WindowGrid
from avphon.visual import MOUTH_SHAPE

SPLIT_IDS = {"pretrain": 0, "train": 1, "test": 2}
SPLIT_PREFIX = {"pretrain": "pre", "train": "train", "test": "test"}
MIN_DURATION = 0.025
BACKGROUND = 170
LIP = 95
INTERIOR = 35


@dataclass(frozen=True)
class PhonemeSpec:
    label: str
    cls: str
    duration: tuple
    formants: tuple = ()
    amplitudes: tuple = ()
    aperture: float = 0.5
    width: float = 0.5
    audio_mean: tuple = ()
    visual_mean: tuple = ()
    source: str = "voiced"
    loudness: float = 1.0


@dataclass(frozen=True)
class SynthSpec:
    phonemes: tuple
    seed: int = 0
    mode: str = "waveform"
    grammar: str = "cv"
    counts: tuple = (10, 30, 40)
    phones_per_utterance: tuple = (8, 12)
    speakers: tuple = ("s1",)
    sample_rate: int = 16000
    fps: float = 60.0
    image_shape: tuple = (120, 170)
    mouth_top: int = 10
    mouth_left: int = 10
    f0: float = 120.0
    f0_jitter: float = 0.05
    bandwidth: float = 90.0
    formant_jitter: float = 0.04
    shape_jitter: float = 0.05
    frame_jitter: float = 0.02
    pixel_jitter: float = 8.0
    noise_floor_db: tuple = (-40.0, -40.0)
    feature_sd: float = 1.0

    def __post_init__(self):
        if len(self.phonemes) < 2:
            raise ConfigError("inventory needs at least two phonemes")
        if self.mode not in ("waveform", "feature"):
            raise ConfigError(f"mode must be waveform or feature, got {self.mode!r}")
        if self.grammar not in ("cv", "free"):
            raise ConfigError(f"grammar must be cv or free, got {self.grammar!r}")
        for p in self.phonemes:
            lo, hi = p.duration
            if lo < MIN_DURATION or hi < lo:
                raise ConfigError(f"phoneme {p.label}: durations must satisfy "
                                  f"{MIN_DURATION} <= min <= max, got {lo}, {hi}")
            if p.source not in ("voiced", "noise"):
                raise ConfigError(f"phoneme {p.label}: source must be voiced or noise")
            if p.cls not in ("vowel", "consonant"):
                raise ConfigError(f"phoneme {p.label}: class must be vowel or consonant")
            if self.mode == "waveform" and (not p.formants or len(p.formants) != len(p.amplitudes)):
                raise ConfigError(f"phoneme {p.label}: waveform mode needs matching "
                                  "formants and amplitudes")
            if self.mode == "waveform" and max(p.formants) >= self.sample_rate / 2:
                raise ConfigError(f"phoneme {p.label}: formant above Nyquist")
        if self.mode == "feature":
            a = {len(p.audio_mean) for p in self.phonemes}
            v = {len(p.visual_mean) for p in self.phonemes}
            if len(a) != 1 or len(v) != 1 or 0 in a:
                raise ConfigError("feature mode needs audio_mean (and visual_mean) of equal "
                                  "length for every phoneme")
        if self.grammar == "cv" and len({p.cls for p in self.phonemes}) < 2:
            raise ConfigError("cv grammar needs both vowels and consonants")
        h, w = self.image_shape
        if self.mouth_top + MOUTH_SHAPE[0] > h or self.mouth_left + MOUTH_SHAPE[1] > w:
            raise ConfigError("mouth box does not fit in the image")
        total_min = self.phones_per_utterance[0] * min(p.duration[0] for p in self.phonemes)
        if total_min < MIN_DURATION + 0.010:
            raise ConfigError("utterances too short to yield a single analysis window")

    def by_class(self, cls):
        return [p for p in self.phonemes if p.cls == cls]


def _floats(text):
    return tuple(float(t) for t in text.replace(",", " ").split())


def parse_spec(text):
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.read_string(text)
    if "corpus" not in cp:
        raise ConfigError("synth spec needs a [corpus] section")
    c = cp["corpus"]
    try:
        phonemes = []
        for name in cp.sections():
            if not name.startswith("phoneme:"):
                continue
            s = cp[name]
            dur = _floats(s.get("duration", "0.08, 0.16"))
            phonemes.append(PhonemeSpec(
                name.split(":", 1)[1], s.get("class", "vowel"),
                (dur[0], dur[-1]),
                _floats(s.get("formants", "")), _floats(s.get("amplitudes", "")),
                s.getfloat("aperture", 0.5), s.getfloat("width", 0.5),
                _floats(s.get("audio_mean", "")), _floats(s.get("visual_mean", "")),
                s.get("source", "voiced"), s.getfloat("loudness", 1.0)))
        ppu = _floats(c.get("phones_per_utterance", "8, 12"))
        floor = _floats(c.get("noise_floor_db", "-40"))
        spec = SynthSpec(
            tuple(phonemes),
            seed=c.getint("seed", 0),
            mode=c.get("mode", "waveform"),
            grammar=c.get("grammar", "cv"),
            counts=(c.getint("utterances_pretrain", 10), c.getint("utterances_train", 30),
                    c.getint("utterances_test", 40)),
            phones_per_utterance=(int(ppu[0]), int(ppu[-1])),
            speakers=tuple(c.get("speakers", "s1").replace(",", " ").split()),
            sample_rate=c.getint("sample_rate", 16000),
            fps=c.getfloat("fps", 60.0),
            image_shape=(c.getint("image_height", 120), c.getint("image_width", 170)),
            mouth_top=c.getint("mouth_top", 10),
            mouth_left=c.getint("mouth_left", 10),
            f0=c.getfloat("f0", 120.0),
            f0_jitter=c.getfloat("f0_jitter", 0.05),
            bandwidth=c.getfloat("bandwidth", 90.0),
            formant_jitter=c.getfloat("formant_jitter", 0.04),
            shape_jitter=c.getfloat("shape_jitter", 0.05),
            frame_jitter=c.getfloat("frame_jitter", 0.02),
            pixel_jitter=c.getfloat("pixel_jitter", 8.0),
            noise_floor_db=(floor[0], floor[-1]),
            feature_sd=c.getfloat("feature_sd", 1.0),
        )
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"bad synth spec: {exc}") from None
    return spec


def load_spec(path):
    return parse_spec(Path(path).read_text(encoding="utf-8"))


# --- utterance planning ----------------------------------------------------

@dataclass
class Segment:
    phoneme: PhonemeSpec
    start: int   # samples
    stop: int
    rng_seed: int


def plan_utterance(spec, rng):
    n = int(rng.integers(spec.phones_per_utterance[0], spec.phones_per_utterance[1] + 1))
    if spec.grammar == "cv":
        pools = [spec.by_class("consonant"), spec.by_class("vowel")]
        seq = [pools[i % 2][rng.integers(len(pools[i % 2]))] for i in range(n)]
    else:
        seq = [spec.phonemes[rng.integers(len(spec.phonemes))] for _ in range(n)]
    segs, t = [], 0
    for p in seq:
        dur = rng.uniform(*p.duration)
        length = max(1, int(round(dur * spec.sample_rate)))
        segs.append(Segment(p, t, t + length, int(rng.integers(2**31))))
        t += length
    return segs


def _resonator(freq, bandwidth, sr):
    """Two-pole resonator normalized to unit gain at its centre frequency."""
    r = math.exp(-math.pi * bandwidth / sr)
    theta = 2 * math.pi * freq / sr
    a = np.array([1.0, -2 * r * math.cos(theta), r * r])
    _, h = freqz([1.0], a, worN=[theta])
    return np.array([1.0 / abs(h[0])]), a


def _excitation(spec, phoneme, n, local):
    if phoneme.source == "noise":
        return local.standard_normal(n)
    f0 = spec.f0 * (1.0 + spec.f0_jitter * local.standard_normal())
    period = spec.sample_rate / f0
    out = np.zeros(n)
    out[np.round(np.arange(local.uniform(0, period), n, period)).astype(int).clip(0, n - 1)] = 1.0
    return out


def render_audio(spec, segs, rng):
    """Source-filter synthesis: pulse-train or noise excitation through formant resonators."""
    sr = spec.sample_rate
    total = segs[-1].stop
    out = np.zeros(total)
    ramp = max(1, int(0.003 * sr))
    for s in segs:
        local = np.random.default_rng(s.rng_seed)
        n = s.stop - s.start
        source = _excitation(spec, s.phoneme, n, local)
        wave = np.zeros(n)
        for f, a in zip(s.phoneme.formants, s.phoneme.amplitudes):
            fj = f * (1.0 + spec.formant_jitter * local.standard_normal())
            b, den = _resonator(min(fj, 0.45 * sr), spec.bandwidth, sr)
            wave += a * lfilter(b, den, source)
        rms = math.sqrt(float(np.mean(wave ** 2)))
        if rms > 0:
            wave *= s.phoneme.loudness * 0.25 / rms
        env = np.ones(n)
        r = min(ramp, n // 2)
        if r > 0:
            env[:r] = np.linspace(0.0, 1.0, r, endpoint=False)
            env[n - r:] = env[:r][::-1]
        out[s.start:s.stop] = wave * env
    level = rng.uniform(*spec.noise_floor_db)
    out += 10 ** (level / 20) * rng.standard_normal(total)
    peak = np.max(np.abs(out))
    return 0.9 * out / peak if peak > 0 else out


def _ellipse_mask(shape, cy, cx, ry, rx):
    y, x = np.ogrid[:shape[0], :shape[1]]
    return ((y - cy) / max(ry, 0.5)) ** 2 + ((x - cx) / max(rx, 0.5)) ** 2 <= 1.0


def draw_mouth(spec, aperture, width, rng):
    """One full frame with a lip ring and dark interior inside the mouth box."""
    img = np.full(spec.image_shape, BACKGROUND, dtype=np.float64)
    mh, mw = MOUTH_SHAPE
    cy = spec.mouth_top + mh / 2
    cx = spec.mouth_left + mw / 2
    ry = 4 + np.clip(aperture, 0, 1) * (mh / 2 - 8)
    rx = 6 + np.clip(width, 0, 1) * (mw / 2 - 10)
    img[_ellipse_mask(spec.image_shape, cy, cx, ry + 4, rx + 4)] = LIP
    img[_ellipse_mask(spec.image_shape, cy, cx, ry, rx)] = INTERIOR
    img += spec.pixel_jitter * rng.standard_normal(img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def token_shapes(spec, segs):
    """Per-token (aperture, width) after token-level jitter."""
    out = []
    for s in segs:
        local = np.random.default_rng(s.rng_seed + 1)
        out.append((s.phoneme.aperture * (1 + spec.shape_jitter * local.standard_normal()),
                    s.phoneme.width * (1 + spec.shape_jitter * local.standard_normal())))
    return out


def frame_times(spec, total_samples):
    n = int(math.floor(total_samples / spec.sample_rate * spec.fps - 1e-9)) + 1
    return np.arange(n) / spec.fps


def _segment_at(segs, sample):
    starts = np.array([s.start for s in segs])
    return int(np.clip(np.searchsorted(starts, sample, side="right") - 1, 0, len(segs) - 1))


def render_frames(spec, segs, rng):
    shapes = token_shapes(spec, segs)
    times = frame_times(spec, segs[-1].stop)
    frames = []
    for t in times:
        k = _segment_at(segs, int(math.floor(t * spec.sample_rate + 1e-6)))
        ap, wd = shapes[k]
        ap *= 1 + spec.frame_jitter * rng.standard_normal()
        wd *= 1 + spec.frame_jitter * rng.standard_normal()
        frames.append(draw_mouth(spec, ap, wd, rng))
    return times, frames


def render_features(spec, segs, rng, utt):
    """Feature-mode vectors: one Gaussian draw per window around its phoneme's means."""
    grid = WindowGrid.for_duration(segs[-1].stop / spec.sample_rate)
    centers = grid.centers
    labels = [segs[_segment_at(segs, int(math.floor(c * spec.sample_rate + 1e-6)))].phoneme
              for c in centers]
    a = np.array([p.audio_mean for p in labels])
    audio = FeatureSequence(a + spec.feature_sd * rng.standard_normal(a.shape),
                            ModalityLayout.audio_only(a.shape[1]), grid, utt)
    out = {"audio": audio}
    if labels[0].visual_mean:
        v = np.array([p.visual_mean for p in labels])
        out["visual"] = FeatureSequence(v + spec.feature_sd * rng.standard_normal(v.shape),
                                        ModalityLayout.visual_only(v.shape[1]), grid, utt)
    return out


def alignment_rows(spec, segs, speaker):
    sr = spec.sample_rate
    return [{"start_s": repr(s.start / sr), "end_s": repr(s.stop / sr),
             "phoneme_label": s.phoneme.label, "word": f"w{i // 2}", "speaker": speaker}
            for i, s in enumerate(segs)]


def generate(spec, out_dir):
    """Write a complete corpus under ``out_dir``; returns the utterance ids per split."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for sub in ("splits", "alignments"):
        (out / sub).mkdir(exist_ok=True)
    io.atomic_write_text(out / "corpus.ini", "\n".join([
        "[corpus]",
        f"sample_rate = {spec.sample_rate}",
        f"fps = {spec.fps!r}",
        f"mouth_top = {spec.mouth_top}",
        f"mouth_left = {spec.mouth_left}",
        f"mode = {spec.mode}",
        "",
    ]))
    io.write_tsv(out / "class_map.tsv", ["phoneme_label", "class"],
                 [{"phoneme_label": p.label, "class": p.cls}
                  for p in sorted(spec.phonemes, key=lambda p: p.label)])
    ids = {}
    for split, count in zip(SPLIT_IDS, spec.counts):
        ids[split] = []
        for i in range(count):
            utt = f"{SPLIT_PREFIX[split]}{i:03d}"
            generate_utterance(spec, out, utt, (spec.seed, SPLIT_IDS[split], i),
                               spec.speakers[i % len(spec.speakers)])
            ids[split].append(utt)
        io.atomic_write_text(out / "splits" / f"{split}.txt",
                             "".join(u + "\n" for u in ids[split]))
    return ids


def generate_utterance(spec, out, utt, key, speaker):
    rng = np.random.default_rng(list(key))
    segs = plan_utterance(spec, rng)
    io.write_tsv(out / "alignments" / f"{utt}.tsv",
                 ["start_s", "end_s", "phoneme_label", "word", "speaker"],
                 alignment_rows(spec, segs, speaker))
    if spec.mode == "feature":
        for modality, seq in render_features(spec, segs, rng, utt).items():
            seq.save(out / "features" / f"{utt}.{modality}.feat")
        return
    io.write_wav(out / "audio" / f"{utt}.wav", render_audio(spec, segs, rng), spec.sample_rate)
    times, frames = render_frames(spec, segs, rng)
    fdir = out / "frames" / utt
    fdir.mkdir(parents=True, exist_ok=True)
    for j, img in enumerate(frames):
        io.write_pgm(fdir / f"{j:06d}.pgm", img)
    io.write_tsv(fdir / "manifest.tsv", ["frame_index", "timestamp_s"],
                 [{"frame_index": j, "timestamp_s": repr(float(t))} for j, t in enumerate(times)])
