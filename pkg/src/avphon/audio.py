"""MFCC + delta features on a 25 ms / 10 ms window grid, with optional noise.

MFCC pipeline, per window: pre-emphasis (0.97, restarted at each window),
Hamming taper, power spectrum ``|FFT|^2 / n_fft`` with ``n_fft`` the next
power of two, 26 triangular Mel filters spanning 0 Hz to Nyquist (HTK Mel
scale), natural log floored at 1e-10, orthonormal DCT-II, coefficients 0..12.
"""

from dataclasses import dataclass

import numpy as np
from scipy.fft import dct, rfft

from avphon.errors import DataError
from avphon.features import HOP, WINDOW_LEN, FeatureSequence, ModalityLayout, WindowGrid

N_MFCC = 13
N_MEL = 26
PREEMPHASIS = 0.97
LOG_FLOOR = 1e-10
DELTA_REACH = 3
AUDIO_DIMS = 3 * N_MFCC


@dataclass
class AudioSignal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DataError("audio must be mono (1-D samples)")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise DataError(f"sample rate must be a positive integer, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class NoiseConfig:
    """Additive white Gaussian noise; ``snr_db=inf`` disables it."""

    snr_db: float = float("inf")
    seed: int = 0

    @property
    def enabled(self):
        return np.isfinite(self.snr_db)


def _window_samples(sample_rate, window_len, hop):
    return int(round(window_len * sample_rate)), int(round(hop * sample_rate))


def frame_signal(signal, window_len=WINDOW_LEN, hop=HOP):
    """Cut ``signal`` into overlapping windows.

    Returns ``(grid, frames)`` where ``frames[i]`` holds the samples of
    ``[i*hop, i*hop + window_len)``.
    """
    win, step = _window_samples(signal.sample_rate, window_len, hop)
    n = len(signal.samples)
    if win < 1 or step < 1:
        raise DataError("window and hop must each span at least one sample")
    if n < win:
        raise DataError("signal too short")
    count = (n - win) // step + 1
    idx = np.arange(count)[:, None] * step + np.arange(win)[None, :]
    return WindowGrid(count, window_len, hop), signal.samples[idx]


def _next_pow2(n):
    return 1 << max(0, int(n - 1).bit_length())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


_FB_CACHE = {}


def mel_filterbank(sample_rate, n_fft, n_filters=N_MEL):
    """Triangular filters evaluated at the rfft bin frequencies, shape (n_filters, n_fft//2+1)."""
    key = (sample_rate, n_fft, n_filters)
    if key not in _FB_CACHE:
        edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_filters + 2))
        freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
        lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
        rising = (freqs - lo) / (mid - lo)
        falling = (hi - freqs) / (hi - mid)
        fb = np.maximum(0.0, np.minimum(rising, falling))
        fb.setflags(write=False)
        _FB_CACHE[key] = fb
    return _FB_CACHE[key]


def mfcc_frames(frames, sample_rate):
    """MFCCs for a stack of windows, shape (n_windows, 13)."""
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    win = frames.shape[1]
    if win < 2:
        raise DataError("MFCC window needs at least 2 samples")
    emph = np.empty_like(frames)
    emph[:, 0] = frames[:, 0]
    emph[:, 1:] = frames[:, 1:] - PREEMPHASIS * frames[:, :-1]
    emph *= np.hamming(win)
    n_fft = _next_pow2(win)
    power = np.abs(rfft(emph, n=n_fft, axis=1)) ** 2 / n_fft
    fb_t = mel_filterbank(sample_rate, n_fft).T
    # one product per window: a blocked matrix product rounds differently by row position
    energies = np.stack([np.ascontiguousarray(row) @ fb_t for row in power])
    logmel = np.log(np.maximum(energies, LOG_FLOOR))
    return dct(logmel, type=2, norm="ortho", axis=1)[:, :N_MFCC]


def compute_mfcc(window_samples, sample_rate):
    """13 MFCCs of a single window."""
    return mfcc_frames(np.asarray(window_samples, dtype=np.float64)[None, :], sample_rate)[0]


def _delta(seq, reach):
    n = seq.shape[0]
    padded = np.concatenate([np.repeat(seq[:1], reach, axis=0), seq,
                             np.repeat(seq[-1:], reach, axis=0)])
    denom = 2.0 * sum(k * k for k in range(1, reach + 1))
    out = np.zeros_like(seq)
    for k in range(1, reach + 1):
        out += k * (padded[reach + k:reach + k + n] - padded[reach - k:reach - k + n])
    return out / denom


def compute_deltas(coeffs, reach=DELTA_REACH):
    """Regression deltas and delta-deltas over ``reach`` neighbours, replicate-padded."""
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=np.float64))
    if coeffs.shape[0] == 0:
        raise DataError("cannot compute deltas of an empty sequence")
    d1 = _delta(coeffs, reach)
    return d1, _delta(d1, reach)


def add_noise(signal, snr_db, seed):
    """Add white Gaussian noise at ``snr_db`` relative to the signal's mean power.

    The noise has variance ``P_signal / 10**(snr_db/10)``, so the realized
    SNR fluctuates slightly around the target. ``snr_db=inf`` returns the
    input unchanged.
    """
    if not np.isfinite(snr_db):
        if snr_db > 0:
            return AudioSignal(signal.samples.copy(), signal.sample_rate)
        raise DataError(f"invalid SNR {snr_db}")
    p_sig = float(np.mean(signal.samples ** 2))
    if p_sig <= 0.0:
        raise DataError("cannot scale noise against silent signal")
    sigma = np.sqrt(p_sig / 10.0 ** (snr_db / 10.0))
    noise = np.random.default_rng(seed).standard_normal(len(signal.samples))
    return AudioSignal(signal.samples + sigma * noise, signal.sample_rate)


def extract_audio_features(signal, grid=None, noise=None, utterance=""):
    """39-dim MFCC + delta + delta-delta vectors, one per window.

    When ``grid`` is given it must match the grid implied by the signal.
    """
    if noise is not None and noise.enabled:
        signal = add_noise(signal, noise.snr_db, noise.seed)
    window_len = grid.window_len if grid is not None else WINDOW_LEN
    hop = grid.hop if grid is not None else HOP
    own_grid, frames = frame_signal(signal, window_len, hop)
    if grid is not None and grid.n_windows != own_grid.n_windows:
        raise DataError(f"{utterance}: grid has {grid.n_windows} windows, "
                        f"signal yields {own_grid.n_windows}")
    c = mfcc_frames(frames, signal.sample_rate)
    d1, d2 = compute_deltas(c)
    return FeatureSequence(np.hstack([c, d1, d2]), ModalityLayout.audio_only(AUDIO_DIMS),
                           own_grid, utterance)
