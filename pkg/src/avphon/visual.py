"""Eigenmouth features: grayscale mouth crops projected onto a PCA basis.

Each analysis window is described by the coefficients of the video frame at
(or latest before) the window center, plus the backward and forward
coefficient differences to the adjacent frames.
"""

from dataclasses import dataclass

import numpy as np

from avphon import io
from avphon.errors import DataError
from avphon.features import FeatureSequence, ModalityLayout

MOUTH_SHAPE = (100, 150)  # rows, columns
DEFAULT_COMPONENTS = 4
GRAY_WEIGHTS = (0.2989, 0.587, 0.114)
_TIME_EPS = 1e-9


def to_grayscale(r, g, b):
    """8-bit intensity from RGB channels (round half up, clamp to [0, 255])."""
    y = GRAY_WEIGHTS[0] * np.asarray(r, dtype=np.float64) \
        + GRAY_WEIGHTS[1] * np.asarray(g, dtype=np.float64) \
        + GRAY_WEIGHTS[2] * np.asarray(b, dtype=np.float64)
    out = np.clip(np.floor(y + 0.5), 0, 255).astype(np.uint8)
    return out if out.ndim else int(out)


def image_to_gray(pixels):
    pixels = np.asarray(pixels)
    if pixels.ndim == 2:
        return pixels.astype(np.uint8, copy=False)
    if pixels.ndim == 3 and pixels.shape[2] == 3:
        return to_grayscale(pixels[..., 0], pixels[..., 1], pixels[..., 2])
    raise DataError(f"unsupported image shape {pixels.shape}")


def crop_mouth(pixels, top, left, shape=MOUTH_SHAPE):
    h, w = shape
    if top < 0 or left < 0 or top + h > pixels.shape[0] or left + w > pixels.shape[1]:
        raise DataError(f"mouth box ({top}, {left}, {h}x{w}) exceeds image {pixels.shape[:2]}")
    return pixels[top:top + h, left:left + w]


@dataclass
class VideoClip:
    """Cropped grayscale mouth frames with their timestamps (seconds)."""

    frames: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if self.frames.ndim != 3 or len(self.frames) != len(self.timestamps):
            raise DataError("clip needs a (n_frames, rows, cols) stack and one timestamp per frame")
        if len(self.timestamps) > 1 and np.any(np.diff(self.timestamps) <= 0):
            raise DataError("frame timestamps must be strictly increasing")


@dataclass
class EigenmouthBasis:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    shape: tuple = MOUTH_SHAPE

    @property
    def k(self):
        return self.components.shape[0]

    def to_bytes(self):
        header = {"shape": list(self.shape), "k": self.k, "format": 1,
                  "n_values": (self.k + 1) * self.mean.size + self.k}
        payload = np.concatenate([self.mean, self.components.ravel(), self.explained_variance])
        return io.pack_container(io.KIND_BASIS, self.mean.size, self.k, header, payload.astype("<f8"))

    @classmethod
    def from_bytes(cls, data):
        dims, k, header, flat = io.unpack_container(data, io.KIND_BASIS, np.float64)
        if header.get("format") != 1:
            raise io.ContainerError(f"unsupported basis format {header.get('format')}")
        mean = flat[:dims]
        comps = flat[dims:dims + k * dims].reshape(k, dims)
        return cls(mean, comps, flat[dims + k * dims:], tuple(header["shape"]))

    def save(self, path):
        io.atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _as_matrix(frames, shape):
    x = np.asarray(frames, dtype=np.float64)
    size = shape[0] * shape[1]
    if x.ndim == 3:
        if x.shape[1:] != tuple(shape):
            raise DataError(f"frames are {x.shape[1]}x{x.shape[2]}, expected {shape[0]}x{shape[1]}")
        return x.reshape(len(x), size)
    if x.ndim == 2 and x.shape[1] == size:
        return x
    raise DataError(f"cannot interpret frames of shape {x.shape}")


def fit_pca(frames, k=DEFAULT_COMPONENTS, shape=MOUTH_SHAPE):
    """Fit a k-component eigenmouth basis.

    The eigenvectors of the sample covariance are obtained from the (much
    smaller) Gram matrix of the centered frames. Each component's sign is
    chosen so that its largest-magnitude entry is positive.
    """
    x = _as_matrix(frames, shape)
    m = len(x)
    if k < 1:
        raise DataError("k must be at least 1")
    if m < k + 1:
        raise DataError(f"PCA with k={k} needs at least {k + 1} frames, got {m}")
    mean = x.mean(axis=0)
    xc = x - mean
    gram = xc @ xc.T
    evals, evecs = np.linalg.eigh(gram)
    evals, evecs = evals[::-1], evecs[:, ::-1]
    tol = max(x.shape) * np.finfo(float).eps * max(evals[0], 0.0)
    rank = int(np.sum(evals > tol)) if evals[0] > 0 else 0
    if rank < k:
        raise DataError(f"pretraining frames have rank {rank}; achievable k is 1..{rank}"
                        if rank else "pretraining frames have zero variance (rank 0)")
    comps = (xc.T @ evecs[:, :k]) / np.sqrt(evals[:k])
    comps = comps.T
    comps /= np.linalg.norm(comps, axis=1, keepdims=True)
    pivots = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(k), pivots])
    comps *= signs[:, None]
    return EigenmouthBasis(mean, comps, evals[:k] / (m - 1), tuple(shape))


def project(frames, basis):
    """Eigenmouth coefficients; a single frame gives shape (k,), a stack (n, k)."""
    arr = np.asarray(frames, dtype=np.float64)
    single = arr.ndim == 1 or arr.shape == tuple(basis.shape)
    x = _as_matrix(arr.reshape(1, -1) if single else arr, basis.shape)
    coeffs = (x - basis.mean) @ basis.components.T
    return coeffs[0] if single else coeffs


def reconstruct(coeffs, basis):
    return basis.mean + np.asarray(coeffs) @ basis.components


def match_frames(grid, timestamps):
    """(prev, center, next) frame indices per window, clamped at clip ends.

    The center frame is the latest one whose timestamp is <= the window
    center; a frame exactly at the center counts.
    """
    ts = np.asarray(timestamps, dtype=np.float64)
    if len(ts) == 0:
        raise DataError("clip has no frames")
    centers = grid.centers
    center = np.searchsorted(ts, centers + _TIME_EPS, side="right") - 1
    if np.any(center < 0):
        raise DataError(f"no video frame at or before window center {centers[0]:.4f}s")
    last = len(ts) - 1
    return np.stack([np.maximum(center - 1, 0), center, np.minimum(center + 1, last)], axis=1)


def extract_visual_features(clip, grid, basis, utterance=""):
    """3k-dim vectors: static coefficients, backward and forward differences."""
    idx = match_frames(grid, clip.timestamps)
    used = np.unique(idx)
    coeffs = np.zeros((len(clip.frames), basis.k))
    coeffs[used] = project(clip.frames[used], basis)
    prev, cur, nxt = coeffs[idx[:, 0]], coeffs[idx[:, 1]], coeffs[idx[:, 2]]
    vectors = np.hstack([cur, cur - prev, nxt - cur])
    return FeatureSequence(vectors, ModalityLayout.visual_only(3 * basis.k), grid, utterance)


def pretraining_frames(clip, grid):
    """Distinct center frames matched to the windows of ``grid``."""
    return clip.frames[np.unique(match_frames(grid, clip.timestamps)[:, 1])]
