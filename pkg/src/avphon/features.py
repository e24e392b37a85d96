"""Shared feature containers: the window grid, modality layout and FeatureSequence."""

from dataclasses import dataclass, field

import numpy as np

from avphon import io
from avphon.errors import DataError

WINDOW_LEN = 0.025
HOP = 0.010


@dataclass(frozen=True)
class WindowGrid:
    """Analysis windows ``[i*hop, i*hop + window_len)`` for ``i < n_windows``."""

    n_windows: int
    window_len: float = WINDOW_LEN
    hop: float = HOP

    @property
    def centers(self):
        return np.arange(self.n_windows) * self.hop + self.window_len / 2.0

    @property
    def starts(self):
        return np.arange(self.n_windows) * self.hop

    @classmethod
    def for_duration(cls, duration, window_len=WINDOW_LEN, hop=HOP):
        if duration + 1e-12 < window_len:
            raise DataError("signal too short")
        n = int(np.floor((duration - window_len) / hop + 1e-9)) + 1
        return cls(n, window_len, hop)


@dataclass(frozen=True)
class ModalityLayout:
    """Half-open dimension ranges for each modality; audio always comes first."""

    audio: tuple = (0, 0)
    visual: tuple = (0, 0)

    def __post_init__(self):
        a0, a1 = self.audio
        v0, v1 = self.visual
        if a0 != 0 or a1 < a0 or v1 < v0:
            raise ValueError(f"invalid layout ranges {self.audio}, {self.visual}")
        if v0 != a1 and v1 > v0:
            raise ValueError("visual range must start where audio ends")
        if self.total_dims == 0:
            raise ValueError("layout has no dimensions")

    @property
    def audio_dims(self):
        return self.audio[1] - self.audio[0]

    @property
    def visual_dims(self):
        return self.visual[1] - self.visual[0]

    @property
    def total_dims(self):
        return self.audio_dims + self.visual_dims

    def indices(self, modality):
        lo, hi = self.range_of(modality)
        return np.arange(lo, hi)

    def range_of(self, modality):
        if modality == "audio":
            return self.audio
        if modality == "visual":
            return self.visual
        raise ValueError(f"unknown modality {modality!r}")

    @classmethod
    def audio_only(cls, dims):
        return cls((0, dims), (dims, dims))

    @classmethod
    def visual_only(cls, dims):
        return cls((0, 0), (0, dims))

    @classmethod
    def concat(cls, audio_dims, visual_dims):
        return cls((0, audio_dims), (audio_dims, audio_dims + visual_dims))

    def to_dict(self):
        return {"audio": list(self.audio), "visual": list(self.visual)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["audio"]), tuple(d["visual"]))

    @property
    def name(self):
        return {(True, True): "AV", (True, False): "A", (False, True): "V"}[
            (self.audio_dims > 0, self.visual_dims > 0)]


@dataclass
class FeatureSequence:
    """Per-window feature vectors of one utterance."""

    vectors: np.ndarray
    layout: ModalityLayout
    grid: WindowGrid
    utterance: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[1] != self.layout.total_dims:
            raise DataError(
                f"{self.utterance or 'sequence'}: vectors of shape {self.vectors.shape} "
                f"do not match layout with {self.layout.total_dims} dims")
        if self.vectors.shape[0] != self.grid.n_windows:
            raise DataError(
                f"{self.utterance or 'sequence'}: {self.vectors.shape[0]} vectors for "
                f"{self.grid.n_windows} windows")
        if not np.all(np.isfinite(self.vectors)):
            raise DataError(f"{self.utterance or 'sequence'}: non-finite feature values")

    def __len__(self):
        return self.vectors.shape[0]

    def to_bytes(self):
        header = {
            "layout": self.layout.to_dict(),
            "window_len": self.grid.window_len,
            "hop": self.grid.hop,
            "utterance": self.utterance,
        }
        return io.pack_container(io.KIND_FEATURES, self.layout.total_dims, len(self),
                                 header, self.vectors.astype("<f4"))

    @classmethod
    def from_bytes(cls, data):
        dims, count, header, flat = io.unpack_container(data, io.KIND_FEATURES, np.float32)
        layout = ModalityLayout.from_dict(header["layout"])
        grid = WindowGrid(count, header["window_len"], header["hop"])
        return cls(flat.reshape(count, dims).astype(np.float64), layout, grid,
                   header.get("utterance", ""))

    def save(self, path):
        io.atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def to_csv(self):
        names = [f"a{i}" for i in range(self.layout.audio_dims)]
        names += [f"v{i}" for i in range(self.layout.visual_dims)]
        rows = []
        for t, (c, v) in enumerate(zip(self.grid.centers, self.vectors)):
            row = {"window": t, "center_s": f"{c:.4f}"}
            row.update({n: repr(float(x)) for n, x in zip(names, v)})
            rows.append(row)
        return io.csv_text(["window", "center_s"] + names, rows)
