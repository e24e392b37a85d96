"""Combining and splitting modalities on a shared window grid."""

from dataclasses import dataclass

import numpy as np

from avphon.errors import DataError
from avphon.features import FeatureSequence, ModalityLayout


def concat_modalities(audio_seq, visual_seq):
    """Per-window concatenation, audio dimensions first."""
    name = audio_seq.utterance or visual_seq.utterance
    if audio_seq.grid != visual_seq.grid:
        raise DataError(f"utterance {name}: audio grid {audio_seq.grid} differs from "
                        f"visual grid {visual_seq.grid}")
    if audio_seq.layout.visual_dims or visual_seq.layout.audio_dims:
        raise DataError(f"utterance {name}: inputs must be single-modality sequences")
    layout = ModalityLayout.concat(audio_seq.layout.audio_dims, visual_seq.layout.visual_dims)
    return FeatureSequence(np.hstack([audio_seq.vectors, visual_seq.vectors]), layout,
                           audio_seq.grid, name)


def drop_modality(seq, keep):
    """Restrict a sequence to one modality ("audio" or "visual")."""
    lo, hi = seq.layout.range_of(keep)
    if hi == lo:
        raise DataError(f"sequence {seq.utterance!r} has no {keep} dimensions")
    layout = (ModalityLayout.audio_only(hi - lo) if keep == "audio"
              else ModalityLayout.visual_only(hi - lo))
    return FeatureSequence(seq.vectors[:, lo:hi], layout, seq.grid, seq.utterance)


def observed_dims(train_layout, test_modalities):
    """Indices of the training layout covered by the test modalities."""
    parts = [train_layout.indices(m) for m in test_modalities]
    idx = np.concatenate(parts) if parts else np.array([], dtype=int)
    if len(idx) == 0:
        raise DataError(f"test modalities {test_modalities} are absent from the training layout")
    return idx


@dataclass
class Standardizer:
    """Optional per-dimension z-scoring fitted on training data."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, sequences):
        x = np.vstack([s.vectors for s in sequences])
        sd = x.std(axis=0)
        return cls(x.mean(axis=0), np.where(sd > 0, sd, 1.0))

    def apply(self, seq, dims=None):
        dims = np.arange(seq.layout.total_dims) if dims is None else dims
        vec = (seq.vectors - self.mean[dims]) / self.scale[dims]
        return FeatureSequence(vec, seq.layout, seq.grid, seq.utterance)
