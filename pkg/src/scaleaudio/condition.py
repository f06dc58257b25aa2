"""Conditioning interface for the generator, with a deterministic stub.

The stub summarizes a clip by mel-band statistics plus spectral centroid and
flatness, then maps the summary through a fixed random projection. It stands
in for a pretrained audio embedder behind the same interface.
"""

from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np
import torch

from .audio import AudioClip
from .spectral import mel_tensor, spectral_centroid, spectral_flatness

_STUB_MEL_BINS = 24
_STUB_WINDOW = 1024
_STUB_PROJECTION_SEED = 0x5EED


@runtime_checkable
class Conditioner(Protocol):
    cond_dim: int

    def embed(self, clip: AudioClip) -> np.ndarray: ...


class StubConditioner:
    """Deterministic clip embedding on the unit sphere."""

    def __init__(self, cond_dim: int = 64):
        self.cond_dim = cond_dim
        feat_dim = 2 * _STUB_MEL_BINS + 2
        rng = np.random.default_rng(_STUB_PROJECTION_SEED)
        self._projection = rng.standard_normal((feat_dim, cond_dim)).astype(np.float32)
        self._projection /= np.sqrt(feat_dim)

    def embed(self, clip: AudioClip) -> np.ndarray:
        samples = clip.samples
        if samples.size < _STUB_WINDOW:
            samples = np.pad(samples, (0, _STUB_WINDOW - samples.size))
        mel = mel_tensor(torch.from_numpy(samples), clip.sample_rate,
                         _STUB_WINDOW, _STUB_WINDOW // 4, _STUB_MEL_BINS).numpy()
        feats = np.concatenate([
            mel.mean(axis=1),
            mel.var(axis=1),
            [spectral_centroid(samples, clip.sample_rate) / (clip.sample_rate / 2)],
            [spectral_flatness(samples)],
        ]).astype(np.float32)
        vec = feats @ self._projection
        norm = float(np.linalg.norm(vec))
        if norm > 0:
            vec = vec / norm
        return vec.astype(np.float32)
