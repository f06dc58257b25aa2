"""Spectral transforms: STFT, mel spectrograms, and summary statistics.

The torch implementations are the single source of truth; the array-in,
array-out wrappers used by metrics and the DSP surface call into them so the
loss path and the reporting path cannot drift apart.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch

from .audio import AudioClip
from .exceptions import ValidationError

DEFAULT_LOSS_WINDOWS = (64, 128, 256, 512, 1024)
DEFAULT_LOSS_MEL_BINS = (8, 16, 32, 64, 80)


@dataclass(frozen=True)
class SpectralConfig:
    """Multi-resolution analysis settings shared by losses and metrics."""

    window_sizes: tuple[int, ...] = DEFAULT_LOSS_WINDOWS
    mel_bins: tuple[int, ...] = DEFAULT_LOSS_MEL_BINS
    hop_divisor: int = 4

    def __post_init__(self):
        if len(self.window_sizes) != len(self.mel_bins):
            raise ValidationError("window_sizes and mel_bins must align")
        if any(w <= 0 or (w & (w - 1)) != 0 for w in self.window_sizes):
            raise ValidationError("window sizes must be powers of two")
        if any(b <= a for a, b in zip(self.window_sizes, self.window_sizes[1:])):
            raise ValidationError("window sizes must be strictly increasing")
        if any(m < 8 for m in self.mel_bins):
            raise ValidationError("mel_bins must be >= 8")

    @property
    def n_scales(self) -> int:
        return len(self.window_sizes)

    @property
    def hops(self) -> tuple[int, ...]:
        return tuple(w // self.hop_divisor for w in self.window_sizes)


def hann_window(window: int, device=None, dtype=torch.float32) -> torch.Tensor:
    # periodic Hann satisfies COLA at hop = window/4
    return torch.hann_window(window, periodic=True, device=device, dtype=dtype)


def stft_tensor(x: torch.Tensor, window: int, hop: int) -> torch.Tensor:
    """Complex one-sided STFT without padding; frames = 1 + (T - window) // hop."""
    if x.shape[-1] < window:
        raise ValidationError(f"signal length {x.shape[-1]} < window {window}")
    squeeze = x.ndim == 1
    if squeeze:
        x = x.unsqueeze(0)
    win = hann_window(window, device=x.device, dtype=x.dtype)
    spec = torch.stft(
        x, n_fft=window, hop_length=hop, win_length=window,
        window=win, center=False, return_complex=True,
    )
    return spec.squeeze(0) if squeeze else spec


@lru_cache(maxsize=64)
def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int) -> np.ndarray:
    """Triangular HTK-mel filters with unit peak, shape (n_mels, n_fft//2 + 1)."""

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)

    n_bins = n_fft // 2 + 1
    fft_freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    mel_points = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz_points = mel_to_hz(mel_points)

    fb = np.zeros((n_mels, n_bins), dtype=np.float64)
    for m in range(n_mels):
        lo, center, hi = hz_points[m], hz_points[m + 1], hz_points[m + 2]
        up = (fft_freqs - lo) / max(center - lo, 1e-12)
        down = (hi - fft_freqs) / max(hi - center, 1e-12)
        fb[m] = np.clip(np.minimum(up, down), 0.0, 1.0)
    return fb.astype(np.float32)


def mel_center_frequency(sample_rate: int, n_fft: int, n_mels: int, bin_index: int) -> float:
    """Center frequency in Hz of one triangular filter."""
    m = 2595.0 * np.log10(1.0 + (sample_rate / 2.0) / 700.0)
    centers = np.linspace(0.0, m, n_mels + 2)[1:-1]
    return float(700.0 * (10.0 ** (centers[bin_index] / 2595.0) - 1.0))


def mel_tensor(x: torch.Tensor, sample_rate: int, window: int, hop: int, n_mels: int) -> torch.Tensor:
    """log(1 + mel) spectrogram, shape (..., n_mels, frames). Differentiable."""
    spec = stft_tensor(x, window, hop)
    mag = spec.abs()
    fb = torch.as_tensor(mel_filterbank(sample_rate, window, n_mels),
                         device=x.device, dtype=mag.dtype)
    return torch.log1p(fb @ mag)


def stft(clip: AudioClip, window: int, hop: int | None = None) -> np.ndarray:
    """Hann-windowed complex STFT of a clip, shape (bins, frames)."""
    hop = window // 4 if hop is None else hop
    spec = stft_tensor(torch.from_numpy(clip.samples), window, hop)
    return spec.numpy()


def mel_spectrogram(clip: AudioClip, cfg: SpectralConfig, scale_index: int) -> np.ndarray:
    """log(1 + mel) spectrogram at one of the config's resolutions."""
    if not 0 <= scale_index < cfg.n_scales:
        raise ValidationError(f"scale_index {scale_index} out of range")
    window = cfg.window_sizes[scale_index]
    out = mel_tensor(torch.from_numpy(clip.samples), clip.sample_rate,
                     window, cfg.hops[scale_index], cfg.mel_bins[scale_index])
    return out.numpy()


def spectral_centroid(samples: np.ndarray, sample_rate: int) -> float:
    """Magnitude-weighted mean frequency of the whole signal, in Hz."""
    mag = np.abs(np.fft.rfft(samples.astype(np.float64)))
    freqs = np.fft.rfftfreq(samples.size, d=1.0 / sample_rate)
    total = mag.sum()
    if total <= 0:
        return 0.0
    return float((freqs * mag).sum() / total)


def spectral_flatness(samples: np.ndarray) -> float:
    """Geometric-to-arithmetic mean ratio of the power spectrum, in [0, 1]."""
    power = np.abs(np.fft.rfft(samples.astype(np.float64))) ** 2 + 1e-12
    return float(np.exp(np.mean(np.log(power))) / np.mean(power))
