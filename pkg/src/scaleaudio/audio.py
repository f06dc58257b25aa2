"""Waveform container and WAV file IO.

Mono float32 waveforms in [-1, 1] are the package-wide interchange format.
PCM16 samples are scaled by 1/32768 on read so that 16384 maps to exactly 0.5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .exceptions import AudioFormatError, ValidationError

SUPPORTED_RATES = (16000, 22050, 24000, 44100, 48000)

_PCM16_SCALE = 32768.0


@dataclass
class AudioClip:
    """A mono waveform with its sample rate.

    samples are stored as a 1-D float32 array; all entries must be finite and
    the clip must be non-empty.
    """

    samples: np.ndarray
    sample_rate: int
    channels: int = field(default=1)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1:
            raise ValidationError(f"expected 1-D mono samples, got shape {self.samples.shape}")
        if self.samples.size == 0:
            raise ValidationError("empty clip")
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError("clip contains non-finite samples")
        if self.sample_rate not in SUPPORTED_RATES:
            raise ValidationError(
                f"sample_rate {self.sample_rate} not in supported set {SUPPORTED_RATES}"
            )
        if self.channels != 1:
            raise ValidationError("only mono clips are supported")

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def seconds(self) -> float:
        return self.samples.size / self.sample_rate


def load_wav(path: str | Path) -> AudioClip:
    """Read a RIFF/WAVE file as a mono clip.

    PCM16 and IEEE float files are accepted; stereo is downmixed by averaging
    the channels.
    """
    path = Path(path)
    try:
        rate, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise
    except OSError:
        raise
    except ValueError as exc:
        raise AudioFormatError(f"cannot parse {path}: {exc}") from exc

    if data.dtype == np.int16:
        samples = data.astype(np.float32) / _PCM16_SCALE
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float32)
    else:
        raise AudioFormatError(f"unsupported WAV encoding {data.dtype} in {path}")

    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    elif samples.ndim != 1:
        raise AudioFormatError(f"unsupported channel layout {data.shape} in {path}")

    return AudioClip(samples=samples, sample_rate=int(rate))


def save_wav(path: str | Path, clip: AudioClip, encoding: str = "pcm16") -> None:
    """Write a clip as PCM16 (default) or IEEE float32 WAV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if encoding == "pcm16":
        ints = np.clip(np.round(clip.samples * _PCM16_SCALE), -32768, 32767).astype(np.int16)
        wavfile.write(str(path), clip.sample_rate, ints)
    elif encoding == "float32":
        wavfile.write(str(path), clip.sample_rate, clip.samples.astype(np.float32))
    else:
        raise ValidationError(f"unknown encoding {encoding!r}")


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Band-limited polyphase resampling; identity when rates already match."""
    if target_rate not in SUPPORTED_RATES:
        raise ValidationError(f"target_rate {target_rate} not supported")
    if target_rate == clip.sample_rate:
        return AudioClip(samples=clip.samples.copy(), sample_rate=clip.sample_rate)

    g = math.gcd(target_rate, clip.sample_rate)
    up, down = target_rate // g, clip.sample_rate // g
    out = resample_poly(clip.samples.astype(np.float64), up, down)
    target_len = int(round(len(clip) * target_rate / clip.sample_rate))
    if out.size < target_len:
        out = np.pad(out, (0, target_len - out.size))
    return AudioClip(samples=out[:target_len].astype(np.float32), sample_rate=target_rate)


def segment(clip: AudioClip, window_seconds: float) -> list[AudioClip]:
    """Split into non-overlapping windows; the last partial window is zero-padded."""
    if window_seconds <= 0:
        raise ValidationError("window_seconds must be positive")
    window = int(round(window_seconds * clip.sample_rate))
    n = len(clip)
    count = max(1, math.ceil(n / window))
    out = []
    for i in range(count):
        chunk = clip.samples[i * window : (i + 1) * window]
        if chunk.size < window:
            chunk = np.pad(chunk, (0, window - chunk.size))
        out.append(AudioClip(samples=chunk, sample_rate=clip.sample_rate))
    return out


def reassemble(segments: list[AudioClip], original_length: int | None = None) -> AudioClip:
    """Concatenate segments, optionally trimming the final zero padding."""
    if not segments:
        raise ValidationError("no segments to reassemble")
    samples = np.concatenate([s.samples for s in segments])
    if original_length is not None:
        samples = samples[:original_length]
    return AudioClip(samples=samples, sample_rate=segments[0].sample_rate)
