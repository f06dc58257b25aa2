"""Deterministic synthetic corpus used in place of a real dataset.

Clips are a pure function of (seed, clip index): regenerating with the same
seed is bit-identical regardless of how many clips are requested.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, lfilter

from .audio import AudioClip, load_wav, save_wav
from .exceptions import ValidationError

CLASS_NAMES = ("sine_sweep", "harmonic_stack", "low_noise", "am_tone", "fm_tone")

_PEAK = 0.9


@dataclass
class CorpusClip:
    clip: AudioClip
    label_id: int

    @property
    def label(self) -> str:
        return CLASS_NAMES[self.label_id]


def _normalize(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    peak = float(np.max(np.abs(x)))
    target = rng.uniform(0.5, _PEAK)
    if peak > 0:
        x = x * (target / peak)
    return x.astype(np.float32)


def _sine_sweep(rng, t, sr):
    f0 = rng.uniform(100.0, 300.0)
    f1 = rng.uniform(800.0, 2500.0)
    # log sweep: instantaneous frequency f0 * (f1/f0)**(t/T)
    T = t[-1] if t[-1] > 0 else 1.0
    k = np.log(f1 / f0)
    phase = 2 * np.pi * f0 * T / k * (np.exp(k * t / T) - 1.0)
    return np.sin(phase)


def _harmonic_stack(rng, t, sr):
    f0 = rng.uniform(150.0, 350.0)
    n_harm = int(rng.integers(4, 7))
    x = np.zeros_like(t)
    for h in range(1, n_harm + 1):
        if f0 * h >= sr / 2:
            break
        x += np.sin(2 * np.pi * f0 * h * t + rng.uniform(0, 2 * np.pi)) / h
    return x


def _low_noise(rng, t, sr):
    noise = rng.standard_normal(t.size)
    cutoff = rng.uniform(250.0, 600.0)
    b, a = butter(2, cutoff / (sr / 2), btype="low")
    x = lfilter(b, a, noise)
    # burst envelope: a few smooth humps over the clip
    n_bursts = int(rng.integers(2, 5))
    env = np.zeros_like(t)
    for _ in range(n_bursts):
        center = rng.uniform(0.1, 0.9) * t[-1]
        width = rng.uniform(0.05, 0.2) * max(t[-1], 1e-3)
        env += np.exp(-0.5 * ((t - center) / width) ** 2)
    return x * (0.2 + env)


def _am_tone(rng, t, sr):
    carrier = rng.uniform(400.0, 1200.0)
    mod = rng.uniform(2.0, 8.0)
    depth = rng.uniform(0.5, 1.0)
    return (1.0 - depth / 2 + depth / 2 * np.sin(2 * np.pi * mod * t)) * np.sin(2 * np.pi * carrier * t)


def _fm_tone(rng, t, sr):
    carrier = rng.uniform(300.0, 1000.0)
    mod = rng.uniform(3.0, 10.0)
    dev = rng.uniform(50.0, 200.0)
    phase = 2 * np.pi * carrier * t - dev / mod * np.cos(2 * np.pi * mod * t)
    return np.sin(phase)


_GENERATORS = (_sine_sweep, _harmonic_stack, _low_noise, _am_tone, _fm_tone)


def synth_corpus(seed: int, n_clips: int, sample_rate: int, seconds: float) -> list[CorpusClip]:
    """Generate n_clips labeled synthetic clips, deterministically from seed."""
    if n_clips < 1:
        raise ValidationError("n_clips must be >= 1")
    n_samples = int(round(seconds * sample_rate))
    t = np.arange(n_samples, dtype=np.float64) / sample_rate
    out = []
    for i in range(n_clips):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, i)))
        label = i % len(_GENERATORS)
        x = _GENERATORS[label](rng, t, sample_rate)
        samples = _normalize(x, rng)
        out.append(CorpusClip(AudioClip(samples=samples, sample_rate=sample_rate), label))
    return out


def write_corpus(out_dir: str | Path, clips: list[CorpusClip]) -> Path:
    """Write clips as PCM16 WAVs plus a JSONL manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.jsonl"
    with manifest.open("w") as fh:
        for i, item in enumerate(clips):
            name = f"clip_{i:04d}_{item.label}.wav"
            save_wav(out_dir / name, item.clip)
            fh.write(json.dumps({
                "path": name,
                "label_id": item.label_id,
                "seconds": item.clip.seconds,
                "sample_rate": item.clip.sample_rate,
            }) + "\n")
    return manifest


def load_corpus(manifest_path: str | Path) -> list[CorpusClip]:
    """Load the clips referenced by a manifest written by write_corpus."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    out = []
    with manifest_path.open() as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.append(CorpusClip(load_wav(root / rec["path"]), int(rec["label_id"])))
    if not out:
        raise ValidationError(f"empty manifest {manifest_path}")
    return out
