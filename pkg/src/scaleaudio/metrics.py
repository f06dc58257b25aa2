"""Reconstruction and generation metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
from scipy import linalg

from .audio import AudioClip, reassemble, segment
from .codec import SatModel, codebook_utilization
from .exceptions import ValidationError
from .losses import _pair
from .spectral import SpectralConfig, mel_tensor, stft_tensor

log = logging.getLogger(__name__)

_LOG_MAG_EPS = 1e-5


@dataclass
class EmbeddingSet:
    """A bag of embedding vectors with a provenance tag."""

    vectors: np.ndarray
    source: str = ""

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ValidationError("embeddings must be a 2-D (n, e) matrix")
        if not np.all(np.isfinite(self.vectors)):
            raise ValidationError("embeddings must be finite")


def mel_distance(a, a_hat, cfg: SpectralConfig, sample_rate: int | None = None) -> float:
    """Mean L1 over the multi-scale mel features (the L1 part of the mel loss)."""
    wa, wb, rate = _pair(a, a_hat, sample_rate)
    if rate is None:
        raise ValidationError("sample_rate required for tensor inputs")
    total = 0.0
    with torch.no_grad():
        for i in range(cfg.n_scales):
            sa = mel_tensor(wa, rate, cfg.window_sizes[i], cfg.hops[i], cfg.mel_bins[i])
            sb = mel_tensor(wb, rate, cfg.window_sizes[i], cfg.hops[i], cfg.mel_bins[i])
            total += float((sa - sb).abs().mean())
    return total


def stft_distance(a, a_hat, cfg: SpectralConfig, sample_rate: int | None = None) -> float:
    """Mean L1 between log-magnitude STFTs, averaged over the config windows."""
    wa, wb, _ = _pair(a, a_hat, sample_rate)
    total = 0.0
    with torch.no_grad():
        for window, hop in zip(cfg.window_sizes, cfg.hops):
            sa = stft_tensor(wa, window, hop).abs().add(_LOG_MAG_EPS).log()
            sb = stft_tensor(wb, window, hop).abs().add(_LOG_MAG_EPS).log()
            total += float((sa - sb).abs().mean())
    return total / cfg.n_scales


def _moments(vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = vectors.mean(axis=0)
    cov = np.cov(vectors, rowvar=False)
    if cov.ndim == 0:  # 1-D embeddings
        cov = cov.reshape(1, 1)
    return mu, cov


def frechet_distance(p: EmbeddingSet | np.ndarray, q: EmbeddingSet | np.ndarray,
                     jitter: float = 1e-6) -> float:
    """2-Wasserstein distance between Gaussians fit to two embedding sets.

    ||mu_p - mu_q||^2 + tr(C_p + C_q - 2 (C_p C_q)^(1/2)). Degenerate
    covariances get a diagonal jitter retry.
    """
    P = p.vectors if isinstance(p, EmbeddingSet) else np.asarray(p, dtype=np.float64)
    Q = q.vectors if isinstance(q, EmbeddingSet) else np.asarray(q, dtype=np.float64)
    if P.ndim == 1:
        P = P[:, None]
    if Q.ndim == 1:
        Q = Q[:, None]
    if P.shape[0] < 2 or Q.shape[0] < 2:
        raise ValidationError("each embedding set needs at least 2 vectors")
    if P.shape[1] != Q.shape[1]:
        raise ValidationError("embedding dimensions differ")

    mu_p, cov_p = _moments(P)
    mu_q, cov_q = _moments(Q)

    def cross_sqrt_trace(cp, cq):
        s, _ = linalg.sqrtm(cp @ cq, disp=False)
        if np.iscomplexobj(s):
            if np.abs(s.imag).max() > 1e-6 * max(1.0, np.abs(s.real).max()):
                return None
            s = s.real
        if not np.all(np.isfinite(s)):
            return None
        return float(np.trace(s))

    tr = cross_sqrt_trace(cov_p, cov_q)
    if tr is None:
        log.warning("degenerate covariance in frechet_distance; applying jitter %g", jitter)
        eye = np.eye(cov_p.shape[0])
        tr = cross_sqrt_trace(cov_p + jitter * eye, cov_q + jitter * eye)
        if tr is None:
            raise ValidationError("covariance square root failed even with jitter")
    diff = mu_p - mu_q
    return float(diff @ diff + np.trace(cov_p) + np.trace(cov_q) - 2.0 * tr)


def embeddings_from_clips(clips: list[AudioClip], conditioner, source: str = "stub") -> EmbeddingSet:
    """Embed clips with a conditioner; not comparable to published FAD numbers."""
    return EmbeddingSet(
        vectors=np.stack([conditioner.embed(c) for c in clips]), source=source
    )


@dataclass
class ReconstructionReport:
    per_clip: list[dict]
    mean_mel: float
    mean_stft: float
    utilization: list[float]
    tokens_per_clip: int

    def to_records(self) -> list[dict]:
        rows = [dict(kind="clip", **row) for row in self.per_clip]
        rows.append({
            "kind": "summary",
            "mean_mel": self.mean_mel,
            "mean_stft": self.mean_stft,
            "utilization": self.utilization,
            "tokens_per_clip": self.tokens_per_clip,
        })
        return rows


@torch.no_grad()
def eval_reconstruction(model: SatModel, clips: list[AudioClip],
                        cfg: SpectralConfig | None = None) -> ReconstructionReport:
    """Segment, encode, decode, reassemble each clip and aggregate distances."""
    cfg = cfg or SpectralConfig()
    model.eval()
    per_clip = []
    pyramids = []
    for i, clip in enumerate(clips):
        if clip.sample_rate != model.sample_rate:
            raise ValidationError("clip rate does not match the model")
        windows = segment(clip, model.config.window_seconds)
        recon_parts = []
        clip_tokens = 0
        for w in windows:
            pyr = model.encode_audio(w)
            pyramids.append(pyr)
            clip_tokens += pyr.total_tokens
            recon_parts.append(model.decode_audio(pyr))
        recon = reassemble(recon_parts, original_length=len(clip))
        per_clip.append({
            "clip": i,
            "mel": mel_distance(clip, recon, cfg),
            "stft": stft_distance(clip, recon, cfg),
            "tokens": clip_tokens,
            "windows": len(windows),
        })
    return ReconstructionReport(
        per_clip=per_clip,
        mean_mel=float(np.mean([r["mel"] for r in per_clip])),
        mean_stft=float(np.mean([r["stft"] for r in per_clip])),
        utilization=codebook_utilization(pyramids, model),
        tokens_per_clip=per_clip[0]["tokens"] if per_clip else 0,
    )
