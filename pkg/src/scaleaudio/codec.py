"""Convolutional waveform codec wrapped around the multi-scale quantizer.

The encoder strides multiply to 320, so a 1 s window at 24 kHz produces 75
latent frames; the decoder mirrors the encoder with transposed convolutions
and restores exactly window_samples samples.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .audio import AudioClip
from .config import CodecSection
from .exceptions import ValidationError
from .pyramid import TokenPyramid
from .quantize import MultiScaleQuantizer, msrq_decode, msrq_encode


class StridedConv1d(nn.Module):
    """Stride-s conv with asymmetric padding so length divides exactly by s."""

    def __init__(self, in_ch: int, out_ch: int, stride: int):
        super().__init__()
        kernel = 2 * stride
        pad = kernel - stride
        self.pad = (pad - pad // 2, pad // 2)
        self.conv = nn.Conv1d(in_ch, out_ch, kernel, stride=stride)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(F.pad(x, self.pad))


class StridedConvTranspose1d(nn.Module):
    """Stride-s transposed conv trimmed to exactly s times the input length."""

    def __init__(self, in_ch: int, out_ch: int, stride: int):
        super().__init__()
        kernel = 2 * stride
        self.trim = kernel - stride
        self.conv = nn.ConvTranspose1d(in_ch, out_ch, kernel, stride=stride)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.conv(x)
        left = self.trim - self.trim // 2
        return y[..., left : y.shape[-1] - self.trim // 2]


class ResidualUnit(nn.Module):
    def __init__(self, channels: int, dilation: int = 1):
        super().__init__()
        self.conv1 = nn.Conv1d(channels, channels, 3, padding=dilation, dilation=dilation)
        self.conv2 = nn.Conv1d(channels, channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.conv1(F.elu(x))
        y = self.conv2(F.elu(y))
        return x + y


class Encoder(nn.Module):
    """(B, T) waveform to (B, T / prod(strides), latent_dim)."""

    def __init__(self, base_channels: int, strides: tuple[int, ...], latent_dim: int):
        super().__init__()
        layers: list[nn.Module] = [nn.Conv1d(1, base_channels, 7, padding=3)]
        ch = base_channels
        for s in strides:
            layers.append(ResidualUnit(ch))
            layers.append(StridedConv1d(ch, ch * 2, s))
            ch *= 2
        layers.append(ResidualUnit(ch))
        layers.append(nn.Conv1d(ch, latent_dim, 3, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, wave: torch.Tensor) -> torch.Tensor:
        return self.net(wave.unsqueeze(1)).transpose(1, 2)


class Decoder(nn.Module):
    """(B, frames, latent_dim) back to (B, frames * prod(strides)) waveform."""

    def __init__(self, base_channels: int, strides: tuple[int, ...], latent_dim: int):
        super().__init__()
        ch = base_channels * (2 ** len(strides))
        layers: list[nn.Module] = [nn.Conv1d(latent_dim, ch, 7, padding=3)]
        for s in reversed(strides):
            layers.append(ResidualUnit(ch))
            layers.append(StridedConvTranspose1d(ch, ch // 2, s))
            ch //= 2
        layers.append(ResidualUnit(ch))
        layers.append(nn.Conv1d(ch, 1, 7, padding=3))
        self.net = nn.Sequential(*layers)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        return self.net(f.transpose(1, 2)).squeeze(1)


class SatModel(nn.Module):
    """Stage-1 artifact: encoder, decoder, codebooks, refinement kernels, schedule."""

    def __init__(self, cfg: CodecSection):
        super().__init__()
        cfg.validate()
        self.config = cfg
        self.schedule = cfg.schedule()
        self.encoder = Encoder(cfg.base_channels, cfg.strides, cfg.latent_dim)
        self.decoder = Decoder(cfg.base_channels, cfg.strides, cfg.latent_dim)
        self.quantizer = MultiScaleQuantizer(
            self.schedule, cfg.vocab_size, cfg.latent_dim,
            gamma=cfg.gamma, phi_grouping=cfg.phi_grouping,
            phi_group_size=cfg.phi_group_size, sharing=cfg.codebook_sharing,
            update=cfg.codebook_update, ema_decay=cfg.ema_decay,
            dead_code_epochs=cfg.dead_code_epochs,
        )

    @property
    def sample_rate(self) -> int:
        return self.config.sample_rate

    @property
    def window_samples(self) -> int:
        return self.config.window_samples

    @property
    def vocab(self) -> int:
        return self.config.vocab_size

    def forward(self, wave: torch.Tensor, update_codebooks: bool = False) -> dict:
        """Training pass: returns recon plus per-stage tensors for the losses."""
        f = self.encoder(wave)
        f_hat, idx_list, x_list, z_list, residual = self.quantizer.encode(
            f, update=update_codebooks)
        recon = self.decoder(f_hat)
        return {"recon": recon, "latent": f, "latent_hat": f_hat, "residual": residual,
                "indices": idx_list, "x_list": x_list, "z_list": z_list}

    def _check_clip(self, clip: AudioClip) -> None:
        if clip.sample_rate != self.sample_rate:
            raise ValidationError(
                f"clip rate {clip.sample_rate} != model rate {self.sample_rate}"
            )
        if len(clip) != self.window_samples:
            raise ValidationError(
                f"clip length {len(clip)} != model window {self.window_samples}"
            )

    @torch.no_grad()
    def encode_audio(self, clip: AudioClip) -> TokenPyramid:
        self._check_clip(clip)
        wave = torch.from_numpy(clip.samples).unsqueeze(0)
        f = self.encoder(wave).squeeze(0)
        pyramid, _ = msrq_encode(f, self)
        return pyramid

    @torch.no_grad()
    def decode_audio(self, pyramid: TokenPyramid) -> AudioClip:
        f_hat = msrq_decode(pyramid, self)
        wave = self.decoder(f_hat.unsqueeze(0)).squeeze(0)
        samples = wave.clamp(-1.0, 1.0).numpy()
        return AudioClip(samples=samples, sample_rate=self.sample_rate)

    def digest(self) -> str:
        """Hash of config and all tensors; binds stage-2 artifacts to this codec."""
        h = hashlib.sha256()
        h.update(json.dumps(
            {f: getattr(self.config, f) for f in self.config.__dataclass_fields__},
            sort_keys=True, default=list).encode())
        state = self.state_dict()
        for name in sorted(state):
            h.update(name.encode())
            h.update(state[name].detach().cpu().numpy().tobytes())
        return h.hexdigest()


def codebook_utilization(pyramids: list[TokenPyramid], model: SatModel) -> list[float]:
    """Fraction of codebook rows observed per scale across the pyramids."""
    if not pyramids:
        raise ValidationError("need at least one pyramid")
    K = model.schedule.K
    out = []
    for k in range(K):
        seen: set[int] = set()
        for p in pyramids:
            if p.schedule.lengths != model.schedule.lengths:
                raise ValidationError("pyramid schedule does not match the model")
            seen.update(np.unique(p.scales[k]).tolist())
        out.append(len(seen) / model.vocab)
    return out
