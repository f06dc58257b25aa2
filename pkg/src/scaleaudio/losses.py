"""Stage-1 training objectives: waveform, mel, quantizer, and GAN losses."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .audio import AudioClip
from .exceptions import DivergenceError, ValidationError
from .spectral import SpectralConfig, mel_tensor, stft_tensor

DISC_WINDOWS = (2048, 1024, 512)


@dataclass
class LossWeights:
    lambda_t: float = 0.1
    lambda_f: float = 3.0
    lambda_g: float = 3.0
    lambda_com: float = 1.0


def _as_wave(x, expected_rate: int | None = None) -> tuple[torch.Tensor, int | None]:
    if isinstance(x, AudioClip):
        if expected_rate is not None and x.sample_rate != expected_rate:
            raise ValidationError("sample rates differ")
        return torch.from_numpy(x.samples), x.sample_rate
    return torch.as_tensor(x), expected_rate


def _pair(a, a_hat, sample_rate=None):
    wa, rate = _as_wave(a)
    wb, rate2 = _as_wave(a_hat)
    rate = rate or rate2 or sample_rate
    if rate2 is not None and rate != rate2:
        raise ValidationError("sample rates differ")
    if wa.shape != wb.shape:
        raise ValidationError(f"length mismatch {tuple(wa.shape)} vs {tuple(wb.shape)}")
    return wa, wb, rate


def loss_time(a, a_hat) -> torch.Tensor:
    """Mean absolute sample error."""
    wa, wb, _ = _pair(a, a_hat)
    return (wa - wb).abs().mean()


def loss_freq(a, a_hat, cfg: SpectralConfig, sample_rate: int | None = None) -> torch.Tensor:
    """Multi-resolution mel loss: per scale, mean L1 plus mean squared L2."""
    wa, wb, rate = _pair(a, a_hat, sample_rate)
    if rate is None:
        raise ValidationError("sample_rate required for tensor inputs")
    total = wa.new_zeros(())
    for i in range(cfg.n_scales):
        sa = mel_tensor(wa, rate, cfg.window_sizes[i], cfg.hops[i], cfg.mel_bins[i])
        sb = mel_tensor(wb, rate, cfg.window_sizes[i], cfg.hops[i], cfg.mel_bins[i])
        diff = sa - sb
        total = total + diff.abs().mean() + diff.pow(2).mean()
    return total


def loss_vq_commit(x_list: list[torch.Tensor], z_list: list[torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
    """Quantization and commitment losses summed over stages.

    Per stage: squared L2 per vector, averaged over vectors. The stop-gradient
    sides follow the usual convention, so with EMA codebooks the first term
    carries no gradient and is reported only.
    """
    if len(x_list) != len(z_list):
        raise ValidationError("stage lists must align")
    l_vq = x_list[0].new_zeros(())
    l_com = x_list[0].new_zeros(())
    for x, z in zip(x_list, z_list):
        if x.shape != z.shape:
            raise ValidationError("stage shapes must match")
        l_vq = l_vq + (x.detach() - z).pow(2).sum(-1).mean()
        l_com = l_com + (x - z.detach()).pow(2).sum(-1).mean()
    return l_vq, l_com


class _DiscTower(nn.Module):
    """Conv stack over one complex STFT resolution."""

    def __init__(self, channels: int):
        super().__init__()
        self.convs = nn.ModuleList([
            nn.Conv2d(2, channels, (3, 9), padding=(1, 4)),
            nn.Conv2d(channels, channels * 2, (3, 9), stride=(2, 2), padding=(1, 4)),
            nn.Conv2d(channels * 2, channels * 4, (3, 9), stride=(2, 2), padding=(1, 4)),
        ])
        self.out = nn.Conv2d(channels * 4, 1, (3, 3), padding=(1, 1))

    def forward(self, spec: torch.Tensor) -> torch.Tensor:
        x = spec
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
        return self.out(x)


class StftDiscriminator(nn.Module):
    """Multi-resolution discriminator over complex STFTs."""

    def __init__(self, windows: tuple[int, ...] = DISC_WINDOWS, channels: int = 16):
        super().__init__()
        self.windows = tuple(windows)
        self.towers = nn.ModuleList(_DiscTower(channels) for _ in self.windows)

    def forward(self, wave: torch.Tensor) -> list[torch.Tensor]:
        """One (B, 1, F', T') logit map per resolution."""
        if wave.ndim == 1:
            wave = wave.unsqueeze(0)
        if wave.shape[-1] < max(self.windows):
            raise ValidationError(
                f"clip length {wave.shape[-1]} < largest window {max(self.windows)}"
            )
        out = []
        for window, tower in zip(self.windows, self.towers):
            spec = stft_tensor(wave, window, window // 4)
            x = torch.stack([spec.real, spec.imag], dim=1)
            out.append(tower(x))
        return out

    @property
    def num_params(self) -> int:
        return sum(p.numel() for p in self.parameters())


def disc_forward(disc: StftDiscriminator, clip) -> list[torch.Tensor]:
    """Logit maps for a single clip, one (F', T') tensor per resolution."""
    wave, _ = _as_wave(clip)
    with torch.no_grad():
        maps = disc(wave.unsqueeze(0) if wave.ndim == 1 else wave)
    return [m.squeeze(0).squeeze(0) for m in maps]


def loss_adversarial(real_logits: list[torch.Tensor], fake_logits: list[torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
    """Hinge GAN losses averaged over resolutions."""
    if len(real_logits) != len(fake_logits):
        raise ValidationError("resolution counts must match")
    l_d = real_logits[0].new_zeros(())
    l_g = real_logits[0].new_zeros(())
    for real, fake in zip(real_logits, fake_logits):
        l_d = l_d + F.relu(1.0 - real).mean() + F.relu(1.0 + fake).mean()
        l_g = l_g - fake.mean()
    n = len(real_logits)
    return l_d / n, l_g / n


def total_stage1_loss(parts: dict, w: LossWeights) -> torch.Tensor:
    """Weighted stage-1 objective; raises if any part is non-finite."""
    for name, value in parts.items():
        value = torch.as_tensor(value)
        if not torch.isfinite(value).all():
            raise DivergenceError(f"non-finite loss part {name}: {value}")
    zero = torch.as_tensor(0.0)
    t = parts.get("time", zero)
    f = parts.get("freq", zero)
    g = parts.get("adv", zero)
    vq = parts.get("vq", zero)
    com = parts.get("commit", zero)
    return w.lambda_t * t + w.lambda_f * f + w.lambda_g * g + vq + w.lambda_com * com
