"""Multi-scale residual quantization.

Each stage downsamples the running residual to its scheduled length, snaps it
to the nearest codebook row, upsamples the selection back to full resolution,
blends it through the kernel-9 refinement convolution, and subtracts the
result before the next stage. Summing every stage's contribution reconstructs
the latent.

Nearest-neighbor distances are computed in float64 so argmin decisions are
stable across platforms and match independent re-implementations.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import ValidationError
from .pyramid import TokenPyramid
from .schedule import ScaleSchedule

PHI_GROUPINGS = ("unshared", "partially_shared", "fully_shared")


def nearest_indices(x: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    """Row-wise nearest codebook index by squared L2, ties to the lowest index."""
    x64 = x.detach().to(torch.float64)
    w64 = weight.detach().to(torch.float64)
    d2 = (x64 * x64).sum(1, keepdim=True) + (w64 * w64).sum(1) - 2.0 * x64 @ w64.T
    return d2.argmin(dim=1)


class Codebook(nn.Module):
    """One vector codebook with EMA or gradient-based updates.

    EMA mode keeps the rows as buffers maintained from assignment statistics;
    loss mode exposes them as parameters so the quantization loss can move
    them. Dead rows (unused for `dead_code_epochs` consecutive epochs) are
    re-seeded from recently quantized vectors.
    """

    def __init__(self, vocab: int, dim: int, update: str = "ema",
                 ema_decay: float = 0.99, dead_code_epochs: int = 2):
        super().__init__()
        if update not in ("ema", "loss"):
            raise ValidationError(f"unknown codebook update {update!r}")
        self.vocab = vocab
        self.dim = dim
        self.update = update
        self.ema_decay = ema_decay
        self.dead_code_epochs = dead_code_epochs

        init = torch.randn(vocab, dim) / math.sqrt(dim)
        if update == "loss":
            self.weight = nn.Parameter(init)
        else:
            self.register_buffer("weight", init)
        self.register_buffer("ema_count", torch.ones(vocab))
        self.register_buffer("ema_sum", init.clone())
        self.register_buffer("used_this_epoch", torch.zeros(vocab, dtype=torch.bool))
        self.register_buffer("unused_epochs", torch.zeros(vocab, dtype=torch.long))

    def lookup(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Map rows of x to (indices, selected codebook rows)."""
        if x.shape[-1] != self.dim:
            raise ValidationError(f"query dim {x.shape[-1]} != codebook dim {self.dim}")
        idx = nearest_indices(x, self.weight)
        return idx, self.weight[idx]

    @torch.no_grad()
    def ema_update(self, x: torch.Tensor, idx: torch.Tensor) -> None:
        if self.update != "ema":
            return
        counts = torch.bincount(idx, minlength=self.vocab).to(x.dtype)
        sums = torch.zeros_like(self.ema_sum)
        sums.index_add_(0, idx, x)
        d = self.ema_decay
        self.ema_count.mul_(d).add_(counts, alpha=1 - d)
        self.ema_sum.mul_(d).add_(sums, alpha=1 - d)
        # Laplace smoothing keeps rarely used rows finite
        n = self.ema_count.sum()
        smoothed = (self.ema_count + 1e-5) / (n + self.vocab * 1e-5) * n
        self.weight.copy_(self.ema_sum / smoothed.unsqueeze(1))
        self.used_this_epoch |= counts > 0

    @torch.no_grad()
    def end_epoch(self, pool: torch.Tensor | None, generator: torch.Generator | None = None) -> int:
        """Advance dead-code bookkeeping; re-seed long-unused rows from pool."""
        self.unused_epochs = torch.where(
            self.used_this_epoch, torch.zeros_like(self.unused_epochs), self.unused_epochs + 1
        )
        dead = self.unused_epochs >= self.dead_code_epochs
        n_dead = int(dead.sum())
        if n_dead and pool is not None and pool.shape[0] > 0:
            pick = torch.randint(pool.shape[0], (n_dead,), generator=generator)
            fresh = pool[pick].to(self.weight.dtype)
            self.weight[dead] = fresh
            self.ema_sum[dead] = fresh
            self.ema_count[dead] = 1.0
            self.unused_epochs[dead] = 0
        self.used_this_epoch.zero_()
        return n_dead

    @torch.no_grad()
    def reseed_all(self, pool: torch.Tensor, generator: torch.Generator | None = None) -> None:
        """Initialize every row from data samples (used once at training start)."""
        pick = torch.randint(pool.shape[0], (self.vocab,), generator=generator)
        fresh = pool[pick].to(self.weight.dtype)
        self.weight.copy_(fresh)
        self.ema_sum.copy_(fresh)
        self.ema_count.fill_(1.0)


def vq_lookup(x: torch.Tensor, codebook: Codebook) -> tuple[torch.Tensor, torch.Tensor]:
    """Nearest-codebook-row lookup for an (l, d) matrix."""
    return codebook.lookup(x)


def interpolate_tokens(f: torch.Tensor, target_len: int) -> torch.Tensor:
    """Linear time-axis interpolation (align-corners) of (l, d) or (B, l, d)."""
    if target_len < 1:
        raise ValidationError("target_len must be >= 1")
    if f.ndim == 2:
        return interpolate_tokens(f.unsqueeze(0), target_len).squeeze(0)
    B, l, d = f.shape
    if target_len == l:
        return f
    if l == 1:
        return f.expand(B, target_len, d).contiguous()
    out = F.interpolate(f.transpose(1, 2), size=target_len, mode="linear", align_corners=True)
    return out.transpose(1, 2)


class PhiUpsampler(nn.Module):
    """Post-interpolation refinement: gamma * conv(x) + (1 - gamma) * x.

    One kernel-9 convolution per group of quantization stages. Grouping is
    unshared (per stage), partially_shared (about `group_size` stages per
    kernel), or fully_shared.
    """

    def __init__(self, n_scales: int, dim: int, gamma: float = 0.5,
                 grouping: str = "partially_shared", group_size: int = 3):
        super().__init__()
        if grouping not in PHI_GROUPINGS:
            raise ValidationError(f"unknown phi grouping {grouping!r}")
        if not 0.0 <= gamma <= 1.0:
            raise ValidationError("gamma must be in [0, 1]")
        self.n_scales = n_scales
        self.gamma = gamma
        self.grouping = grouping
        self.group_size = group_size
        if grouping == "unshared":
            n_groups = n_scales
        elif grouping == "fully_shared":
            n_groups = 1
        else:
            n_groups = math.ceil(n_scales / group_size)
        self.convs = nn.ModuleList(
            nn.Conv1d(dim, dim, kernel_size=9, padding=4, bias=False) for _ in range(n_groups)
        )
        for conv in self.convs:
            nn.init.dirac_(conv.weight)
            conv.weight.data.add_(0.01 * torch.randn_like(conv.weight))

    def group_of(self, scale_index: int) -> int:
        """Kernel group for a 1-based stage index."""
        if not 1 <= scale_index <= self.n_scales:
            raise ValidationError(f"scale_index {scale_index} out of [1, {self.n_scales}]")
        if self.grouping == "unshared":
            return scale_index - 1
        if self.grouping == "fully_shared":
            return 0
        return (scale_index - 1) // self.group_size

    def forward(self, z: torch.Tensor, scale_index: int) -> torch.Tensor:
        if self.gamma == 0.0:
            return z
        squeeze = z.ndim == 2
        if squeeze:
            z = z.unsqueeze(0)
        conv = self.convs[self.group_of(scale_index)]
        y = conv(z.transpose(1, 2)).transpose(1, 2)
        out = self.gamma * y + (1.0 - self.gamma) * z
        return out.squeeze(0) if squeeze else out


def phi_apply(phi: PhiUpsampler, scale_index: int, z_up: torch.Tensor) -> torch.Tensor:
    """Apply the stage's refinement kernel; length-preserving."""
    return phi(z_up, scale_index)


class MultiScaleQuantizer(nn.Module):
    """The residual quantization cascade over a scale schedule."""

    def __init__(self, schedule: ScaleSchedule, vocab: int, dim: int,
                 gamma: float = 0.5, phi_grouping: str = "partially_shared",
                 phi_group_size: int = 3, sharing: str = "per_scale",
                 update: str = "ema", ema_decay: float = 0.99, dead_code_epochs: int = 2):
        super().__init__()
        if sharing not in ("per_scale", "shared"):
            raise ValidationError(f"unknown codebook sharing {sharing!r}")
        self.schedule = schedule
        self.vocab = vocab
        self.dim = dim
        self.sharing = sharing
        n_books = schedule.K if sharing == "per_scale" else 1
        self.codebooks = nn.ModuleList(
            Codebook(vocab, dim, update=update, ema_decay=ema_decay,
                     dead_code_epochs=dead_code_epochs)
            for _ in range(n_books)
        )
        self.phi = PhiUpsampler(schedule.K, dim, gamma=gamma,
                                grouping=phi_grouping, group_size=phi_group_size)

    def codebook_for(self, scale_index: int) -> Codebook:
        """Codebook of a 1-based stage."""
        return self.codebooks[scale_index - 1 if self.sharing == "per_scale" else 0]

    def encode(self, f: torch.Tensor, update: bool = False):
        """Quantize a (B, top_length, dim) latent batch.

        Returns (f_hat, index list, per-stage quantizer inputs, per-stage raw
        codebook selections, final residual). The residual is maintained as
        f - f_hat so the telescoping identity holds exactly in floating point.
        In a grad-enabled context the straight-through convention routes
        gradients around the lookup.
        """
        B, l, d = f.shape
        if l != self.schedule.top_length:
            raise ValidationError(f"latent length {l} != top_length {self.schedule.top_length}")
        straight_through = torch.is_grad_enabled() and f.requires_grad
        residual = f
        f_hat = torch.zeros_like(f)
        idx_list, x_list, z_list = [], [], []
        for k, l_k in enumerate(self.schedule.lengths, start=1):
            x_k = interpolate_tokens(residual, l_k) if l_k != l else residual
            flat = x_k.reshape(-1, d)
            idx, z = self.codebook_for(k).lookup(flat)
            if update:
                self.codebook_for(k).ema_update(flat.detach(), idx)
            z = z.view(B, l_k, d)
            z_q = x_k + (z - x_k).detach() if straight_through else z
            z_up = interpolate_tokens(z_q, l) if l_k != l else z_q
            f_hat = f_hat + self.phi(z_up, k)
            residual = f - f_hat
            idx_list.append(idx.view(B, l_k))
            x_list.append(x_k)
            z_list.append(z)
        return f_hat, idx_list, x_list, z_list, residual

    def decode(self, idx_list: list[torch.Tensor]) -> torch.Tensor:
        """Rebuild the latent from (B, l_k) index tensors."""
        if len(idx_list) != self.schedule.K:
            raise ValidationError("index list does not match schedule")
        B = idx_list[0].shape[0]
        l = self.schedule.top_length
        f_hat = torch.zeros(B, l, self.dim, dtype=self.codebooks[0].weight.dtype,
                            device=idx_list[0].device)
        for k, (idx, l_k) in enumerate(zip(idx_list, self.schedule.lengths), start=1):
            if idx.shape != (B, l_k):
                raise ValidationError(f"scale {k} indices have shape {tuple(idx.shape)}")
            if int(idx.max()) >= self.vocab or int(idx.min()) < 0:
                raise ValidationError(f"scale {k} index out of range [0, {self.vocab})")
            z = self.codebook_for(k).weight[idx.reshape(-1)].view(B, l_k, self.dim)
            z_up = interpolate_tokens(z, l) if l_k != l else z
            f_hat = f_hat + self.phi(z_up, k)
        return f_hat

    def end_epoch(self, pool: torch.Tensor | None, generator: torch.Generator | None = None) -> int:
        return sum(cb.end_epoch(pool, generator) for cb in self.codebooks)


def _quantizer_of(model) -> MultiScaleQuantizer:
    return model.quantizer if hasattr(model, "quantizer") else model


def msrq_encode(f: torch.Tensor, model) -> tuple[TokenPyramid, torch.Tensor]:
    """Quantize one (top_length, dim) latent into a token pyramid.

    Also returns the reconstructed latent; msrq_decode of the returned pyramid
    reproduces it bit-for-bit.
    """
    q = _quantizer_of(model)
    with torch.no_grad():
        f_hat, idx_list, _, _, _ = q.encode(f.unsqueeze(0), update=False)
    pyramid = TokenPyramid(
        scales=[i.squeeze(0).cpu().numpy() for i in idx_list], schedule=q.schedule
    )
    return pyramid, f_hat.squeeze(0)


def msrq_decode(pyramid: TokenPyramid, model) -> torch.Tensor:
    """Deterministically rebuild the (top_length, dim) latent from a pyramid."""
    q = _quantizer_of(model)
    if pyramid.schedule.lengths != q.schedule.lengths:
        raise ValidationError(
            f"pyramid lengths {pyramid.schedule.lengths} != model schedule {q.schedule.lengths}"
        )
    pyramid.validate_vocab(q.vocab)
    idx_list = [torch.from_numpy(s.copy()).unsqueeze(0) for s in pyramid.scales]
    with torch.no_grad():
        f_hat = q.decode(idx_list)
    return f_hat.squeeze(0)
