"""Decoder-only transformers for scale-level and token-level generation.

The scale-level model predicts every token of scale k in one step, attending
to all earlier scales through a block-causal mask. Conditioning enters twice:
as the first input block and through adaptive layer normalization. Queries and
keys are unit-normalized with a learned per-head temperature before attention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .codec import SatModel
from .exceptions import ValidationError
from .pyramid import TokenPyramid
from .quantize import interpolate_tokens
from .schedule import ScaleSchedule

_MAX_ATTN_TEMP = 100.0


@dataclass
class AarConfig:
    """Scale-level transformer hyperparameters."""

    lengths: tuple[int, ...]
    depth: int = 6
    width: int = 256
    heads: int = 8
    vocab: int = 1024
    cond_dim: int = 64
    latent_dim: int = 64
    cfg_drop_prob: float = 0.1
    mlp_ratio: float = 4.0
    use_pos_emb: bool = True
    cumulative_inputs: bool = False

    def __post_init__(self):
        self.lengths = tuple(int(l) for l in self.lengths)
        if self.depth < 1:
            raise ValidationError("depth must be >= 1")
        if self.width % self.heads != 0:
            raise ValidationError("width must be divisible by heads")

    @property
    def K(self) -> int:
        return len(self.lengths)

    @property
    def total_positions(self) -> int:
        return sum(self.lengths)


@dataclass
class TokenConfig:
    """Next-token baseline hyperparameters."""

    total_tokens: int
    depth: int = 6
    width: int = 256
    heads: int = 8
    vocab: int = 1024
    cond_dim: int = 64
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ValidationError("width must be divisible by heads")


@dataclass
class ScaleSequence:
    """Teacher-forcing view of one pyramid.

    features holds the codec-space inputs for blocks 2..K; the model supplies
    the condition block and the learned projections/embeddings.
    """

    cond: np.ndarray
    features: torch.Tensor
    targets: torch.Tensor
    block_ids: torch.Tensor
    lengths: tuple[int, ...] = field(default=())

    def __post_init__(self):
        n = sum(self.lengths)
        if self.targets.shape != (n,) or self.block_ids.shape != (n,):
            raise ValidationError("targets/block_ids must cover every position")
        if self.features.shape[0] != n - self.lengths[0]:
            raise ValidationError("features must cover blocks 2..K")


def build_block_mask(schedule: ScaleSchedule | tuple[int, ...]) -> torch.Tensor:
    """Boolean (N, N) mask: position p may attend to q iff block(q) <= block(p)."""
    lengths = schedule.lengths if isinstance(schedule, ScaleSchedule) else tuple(schedule)
    ids = torch.cat([torch.full((l,), k, dtype=torch.long) for k, l in enumerate(lengths)])
    return ids.unsqueeze(1) >= ids.unsqueeze(0)


def block_id_vector(lengths: tuple[int, ...]) -> torch.Tensor:
    return torch.cat([torch.full((l,), k, dtype=torch.long) for k, l in enumerate(lengths)])


@torch.no_grad()
def next_block_features(sat: SatModel, scale_indices: torch.Tensor, k: int,
                        next_len: int, state: torch.Tensor | None = None,
                        cumulative: bool = False):
    """Codec-space input for block k+1 given scale k's token indices.

    Literal mode re-embeds only scale k's selection: lookup, upsample to the
    top resolution, resample to the next block length, refine. Cumulative mode
    instead resamples the running reconstruction. Returns (features, state).
    """
    z = sat.quantizer.codebook_for(k).weight[scale_indices.reshape(-1)]
    z_up = interpolate_tokens(z, sat.schedule.top_length)
    if cumulative:
        contrib = sat.quantizer.phi(z_up, k)
        state = contrib if state is None else state + contrib
        return interpolate_tokens(state, next_len), state
    feat = sat.quantizer.phi(interpolate_tokens(z_up, next_len), k)
    return feat, state


@torch.no_grad()
def build_teacher_sequence(pyramid: TokenPyramid, sat: SatModel, cond: np.ndarray,
                           cumulative: bool = False) -> ScaleSequence:
    """Assemble the training sequence for one pyramid under the frozen codec."""
    lengths = pyramid.schedule.lengths
    if lengths != sat.schedule.lengths:
        raise ValidationError("pyramid schedule does not match the codec")
    pyramid.validate_vocab(sat.vocab)
    targets = torch.from_numpy(pyramid.flatten().copy())
    block_ids = block_id_vector(lengths)
    feats = []
    state = None
    for k in range(1, len(lengths)):
        idx = torch.from_numpy(pyramid.scales[k - 1].copy())
        feat, state = next_block_features(sat, idx, k, lengths[k],
                                          state=state, cumulative=cumulative)
        feats.append(feat)
    features = (torch.cat(feats, dim=0) if feats
                else torch.zeros(0, sat.config.latent_dim))
    return ScaleSequence(cond=np.asarray(cond, dtype=np.float32), features=features,
                         targets=targets, block_ids=block_ids, lengths=lengths)


class Attention(nn.Module):
    """Multi-head attention with unit-normalized q/k and learned temperature."""

    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = width // heads
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)
        self.log_temp = nn.Parameter(
            torch.full((heads, 1, 1), math.log(math.sqrt(self.head_dim)))
        )

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None,
                cache: dict | None = None, return_attn: bool = False):
        B, L, _ = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        shape = (B, L, self.heads, self.head_dim)
        q = F.normalize(q.view(shape).transpose(1, 2), dim=-1)
        k = F.normalize(k.view(shape).transpose(1, 2), dim=-1)
        v = v.view(shape).transpose(1, 2)
        if cache is not None:
            if "k" in cache:
                k = torch.cat([cache["k"], k], dim=2)
                v = torch.cat([cache["v"], v], dim=2)
            cache["k"], cache["v"] = k, v
        temp = self.log_temp.clamp(max=math.log(_MAX_ATTN_TEMP)).exp()
        scores = (q @ k.transpose(-1, -2)) * temp
        if mask is not None:
            scores = scores.masked_fill(~mask, float("-inf"))
        weights = scores.softmax(dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(B, L, -1)
        out = self.proj(out)
        return (out, weights) if return_attn else (out, None)


class AdaLNBlock(nn.Module):
    """Pre-norm transformer block modulated by the condition vector."""

    def __init__(self, width: int, heads: int, mlp_ratio: float, depth: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(width, elementwise_affine=False)
        self.attn = Attention(width, heads)
        self.ln2 = nn.LayerNorm(width, elementwise_affine=False)
        hidden = int(width * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(width, hidden), nn.GELU(), nn.Linear(hidden, width))
        self.ada = nn.Linear(width, 6 * width)
        nn.init.trunc_normal_(self.ada.weight, std=0.02)
        with torch.no_grad():
            self.ada.bias.zero_()
            self.ada.bias[2 * width : 3 * width] = 1.0  # attention gate
            self.ada.bias[5 * width : 6 * width] = 1.0  # mlp gate
        # residual-branch output projections scaled down with depth
        self.attn.proj.weight.data.div_(math.sqrt(2 * depth))
        self.mlp[2].weight.data.div_(math.sqrt(2 * depth))

    def forward(self, x: torch.Tensor, cond_hidden: torch.Tensor,
                mask: torch.Tensor | None = None, cache: dict | None = None,
                return_attn: bool = False):
        shift_a, scale_a, gate_a, shift_m, scale_m, gate_m = (
            self.ada(cond_hidden).unsqueeze(1).chunk(6, dim=-1)
        )
        h = self.ln1(x) * (1 + scale_a) + shift_a
        attn_out, weights = self.attn(h, mask=mask, cache=cache, return_attn=return_attn)
        x = x + gate_a * attn_out
        h = self.ln2(x) * (1 + scale_m) + shift_m
        x = x + gate_m * self.mlp(h)
        return x, weights


def _init_linear(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.trunc_normal_(m.weight, std=0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Embedding):
            nn.init.trunc_normal_(m.weight, std=0.02)


class ScaleTransformer(nn.Module):
    """Next-scale generator over token pyramids."""

    def __init__(self, cfg: AarConfig, codec_digest: str = ""):
        super().__init__()
        self.cfg = cfg
        self.codec_digest = codec_digest
        width = cfg.width
        _offsets = np.concatenate([[0], np.cumsum(cfg.lengths)])
        self.offsets = tuple(int(o) for o in _offsets)

        self.word_embed = nn.Linear(cfg.latent_dim, width)
        self.cond_proj = nn.Linear(cfg.cond_dim, width)
        self.cond_mlp = nn.Sequential(nn.Linear(cfg.cond_dim, width), nn.SiLU())
        self.null_cond = nn.Parameter(torch.zeros(cfg.cond_dim))
        self.pos_emb = nn.Parameter(torch.zeros(1, cfg.total_positions, width))
        self.scale_emb = nn.Embedding(cfg.K, width)
        self.blocks = nn.ModuleList(
            AdaLNBlock(width, cfg.heads, cfg.mlp_ratio, cfg.depth) for _ in range(cfg.depth)
        )
        self.final_ln = nn.LayerNorm(width, elementwise_affine=False)
        self.head_ada = nn.Linear(width, 2 * width)
        self.head = nn.Linear(width, cfg.vocab)

        _init_linear(self.word_embed)
        _init_linear(self.cond_proj)
        _init_linear(self.cond_mlp)
        _init_linear(self.scale_emb)
        nn.init.trunc_normal_(self.pos_emb, std=0.02)
        nn.init.trunc_normal_(self.null_cond, std=0.02)
        nn.init.trunc_normal_(self.head_ada.weight, std=0.02)
        nn.init.zeros_(self.head_ada.bias)
        nn.init.trunc_normal_(self.head.weight, std=0.01)
        nn.init.zeros_(self.head.bias)

        self.register_buffer("block_ids", block_id_vector(cfg.lengths), persistent=False)
        self.register_buffer("block_mask", build_block_mask(cfg.lengths), persistent=False)

    @property
    def num_params(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def cond_hidden(self, cond: torch.Tensor) -> torch.Tensor:
        return self.cond_mlp(cond)

    def embed_block(self, k: int, payload: torch.Tensor) -> torch.Tensor:
        """Input embeddings for 1-based block k.

        Block 1 takes the condition vector (B, cond_dim); later blocks take
        codec features (B, l_k, latent_dim).
        """
        l_k = self.cfg.lengths[k - 1]
        if k == 1:
            tok = self.cond_proj(payload).unsqueeze(1).expand(-1, l_k, -1)
        else:
            tok = self.word_embed(payload)
        off = self.offsets[k - 1]
        if self.cfg.use_pos_emb:
            tok = tok + self.pos_emb[:, off : off + l_k]
        return tok + self.scale_emb.weight[k - 1]

    def assemble(self, features: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        """Full teacher-forced input embeddings (B, N, width)."""
        parts = [self.embed_block(1, cond)]
        for k in range(2, self.cfg.K + 1):
            lo = self.offsets[k - 1] - self.cfg.lengths[0]
            hi = self.offsets[k] - self.cfg.lengths[0]
            parts.append(self.embed_block(k, features[:, lo:hi]))
        return torch.cat(parts, dim=1)

    def head_logits(self, h: torch.Tensor, cond_hidden: torch.Tensor) -> torch.Tensor:
        shift, scale = self.head_ada(cond_hidden).unsqueeze(1).chunk(2, dim=-1)
        return self.head(self.final_ln(h) * (1 + scale) + shift)

    def forward(self, features: torch.Tensor, cond: torch.Tensor,
                return_attn: bool = False):
        """Teacher-forced logits over all positions.

        features: (B, N - l_1, latent_dim) codec-space inputs for blocks 2..K;
        cond: (B, cond_dim). Returns (B, N, vocab) logits, and per-layer
        attention maps when asked.
        """
        if features.shape[1] != self.cfg.total_positions - self.cfg.lengths[0]:
            raise ValidationError("features do not match the schedule")
        x = self.assemble(features, cond)
        ch = self.cond_hidden(cond)
        attn_maps = []
        for block in self.blocks:
            x, w = block(x, ch, mask=self.block_mask, return_attn=return_attn)
            if return_attn:
                attn_maps.append(w)
        logits = self.head_logits(x, ch)
        if not torch.isfinite(logits).all():
            raise ValidationError("non-finite logits")
        return (logits, attn_maps) if return_attn else logits

    def new_cache(self) -> list[dict]:
        return [{} for _ in self.blocks]

    def forward_cached(self, x: torch.Tensor, cond_hidden: torch.Tensor,
                       cache: list[dict]) -> torch.Tensor:
        """One generation step over a new block; extends the KV cache in place.

        No mask is needed: cached positions are exactly the earlier blocks and
        attention within the current block is unrestricted.
        """
        for block, c in zip(self.blocks, cache):
            x, _ = block(x, cond_hidden, mask=None, cache=c)
        return self.head_logits(x, cond_hidden)


class TokenTransformer(nn.Module):
    """Next-token baseline over a flattened token stream."""

    def __init__(self, cfg: TokenConfig, codec_digest: str = ""):
        super().__init__()
        self.cfg = cfg
        self.codec_digest = codec_digest
        width = cfg.width
        self.tok_embed = nn.Embedding(cfg.vocab, width)
        self.cond_proj = nn.Linear(cfg.cond_dim, width)
        self.cond_mlp = nn.Sequential(nn.Linear(cfg.cond_dim, width), nn.SiLU())
        self.null_cond = nn.Parameter(torch.zeros(cfg.cond_dim))
        self.pos_emb = nn.Parameter(torch.zeros(1, cfg.total_tokens, width))
        self.blocks = nn.ModuleList(
            AdaLNBlock(width, cfg.heads, cfg.mlp_ratio, cfg.depth) for _ in range(cfg.depth)
        )
        self.final_ln = nn.LayerNorm(width, elementwise_affine=False)
        self.head_ada = nn.Linear(width, 2 * width)
        self.head = nn.Linear(width, cfg.vocab)

        _init_linear(self.tok_embed)
        _init_linear(self.cond_proj)
        _init_linear(self.cond_mlp)
        nn.init.trunc_normal_(self.pos_emb, std=0.02)
        nn.init.trunc_normal_(self.null_cond, std=0.02)
        nn.init.trunc_normal_(self.head_ada.weight, std=0.02)
        nn.init.zeros_(self.head_ada.bias)
        nn.init.trunc_normal_(self.head.weight, std=0.01)
        nn.init.zeros_(self.head.bias)

    @property
    def num_params(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def cond_hidden(self, cond: torch.Tensor) -> torch.Tensor:
        return self.cond_mlp(cond)

    def embed_position(self, pos: int, payload: torch.Tensor) -> torch.Tensor:
        """Input embedding at one position: the condition at 0, else a token."""
        if pos == 0:
            tok = self.cond_proj(payload).unsqueeze(1)
        else:
            tok = self.tok_embed(payload).unsqueeze(1)
        return tok + self.pos_emb[:, pos : pos + 1]

    def head_logits(self, h: torch.Tensor, cond_hidden: torch.Tensor) -> torch.Tensor:
        shift, scale = self.head_ada(cond_hidden).unsqueeze(1).chunk(2, dim=-1)
        return self.head(self.final_ln(h) * (1 + scale) + shift)

    def forward(self, tokens: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        """Teacher-forced logits: position i predicts tokens[:, i]."""
        B, T = tokens.shape
        if T > self.cfg.total_tokens:
            raise ValidationError("sequence longer than configured budget")
        start = self.cond_proj(cond).unsqueeze(1)
        x = torch.cat([start, self.tok_embed(tokens[:, :-1])], dim=1)
        x = x + self.pos_emb[:, :T]
        mask = torch.ones(T, T, dtype=torch.bool, device=x.device).tril()
        ch = self.cond_hidden(cond)
        for block in self.blocks:
            x, _ = block(x, ch, mask=mask)
        return self.head_logits(x, ch)

    def new_cache(self) -> list[dict]:
        return [{} for _ in self.blocks]

    def forward_cached(self, x: torch.Tensor, cond_hidden: torch.Tensor,
                       cache: list[dict]) -> torch.Tensor:
        for block, c in zip(self.blocks, cache):
            x, _ = block(x, cond_hidden, mask=None, cache=c)
        return self.head_logits(x, cond_hidden)
