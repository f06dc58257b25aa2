"""Inference: next-scale generation, the next-token baseline, and benchmarks.

Classifier-free guidance runs the conditional and unconditional streams as two
rows of one batched forward, so each autoregressive iteration costs a single
model invocation in both benchmark arms. KV caches are enabled for both.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from statistics import median

import numpy as np
import torch

from .audio import AudioClip
from .codec import SatModel
from .exceptions import ValidationError
from .pyramid import TokenPyramid
from .transformer import ScaleTransformer, TokenTransformer, next_block_features


@dataclass
class SamplerConfig:
    """Sampling knobs. With both filters set, top-k applies before top-p.

    temperature 0 is the greedy (argmax) limit.
    """

    cfg_scale: float = 2.0
    top_k: int | None = 200
    top_p: float | None = 0.95
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.cfg_scale < 0:
            raise ValidationError("cfg_scale must be >= 0")
        if self.top_k is not None and self.top_k < 1:
            raise ValidationError("top_k must be >= 1")
        if self.top_p is not None and not 0 < self.top_p <= 1:
            raise ValidationError("top_p must be in (0, 1]")
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")


@dataclass
class BenchReport:
    method: str
    forward_passes: int
    tokens_generated: int
    wall_seconds: float
    tokens_per_pass: dict[int, int] = field(default_factory=dict)
    decode_seconds: float = 0.0
    params: int = 0

    def to_record(self) -> dict:
        return {
            "method": self.method,
            "forward_passes": self.forward_passes,
            "tokens_generated": self.tokens_generated,
            "wall_seconds": self.wall_seconds,
            "tokens_per_pass": {str(k): v for k, v in sorted(self.tokens_per_pass.items())},
            "decode_seconds": self.decode_seconds,
            "params": self.params,
        }


def cfg_mix(cond_logits: torch.Tensor, uncond_logits: torch.Tensor, s: float) -> torch.Tensor:
    """Guided logits: uncond + s * (cond - uncond)."""
    if cond_logits.shape != uncond_logits.shape:
        raise ValidationError("logit shapes must match")
    return uncond_logits + s * (cond_logits - uncond_logits)


def filter_top_k(logits: torch.Tensor, k: int) -> torch.Tensor:
    """Keep the k largest logits (ties at the boundary keep the lower index)."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    vocab = logits.shape[-1]
    if k >= vocab:
        return logits
    order = torch.argsort(logits, dim=-1, descending=True, stable=True)
    keep = torch.zeros_like(logits, dtype=torch.bool)
    keep.scatter_(-1, order[..., :k], True)
    return logits.masked_fill(~keep, float("-inf"))


def filter_top_p(probs: torch.Tensor, p: float) -> torch.Tensor:
    """Nucleus filter: keep the minimal prefix whose mass reaches p, renormalize."""
    if not 0 < p <= 1:
        raise ValidationError("p must be in (0, 1]")
    if p == 1.0:
        return probs
    sorted_probs, order = torch.sort(probs, dim=-1, descending=True, stable=True)
    prefix_before = torch.cumsum(sorted_probs, dim=-1) - sorted_probs
    keep_sorted = prefix_before < p
    keep = torch.zeros_like(probs, dtype=torch.bool)
    keep.scatter_(-1, order, keep_sorted)
    out = probs * keep
    return out / out.sum(dim=-1, keepdim=True)


def sample_from_logits(logits: torch.Tensor, sc: SamplerConfig,
                       generator: torch.Generator | None = None) -> torch.Tensor:
    """Draw one token per row: temperature, then top-k, then top-p, then sample."""
    if sc.temperature == 0.0:
        return logits.argmax(dim=-1)
    logits = logits / sc.temperature
    if sc.top_k is not None:
        logits = filter_top_k(logits, sc.top_k)
    probs = torch.softmax(logits, dim=-1)
    if sc.top_p is not None:
        probs = filter_top_p(probs, sc.top_p)
    return torch.multinomial(probs, 1, generator=generator).squeeze(-1)


def _check_binding(model, sat: SatModel) -> None:
    if model.codec_digest and model.codec_digest != sat.digest():
        raise ValidationError(
            "model is bound to a different codec (digest mismatch); refusing to generate"
        )


@torch.no_grad()
def generate_next_scale(aar: ScaleTransformer, sat: SatModel, cond: np.ndarray,
                        sc: SamplerConfig) -> tuple[TokenPyramid, AudioClip, BenchReport]:
    """Generate one clip scale by scale: K iterations, l_k tokens per step."""
    _check_binding(aar, sat)
    lengths = aar.cfg.lengths
    if lengths != sat.schedule.lengths:
        raise ValidationError("generator schedule does not match the codec")
    generator = torch.Generator().manual_seed(sc.seed)

    cond_t = torch.as_tensor(np.asarray(cond, dtype=np.float32)).unsqueeze(0)
    both = torch.cat([cond_t, aar.null_cond.detach().unsqueeze(0)], dim=0)
    ch = aar.cond_hidden(both)
    cache = aar.new_cache()

    scales: list[np.ndarray] = []
    state = None
    t0 = time.perf_counter()
    x = aar.embed_block(1, both)
    for k in range(1, len(lengths) + 1):
        logits = aar.forward_cached(x, ch, cache)
        if not torch.isfinite(logits).all():
            raise ValidationError("non-finite logits during generation")
        mixed = cfg_mix(logits[0], logits[1], sc.cfg_scale)
        idx = sample_from_logits(mixed, sc, generator)
        scales.append(idx.numpy())
        if k < len(lengths):
            feat, state = next_block_features(
                sat, idx, k, lengths[k], state=state,
                cumulative=aar.cfg.cumulative_inputs,
            )
            x = aar.embed_block(k + 1, feat.unsqueeze(0).expand(2, -1, -1))
    wall = time.perf_counter() - t0

    pyramid = TokenPyramid(scales=scales, schedule=sat.schedule)
    t1 = time.perf_counter()
    clip = sat.decode_audio(pyramid)
    report = BenchReport(
        method="next_scale",
        forward_passes=len(lengths),
        tokens_generated=sum(lengths),
        wall_seconds=wall,
        tokens_per_pass={l: lengths.count(l) for l in set(lengths)},
        decode_seconds=time.perf_counter() - t1,
        params=aar.num_params,
    )
    return pyramid, clip, report


@torch.no_grad()
def generate_next_token(baseline: TokenTransformer, codec: SatModel, cond: np.ndarray,
                        sc: SamplerConfig) -> tuple[np.ndarray, AudioClip, BenchReport]:
    """Generate the flattened token stream one token per forward pass."""
    _check_binding(baseline, codec)
    total = baseline.cfg.total_tokens
    if total != codec.schedule.total:
        raise ValidationError(
            f"baseline budget {total} != codec schedule total {codec.schedule.total}"
        )
    generator = torch.Generator().manual_seed(sc.seed)

    cond_t = torch.as_tensor(np.asarray(cond, dtype=np.float32)).unsqueeze(0)
    both = torch.cat([cond_t, baseline.null_cond.detach().unsqueeze(0)], dim=0)
    ch = baseline.cond_hidden(both)
    cache = baseline.new_cache()

    tokens: list[int] = []
    t0 = time.perf_counter()
    x = baseline.embed_position(0, both)
    for t in range(total):
        logits = baseline.forward_cached(x, ch, cache)
        mixed = cfg_mix(logits[0, -1], logits[1, -1], sc.cfg_scale)
        idx = sample_from_logits(mixed.unsqueeze(0), sc, generator)
        tokens.append(int(idx))
        if t + 1 < total:
            x = baseline.embed_position(t + 1, idx.expand(2))
    wall = time.perf_counter() - t0

    flat = np.asarray(tokens, dtype=np.int64)
    bounds = np.cumsum([0, *codec.schedule.lengths])
    pyramid = TokenPyramid(
        scales=[flat[a:b] for a, b in zip(bounds[:-1], bounds[1:])],
        schedule=codec.schedule,
    )
    t1 = time.perf_counter()
    clip = codec.decode_audio(pyramid)
    report = BenchReport(
        method="next_token",
        forward_passes=total,
        tokens_generated=total,
        wall_seconds=wall,
        tokens_per_pass={1: total},
        decode_seconds=time.perf_counter() - t1,
        params=baseline.num_params,
    )
    return flat, clip, report


def bench_compare(aar: ScaleTransformer, sat: SatModel,
                  baseline: TokenTransformer, baseline_codec: SatModel,
                  n_samples: int, sc: SamplerConfig | None = None,
                  conds: list[np.ndarray] | None = None) -> dict:
    """Median latency and iteration counts of the two decoding strategies."""
    sc = sc or SamplerConfig()
    if conds is None:
        rng = np.random.default_rng(sc.seed)
        conds = []
        for _ in range(n_samples):
            v = rng.standard_normal(aar.cfg.cond_dim).astype(np.float32)
            conds.append(v / np.linalg.norm(v))
    rows = []
    for i in range(n_samples):
        sci = replace(sc, seed=sc.seed + i)
        _, _, rep_scale = generate_next_scale(aar, sat, conds[i], sci)
        _, _, rep_token = generate_next_token(baseline, baseline_codec, conds[i], sci)
        rows.append({"sample": i,
                     "next_scale": rep_scale.to_record(),
                     "next_token": rep_token.to_record()})
    med_scale = median(r["next_scale"]["wall_seconds"] for r in rows)
    med_token = median(r["next_token"]["wall_seconds"] for r in rows)
    passes_scale = rows[0]["next_scale"]["forward_passes"]
    passes_token = rows[0]["next_token"]["forward_passes"]
    return {
        "n_samples": n_samples,
        "next_scale": {"median_wall_seconds": med_scale, "forward_passes": passes_scale,
                       "tokens_generated": rows[0]["next_scale"]["tokens_generated"],
                       "params": aar.num_params},
        "next_token": {"median_wall_seconds": med_token, "forward_passes": passes_token,
                       "tokens_generated": rows[0]["next_token"]["tokens_generated"],
                       "params": baseline.num_params},
        "iteration_ratio": passes_token / passes_scale,
        "wall_ratio": med_token / med_scale if med_scale > 0 else float("inf"),
        "rows": rows,
    }
