"""Versioned checkpoints and model assembly from configs.

A checkpoint carries the full experiment config, parameter arrays, optimizer
and RNG state, and a step counter, so reloading and taking one step
reproduces the original trajectory exactly (single-threaded math).
"""

from __future__ import annotations

from pathlib import Path

import torch

from .codec import SatModel
from .config import CodecSection, ExperimentConfig, config_from_dict
from .exceptions import ValidationError
from .transformer import AarConfig, ScaleTransformer, TokenConfig, TokenTransformer

FORMAT_VERSION = 1

FLAT_BASELINE_QUANTIZERS = 10


def save_checkpoint(path: str | Path, *, kind: str, config: ExperimentConfig,
                    model_state: dict, optimizers: dict | None = None,
                    generators: dict | None = None, step: int = 0,
                    metadata: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": FORMAT_VERSION,
        "kind": kind,
        "config": config.to_dict(),
        "config_hash": config.hash(),
        "model_state": model_state,
        "optimizers": {k: v for k, v in (optimizers or {}).items()},
        "generators": {k: g.get_state() for k, g in (generators or {}).items()},
        "step": step,
        "metadata": metadata or {},
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"checkpoint {path} does not exist")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {payload.get('version')}")
    return payload


def build_sat(config: ExperimentConfig) -> SatModel:
    return SatModel(config.codec)


def build_aar(config: ExperimentConfig, sat: SatModel) -> ScaleTransformer:
    s2 = config.stage2
    cfg = AarConfig(
        lengths=sat.schedule.lengths,
        depth=s2.depth, width=s2.width, heads=s2.heads,
        vocab=sat.vocab, cond_dim=s2.cond_dim,
        latent_dim=config.codec.latent_dim,
        cfg_drop_prob=s2.cfg_drop_prob, mlp_ratio=s2.mlp_ratio,
        use_pos_emb=s2.use_pos_emb, cumulative_inputs=s2.cumulative_inputs,
    )
    return ScaleTransformer(cfg, codec_digest=sat.digest())


def flat_codec_config(codec: CodecSection,
                      num_quantizers: int = FLAT_BASELINE_QUANTIZERS) -> CodecSection:
    """Plain residual-VQ variant: every stage at full resolution, no refinement."""
    import dataclasses
    return dataclasses.replace(
        codec,
        schedule_kind="explicit",
        explicit_lengths=tuple([codec.top_length] * num_quantizers),
        n_scales=num_quantizers,
        gamma=0.0,
    )


def build_baseline(config: ExperimentConfig, codec: SatModel) -> TokenTransformer:
    s2 = config.stage2
    cfg = TokenConfig(
        total_tokens=codec.schedule.total,
        depth=s2.depth, width=s2.width, heads=s2.heads,
        vocab=codec.vocab, cond_dim=s2.cond_dim, mlp_ratio=s2.mlp_ratio,
    )
    return TokenTransformer(cfg, codec_digest=codec.digest())


def load_codec(path: str | Path) -> tuple[SatModel, ExperimentConfig, dict]:
    payload = load_checkpoint(path)
    if payload["kind"] != "codec":
        raise ValidationError(f"{path} is a {payload['kind']!r} checkpoint, expected codec")
    config = config_from_dict(payload["config"])
    model = build_sat(config)
    model.load_state_dict(payload["model_state"])
    model.eval()
    return model, config, payload


def load_aar(path: str | Path, sat: SatModel) -> tuple[ScaleTransformer, ExperimentConfig, dict]:
    payload = load_checkpoint(path)
    if payload["kind"] != "aar":
        raise ValidationError(f"{path} is a {payload['kind']!r} checkpoint, expected aar")
    config = config_from_dict(payload["config"])
    model = build_aar(config, sat)
    model.load_state_dict(payload["model_state"])
    model.codec_digest = payload["metadata"].get("codec_digest", model.codec_digest)
    model.eval()
    return model, config, payload
