"""Shared fixtures: tiny seeded models kept read-only across tests."""

import pytest
import torch

from scaleaudio.checkpoint import build_aar, build_sat
from scaleaudio.config import preset


def tiny_experiment(n_scales=4, base_channels=8, latent_dim=16, vocab=64,
                    depth=2, width=64, heads=2):
    cfg = preset("desk-tiny")
    cfg.codec.n_scales = n_scales
    cfg.codec.base_channels = base_channels
    cfg.codec.latent_dim = latent_dim
    cfg.codec.vocab_size = vocab
    cfg.stage2.depth = depth
    cfg.stage2.width = width
    cfg.stage2.heads = heads
    cfg.stage2.cond_dim = 16
    cfg.validate()
    return cfg


@pytest.fixture(scope="session")
def tiny_cfg():
    return tiny_experiment()


@pytest.fixture(scope="session")
def tiny_sat(tiny_cfg):
    torch.manual_seed(0)
    model = build_sat(tiny_cfg)
    model.eval()
    return model


@pytest.fixture(scope="session")
def tiny_aar(tiny_cfg, tiny_sat):
    torch.manual_seed(1)
    model = build_aar(tiny_cfg, tiny_sat)
    model.eval()
    return model
