"""Training loops for the codec (stage 1) and the scale-level generator (stage 2)."""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .audio import AudioClip, segment
from .checkpoint import build_aar, build_sat, load_checkpoint, save_checkpoint
from .condition import StubConditioner
from .config import ExperimentConfig
from .exceptions import DivergenceError, ValidationError
from .losses import LossWeights, StftDiscriminator, loss_adversarial, loss_freq, loss_time, loss_vq_commit, total_stage1_loss
from .metrics import mel_distance
from .quantize import interpolate_tokens
from .transformer import ScaleSequence, ScaleTransformer, build_teacher_sequence

log = logging.getLogger(__name__)


def set_determinism(seed: int, single_thread: bool = False) -> None:
    """Seed every library RNG; optionally force single-threaded math."""
    torch.manual_seed(seed)
    np.random.seed(seed % (2**32))
    if single_thread:
        torch.set_num_threads(1)


def _append_jsonl(path: Path | None, record: dict) -> None:
    if path is None:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as fh:
        fh.write(json.dumps(record) + "\n")


def _clips_to_windows(clips: list[AudioClip], window_seconds: float,
                      sample_rate: int) -> list[AudioClip]:
    windows = []
    for clip in clips:
        if clip.sample_rate != sample_rate:
            raise ValidationError("corpus clip rate does not match the codec config")
        windows.extend(segment(clip, window_seconds))
    return windows


def apply_cond_dropout(conds: torch.Tensor, null_cond: torch.Tensor, p: float,
                       generator: torch.Generator | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-sample condition replacement for classifier-free guidance training."""
    mask = torch.rand(conds.shape[0], generator=generator) < p
    mixed = torch.where(mask.unsqueeze(1), null_cond.unsqueeze(0).expand_as(conds), conds)
    return mixed, mask


def train_step_stage2(model: ScaleTransformer, batch: list[ScaleSequence],
                      optimizer: torch.optim.Optimizer,
                      generator: torch.Generator | None = None,
                      grad_clip: float = 1.0) -> float:
    """One teacher-forced step: cross-entropy over every position of the batch."""
    if not batch:
        raise ValidationError("empty batch")
    features = torch.stack([s.features for s in batch])
    targets = torch.stack([s.targets for s in batch])
    conds = torch.stack([torch.as_tensor(s.cond, dtype=torch.float32) for s in batch])
    conds, _ = apply_cond_dropout(conds, model.null_cond, model.cfg.cfg_drop_prob, generator)
    logits = model(features, conds)
    loss = F.cross_entropy(logits.reshape(-1, model.cfg.vocab), targets.reshape(-1))
    if not torch.isfinite(loss):
        raise DivergenceError(f"stage-2 loss is {loss.item()}")
    optimizer.zero_grad()
    loss.backward()
    if grad_clip:
        nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return float(loss.detach())


class Stage1Trainer:
    """Adversarially trained codec on a fixed in-memory corpus."""

    def __init__(self, config: ExperimentConfig, clips: list[AudioClip],
                 run_dir: str | Path | None = None):
        config.validate()
        self.config = config
        self.run_dir = Path(run_dir) if run_dir else None
        self.log_path = self.run_dir / "stage1_losses.jsonl" if self.run_dir else None

        torch.manual_seed(config.seeds.master)
        self.model = build_sat(config)
        self.disc = StftDiscriminator(config.stage1.disc_windows, config.stage1.disc_channels)
        self.generator = torch.Generator().manual_seed(config.seeds.master)

        windows = _clips_to_windows(clips, config.codec.window_seconds, config.codec.sample_rate)
        self.waves = torch.stack([torch.from_numpy(w.samples) for w in windows])
        self.spectral = config.stage1.spectral()
        self.weights = LossWeights(config.stage1.lambda_t, config.stage1.lambda_f,
                                   config.stage1.lambda_g, config.stage1.lambda_com)

        s1 = config.stage1
        self.opt_g = torch.optim.Adam(self.model.parameters(), lr=s1.lr, betas=(s1.beta1, s1.beta2))
        self.opt_d = torch.optim.Adam(self.disc.parameters(), lr=s1.lr, betas=(s1.beta1, s1.beta2))
        self.step = 0
        self.epoch = 0
        self.best_mel = math.inf
        self.initial_mel: float | None = None
        self._last_good: dict | None = None

        if s1.data_init_codebooks and config.codec.codebook_update == "ema":
            self._data_init_codebooks()

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(self.waves.shape[0] / self.config.stage1.batch_size)

    def total_steps(self) -> int:
        return self.steps_per_epoch * self.config.stage1.epochs

    @torch.no_grad()
    def _data_init_codebooks(self) -> None:
        """Seed each stage's codebook from that stage's actual residual inputs."""
        f = self.model.encoder(self.waves)
        residual = f
        q = self.model.quantizer
        for k, l_k in enumerate(q.schedule.lengths, start=1):
            x_k = interpolate_tokens(residual, l_k)
            pool = x_k.reshape(-1, q.dim)
            q.codebook_for(k).reseed_all(pool, self.generator)
            idx, z = q.codebook_for(k).lookup(pool)
            z = z.view(*x_k.shape)
            z_up = interpolate_tokens(z, q.schedule.top_length)
            residual = residual - q.phi(z_up, k)

    def _lr(self) -> float:
        s1 = self.config.stage1
        if s1.lr_schedule == "cosine":
            t = self.step / max(1, self.total_steps())
            return s1.lr * 0.5 * (1 + math.cos(math.pi * min(t, 1.0)))
        return s1.lr

    def _generator_loss(self, fake_logits: list[torch.Tensor]) -> torch.Tensor:
        return torch.stack([-(m.mean()) for m in fake_logits]).mean()

    def train_epoch(self) -> dict:
        s1 = self.config.stage1
        n = self.waves.shape[0]
        order = torch.randperm(n, generator=self.generator)
        ema = self.config.codec.codebook_update == "ema"
        records = []
        for b in range(self.steps_per_epoch):
            batch = self.waves[order[b * s1.batch_size : (b + 1) * s1.batch_size]]
            lr = self._lr()
            for group in self.opt_g.param_groups:
                group["lr"] = lr

            out = self.model(batch, update_codebooks=ema)
            l_t = loss_time(batch, out["recon"])
            l_f = loss_freq(batch, out["recon"], self.spectral, self.config.codec.sample_rate)
            l_vq, l_com = loss_vq_commit(out["x_list"], out["z_list"])
            if s1.adversarial:
                fake_logits = self.disc(out["recon"])
                l_g = self._generator_loss(fake_logits)
            else:
                l_g = torch.zeros(())
            total = total_stage1_loss(
                {"time": l_t, "freq": l_f, "adv": l_g, "vq": l_vq, "commit": l_com},
                self.weights,
            )
            self.opt_g.zero_grad()
            total.backward()
            self.opt_g.step()

            l_d_val = None
            if s1.adversarial and bool(torch.rand((), generator=self.generator) < s1.disc_update_prob):
                for group in self.opt_d.param_groups:
                    group["lr"] = lr
                real_logits = self.disc(batch)
                fake_logits = self.disc(out["recon"].detach())
                l_d, _ = loss_adversarial(real_logits, fake_logits)
                if not torch.isfinite(l_d):
                    raise DivergenceError(f"discriminator loss is {l_d.item()}")
                self.opt_d.zero_grad()
                l_d.backward()
                self.opt_d.step()
                l_d_val = float(l_d.detach())

            self.step += 1
            record = {
                "step": self.step, "epoch": self.epoch,
                "L_t": float(l_t.detach()), "L_f": float(l_f.detach()),
                "L_G": float(l_g.detach()), "L_D": l_d_val,
                "L_vq": float(l_vq.detach()), "L_com": float(l_com.detach()),
                "total": float(total.detach()), "lr": lr,
            }
            records.append(record)
            _append_jsonl(self.log_path, record)

        if ema:
            with torch.no_grad():
                f = self.model.encoder(self.waves[order[: s1.batch_size]])
            pool = f.reshape(-1, self.config.codec.latent_dim)
            self.model.quantizer.end_epoch(pool, self.generator)
        self.epoch += 1
        return records[-1]

    @torch.no_grad()
    def eval_mel(self) -> float:
        self.model.eval()
        vals = []
        for i in range(self.waves.shape[0]):
            clip = AudioClip(self.waves[i].numpy(), self.config.codec.sample_rate)
            recon = self.model.decode_audio(self.model.encode_audio(clip))
            vals.append(mel_distance(clip, recon, self.spectral))
        self.model.train()
        return float(np.mean(vals))

    def _snapshot(self) -> dict:
        return {k: v.detach().clone() for k, v in self.model.state_dict().items()}

    def save(self, path: str | Path) -> None:
        save_checkpoint(
            path, kind="codec", config=self.config,
            model_state=self.model.state_dict(),
            optimizers={"gen": self.opt_g.state_dict(), "disc": self.opt_d.state_dict(),
                        "disc_model": self.disc.state_dict()},
            generators={"trainer": self.generator},
            step=self.step,
            metadata={"epoch": self.epoch, "best_mel": self.best_mel,
                      "initial_mel": self.initial_mel},
        )

    def resume(self, path: str | Path) -> None:
        payload = load_checkpoint(path)
        if payload["kind"] != "codec":
            raise ValidationError("not a codec checkpoint")
        self.model.load_state_dict(payload["model_state"])
        self.opt_g.load_state_dict(payload["optimizers"]["gen"])
        self.opt_d.load_state_dict(payload["optimizers"]["disc"])
        self.disc.load_state_dict(payload["optimizers"]["disc_model"])
        self.generator.set_state(payload["generators"]["trainer"])
        self.step = payload["step"]
        self.epoch = payload["metadata"]["epoch"]
        self.best_mel = payload["metadata"]["best_mel"]
        self.initial_mel = payload["metadata"]["initial_mel"]

    def train(self, epochs: int | None = None) -> dict:
        """Run the stage-1 loop; returns a summary with the best mel distance."""
        s1 = self.config.stage1
        epochs = s1.epochs if epochs is None else epochs
        if self.initial_mel is None:
            self.initial_mel = self.eval_mel()
            log.info("initial mel distance %.4f", self.initial_mel)
        best_path = self.run_dir / "codec_best.pt" if self.run_dir else None
        last_path = self.run_dir / "codec_last.pt" if self.run_dir else None
        if math.isinf(self.best_mel):
            self.best_mel = self.initial_mel
            if best_path:
                self.save(best_path)
        self._last_good = self._snapshot()

        target = epochs
        while self.epoch < target:
            try:
                record = self.train_epoch()
            except DivergenceError:
                if last_path and self._last_good is not None:
                    self.model.load_state_dict(self._last_good)
                    self.save(last_path)
                    log.error("divergence: last good state saved to %s", last_path)
                raise
            self._last_good = self._snapshot()
            if last_path:
                self.save(last_path)

            if self.epoch % s1.eval_every_epochs == 0 or self.epoch == target:
                mel = self.eval_mel()
                log.info("epoch %d step %d mel %.4f (best %.4f) total %.4f",
                         self.epoch, self.step, mel, self.best_mel, record["total"])
                _append_jsonl(self.log_path, {"step": self.step, "epoch": self.epoch,
                                              "eval_mel": mel})
                if mel < self.best_mel:
                    self.best_mel = mel
                    if best_path:
                        self.save(best_path)
                if (s1.early_stop_mel_ratio is not None and self.initial_mel
                        and mel < s1.early_stop_mel_ratio * self.initial_mel):
                    log.info("early stop: mel %.4f below %.2f of initial %.4f",
                             mel, s1.early_stop_mel_ratio, self.initial_mel)
                    break
        if last_path:
            self.save(last_path)
        return {"initial_mel": self.initial_mel, "best_mel": self.best_mel,
                "final_mel": self.eval_mel(), "epochs": self.epoch, "steps": self.step}


class Stage2Trainer:
    """Teacher-forced generator training on pyramids from a frozen codec."""

    def __init__(self, config: ExperimentConfig, sat, clips: list[AudioClip],
                 run_dir: str | Path | None = None):
        config.validate()
        self.config = config
        self.run_dir = Path(run_dir) if run_dir else None
        self.log_path = self.run_dir / "stage2_losses.jsonl" if self.run_dir else None

        if sat.schedule.lengths != config.codec.schedule().lengths:
            raise ValidationError("codec checkpoint schedule does not match the config")
        sat.eval()
        for p in sat.parameters():
            p.requires_grad_(False)
        self.sat = sat

        torch.manual_seed(config.seeds.master)
        self.model = build_aar(config, sat)
        self.generator = torch.Generator().manual_seed(config.seeds.master)
        self.conditioner = StubConditioner(config.stage2.cond_dim)

        windows = _clips_to_windows(clips, config.codec.window_seconds, config.codec.sample_rate)
        self.sequences: list[ScaleSequence] = []
        for w in windows:
            pyramid = sat.encode_audio(w)
            cond = self.conditioner.embed(w)
            self.sequences.append(build_teacher_sequence(
                pyramid, sat, cond, cumulative=config.stage2.cumulative_inputs))
        self.windows = windows

        s2 = config.stage2
        self.optimizer = torch.optim.AdamW(self.model.parameters(), lr=s2.lr,
                                           weight_decay=s2.weight_decay)
        self.step = 0
        self.epoch = 0
        self.best_ce = math.inf
        self._last_good: dict | None = None

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(len(self.sequences) / self.config.stage2.batch_size)

    def total_steps(self) -> int:
        return self.steps_per_epoch * self.config.stage2.epochs

    def _lr(self) -> float:
        s2 = self.config.stage2
        total = max(1, self.total_steps())
        warmup = max(1, round(s2.warmup_proportion * total))
        if self.step < warmup:
            return s2.lr * (self.step + 1) / warmup
        frac = (self.step - warmup) / max(1, total - warmup)
        return s2.lr * (1.0 - (1.0 - s2.end_lr_proportion) * min(frac, 1.0))

    def train_epoch(self) -> float:
        s2 = self.config.stage2
        n = len(self.sequences)
        order = torch.randperm(n, generator=self.generator)
        losses = []
        for b in range(self.steps_per_epoch):
            idx = order[b * s2.batch_size : (b + 1) * s2.batch_size].tolist()
            batch = [self.sequences[i] for i in idx]
            lr = self._lr()
            for group in self.optimizer.param_groups:
                group["lr"] = lr
            loss = train_step_stage2(self.model, batch, self.optimizer,
                                     generator=self.generator, grad_clip=s2.grad_clip)
            self.step += 1
            losses.append(loss)
            _append_jsonl(self.log_path, {"step": self.step, "epoch": self.epoch,
                                          "ce": loss, "lr": lr})
        self.epoch += 1
        return float(np.mean(losses))

    def save(self, path: str | Path) -> None:
        save_checkpoint(
            path, kind="aar", config=self.config,
            model_state=self.model.state_dict(),
            optimizers={"adamw": self.optimizer.state_dict()},
            generators={"trainer": self.generator},
            step=self.step,
            metadata={"epoch": self.epoch, "best_ce": self.best_ce,
                      "codec_digest": self.model.codec_digest,
                      "schedule": list(self.sat.schedule.lengths)},
        )

    def resume(self, path: str | Path) -> None:
        payload = load_checkpoint(path)
        if payload["kind"] != "aar":
            raise ValidationError("not a stage-2 checkpoint")
        if payload["metadata"]["codec_digest"] != self.model.codec_digest:
            raise ValidationError("checkpoint was trained against a different codec")
        self.model.load_state_dict(payload["model_state"])
        self.optimizer.load_state_dict(payload["optimizers"]["adamw"])
        self.generator.set_state(payload["generators"]["trainer"])
        self.step = payload["step"]
        self.epoch = payload["metadata"]["epoch"]
        self.best_ce = payload["metadata"]["best_ce"]

    def train(self, epochs: int | None = None) -> dict:
        s2 = self.config.stage2
        epochs = s2.epochs if epochs is None else epochs
        best_path = self.run_dir / "aar_best.pt" if self.run_dir else None
        last_path = self.run_dir / "aar_last.pt" if self.run_dir else None
        self._last_good = {k: v.detach().clone() for k, v in self.model.state_dict().items()}
        mean_ce = math.inf
        while self.epoch < epochs:
            try:
                mean_ce = self.train_epoch()
            except DivergenceError:
                if last_path and self._last_good is not None:
                    self.model.load_state_dict(self._last_good)
                    self.save(last_path)
                raise
            self._last_good = {k: v.detach().clone() for k, v in self.model.state_dict().items()}
            if last_path:
                self.save(last_path)
            if mean_ce < self.best_ce:
                self.best_ce = mean_ce
                if best_path:
                    self.save(best_path)
            if self.epoch % 10 == 0:
                log.info("epoch %d step %d ce %.4f", self.epoch, self.step, mean_ce)
            if s2.early_stop_ce is not None and mean_ce < s2.early_stop_ce:
                log.info("early stop: ce %.4f below %.4f", mean_ce, s2.early_stop_ce)
                break
        if last_path:
            self.save(last_path)
        return {"best_ce": self.best_ce, "final_ce": mean_ce,
                "epochs": self.epoch, "steps": self.step}
