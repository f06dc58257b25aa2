"""Command-line surface tying the two stages together.

Exit codes: 0 success, 2 usage error, 3 validation error, 4 training divergence.
Run artifacts land under $SCALEAUDIO_RUN_ROOT (default ./runs), one directory
per invocation with a config snapshot beside every checkpoint.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .audio import load_wav, reassemble, resample, save_wav, segment
from .checkpoint import build_baseline, build_sat, flat_codec_config, load_aar, load_codec
from .condition import StubConditioner
from .config import _SECTIONS, ExperimentConfig, apply_overrides, load_config, preset, save_config
from .corpus import load_corpus, synth_corpus, write_corpus
from .exceptions import AudioFormatError, DivergenceError, ValidationError
from .generate import SamplerConfig, bench_compare, generate_next_scale
from .metrics import eval_reconstruction, mel_distance, stft_distance
from .pyramid import save_pyramid
from .train import Stage1Trainer, Stage2Trainer, set_determinism

log = logging.getLogger("scaleaudio")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="YAML config file")
    parser.add_argument("--preset", type=str, default=None,
                        help="named preset (desk-tiny, paper-1s-16scale-quadratic)")
    for section_name, cls in _SECTIONS.items():
        for f in dataclasses.fields(cls):
            parser.add_argument(
                f"--{section_name}.{f.name}", dest=f"ov__{section_name}__{f.name}",
                default=None, metavar="V", help=argparse.SUPPRESS,
            )


def _resolve_config(args) -> ExperimentConfig:
    if args.config is not None and args.preset is not None:
        raise ValidationError("pass either --config or --preset, not both")
    if args.config is not None:
        if not args.config.exists():
            raise FileNotFoundError(args.config)
        cfg = load_config(args.config)
    elif args.preset is not None:
        cfg = preset(args.preset)
    else:
        cfg = preset("desk-tiny")
    overrides = []
    for key, value in vars(args).items():
        if key.startswith("ov__") and value is not None:
            _, section, field_name = key.split("__", 2)
            overrides.append(f"{section}.{field_name}={value}")
    if overrides:
        apply_overrides(cfg, overrides)
    return cfg


def _run_dir(args, prefix: str) -> Path:
    root = Path(args.run_root or os.environ.get("SCALEAUDIO_RUN_ROOT", "runs"))
    name = args.name or f"{prefix}-{time.strftime('%Y%m%d-%H%M%S')}"
    path = root / name
    path.mkdir(parents=True, exist_ok=True)
    return path


def _require(path: Path, what: str) -> Path:
    if not Path(path).exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return Path(path)


def _write_jsonl(path: Path, records: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def cmd_make_corpus(args) -> int:
    clips = synth_corpus(args.seed, args.n_clips, args.rate, args.seconds)
    manifest = write_corpus(args.out, clips)
    print(f"wrote {len(clips)} clips, manifest {manifest}")
    return 0


def cmd_train_codec(args) -> int:
    cfg = _resolve_config(args)
    set_determinism(cfg.seeds.master, cfg.seeds.deterministic)
    clips = [c.clip for c in load_corpus(_require(args.corpus, "corpus manifest"))]
    run_dir = _run_dir(args, "codec")
    save_config(run_dir / "config.json", cfg)
    trainer = Stage1Trainer(cfg, clips, run_dir=run_dir)
    if args.resume:
        trainer.resume(_require(args.resume, "resume checkpoint"))
    summary = trainer.train()
    print(json.dumps({"run_dir": str(run_dir),
                      "checkpoint": str(run_dir / "codec_best.pt"), **summary}))
    return 0


def cmd_train_aar(args) -> int:
    cfg = _resolve_config(args)
    set_determinism(cfg.seeds.master, cfg.seeds.deterministic)
    sat, codec_cfg, _ = load_codec(_require(args.codec, "codec checkpoint"))
    cfg.codec = codec_cfg.codec  # stage-2 is bound to the frozen codec's geometry
    clips = [c.clip for c in load_corpus(_require(args.corpus, "corpus manifest"))]
    run_dir = _run_dir(args, "aar")
    save_config(run_dir / "config.json", cfg)
    trainer = Stage2Trainer(cfg, sat, clips, run_dir=run_dir)
    if args.resume:
        trainer.resume(_require(args.resume, "resume checkpoint"))
    summary = trainer.train()
    print(json.dumps({"run_dir": str(run_dir),
                      "checkpoint": str(run_dir / "aar_best.pt"), **summary}))
    return 0


def cmd_reconstruct(args) -> int:
    sat, cfg, _ = load_codec(_require(args.codec, "codec checkpoint"))
    set_determinism(cfg.seeds.master, cfg.seeds.deterministic)
    clip = load_wav(_require(args.input, "input wav"))
    clip = resample(clip, sat.sample_rate)
    windows = segment(clip, sat.config.window_seconds)
    parts = [sat.decode_audio(sat.encode_audio(w)) for w in windows]
    recon = reassemble(parts, original_length=len(clip))
    out = Path(args.output)
    save_wav(out, recon)
    spectral = cfg.stage1.spectral()
    record = {
        "input": str(args.input), "output": str(out),
        "seconds": clip.seconds, "windows": len(windows),
        "mel_distance": mel_distance(clip, recon, spectral),
        "stft_distance": stft_distance(clip, recon, spectral),
    }
    print(json.dumps(record))
    if args.report:
        _write_jsonl(Path(args.report), [record])
    return 0


def _parse_sweep(spec: str) -> list[float]:
    lo, hi, step = (float(x) for x in spec.split(":"))
    values, v = [], lo
    while v <= hi + 1e-9:
        values.append(round(v, 6))
        v += step
    return values


def cmd_generate(args) -> int:
    sat, cfg, _ = load_codec(_require(args.codec, "codec checkpoint"))
    aar, cfg2, _ = load_aar(_require(args.aar, "stage-2 checkpoint"), sat)
    cfg.stage2, cfg.sampler = cfg2.stage2, cfg2.sampler
    set_determinism(cfg.seeds.master, cfg.seeds.deterministic)
    run_dir = _run_dir(args, "generate")
    save_config(run_dir / "config.json", cfg)

    conditioner = StubConditioner(aar.cfg.cond_dim)
    target = None
    if args.cond_wav:
        target = resample(load_wav(_require(args.cond_wav, "conditioning wav")), sat.sample_rate)
        if len(target) != sat.window_samples:
            target_windows = segment(target, sat.config.window_seconds)
            target = target_windows[0]
        cond = conditioner.embed(target)
    else:
        rng = np.random.default_rng(args.seed if args.seed is not None else cfg.sampler.seed)
        v = rng.standard_normal(aar.cfg.cond_dim).astype(np.float32)
        cond = v / np.linalg.norm(v)

    base = SamplerConfig(
        cfg_scale=cfg.sampler.cfg_scale, top_k=cfg.sampler.top_k, top_p=cfg.sampler.top_p,
        temperature=cfg.sampler.temperature,
        seed=args.seed if args.seed is not None else cfg.sampler.seed,
    )
    scales = _parse_sweep(args.sweep_cfg) if args.sweep_cfg else [base.cfg_scale]
    spectral = cfg.stage1.spectral()
    records = []
    for s in scales:
        sc = dataclasses.replace(base, cfg_scale=float(s))
        pyramid, clip, report = generate_next_scale(aar, sat, cond, sc)
        tag = f"cfg{s:g}"
        save_wav(run_dir / f"gen_{tag}.wav", clip)
        save_pyramid(run_dir / f"gen_{tag}.satp", pyramid, sat.vocab)
        rec = {"cfg_scale": float(s), "seed": sc.seed,
               "wav": f"gen_{tag}.wav", "pyramid": f"gen_{tag}.satp",
               "forward_passes": report.forward_passes,
               "wall_seconds": report.wall_seconds,
               "decode_seconds": report.decode_seconds}
        if target is not None:
            rec["mel_to_target"] = mel_distance(target, clip, spectral)
            rec["stft_to_target"] = stft_distance(target, clip, spectral)
            rec["cond_cosine"] = float(np.dot(cond, conditioner.embed(clip)))
        records.append(rec)
        print(json.dumps(rec))
    _write_jsonl(run_dir / "generate.jsonl", records)
    if len(records) > 1:
        _plot_sweep(records, run_dir / "cfg_sweep.png")
    return 0


def cmd_bench(args) -> int:
    sat, cfg, _ = load_codec(_require(args.codec, "codec checkpoint"))
    aar, cfg2, _ = load_aar(_require(args.aar, "stage-2 checkpoint"), sat)
    cfg.stage2, cfg.sampler = cfg2.stage2, cfg2.sampler
    set_determinism(cfg.seeds.master, cfg.seeds.deterministic)
    run_dir = _run_dir(args, "bench")
    save_config(run_dir / "config.json", cfg)

    torch.manual_seed(cfg.seeds.master)
    if args.baseline == "rvq750":
        baseline_codec = build_sat(
            dataclasses.replace(cfg, codec=flat_codec_config(cfg.codec)))
    else:  # flattened pyramid at the trained codec's own schedule
        baseline_codec = sat
    baseline = build_baseline(cfg, baseline_codec)
    baseline.eval()

    sc = SamplerConfig(cfg_scale=cfg.sampler.cfg_scale, top_k=cfg.sampler.top_k,
                       top_p=cfg.sampler.top_p, temperature=cfg.sampler.temperature,
                       seed=cfg.sampler.seed)
    report = bench_compare(aar, sat, baseline, baseline_codec, args.samples, sc)
    rows = report.pop("rows")
    _write_jsonl(run_dir / "bench.jsonl", rows + [dict(kind="summary", **report)])
    _plot_bench(report, run_dir / "bench.png")
    print(json.dumps(report, indent=2))
    print(f"forward passes: next_scale={report['next_scale']['forward_passes']} "
          f"next_token={report['next_token']['forward_passes']} "
          f"(iteration ratio {report['iteration_ratio']:.1f}, "
          f"wall ratio {report['wall_ratio']:.1f})")
    return 0


def cmd_eval(args) -> int:
    sat, cfg, _ = load_codec(_require(args.codec, "codec checkpoint"))
    set_determinism(cfg.seeds.master, cfg.seeds.deterministic)
    clips = [c.clip for c in load_corpus(_require(args.corpus, "corpus manifest"))]
    run_dir = _run_dir(args, "eval")
    save_config(run_dir / "config.json", cfg)
    report = eval_reconstruction(sat, clips, cfg.stage1.spectral())
    _write_jsonl(run_dir / "reconstruction.jsonl", report.to_records())
    print(json.dumps({"mean_mel": report.mean_mel, "mean_stft": report.mean_stft,
                      "tokens_per_clip": report.tokens_per_clip,
                      "utilization": report.utilization}))
    return 0


def _plot_bench(report: dict, path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    methods = ["next_token", "next_scale"]
    ax1.bar(methods, [report[m]["forward_passes"] for m in methods], color=["#888", "#2a7"])
    ax1.set_ylabel("forward passes")
    ax2.bar(methods, [report[m]["median_wall_seconds"] for m in methods], color=["#888", "#2a7"])
    ax2.set_ylabel("median wall seconds")
    fig.suptitle(f"iteration ratio {report['iteration_ratio']:.1f}x, "
                 f"wall ratio {report['wall_ratio']:.1f}x")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_sweep(records: list[dict], path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    xs = [r["cfg_scale"] for r in records]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for key, color in (("mel_to_target", "#c33"), ("stft_to_target", "#36c")):
        if key in records[0]:
            ax.plot(xs, [r[key] for r in records], "o-", label=key, color=color)
    ax.set_xlabel("guidance scale")
    ax.set_ylabel("distance")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scaleaudio",
        description="Multi-scale residual-quantized audio codec with next-scale generation",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-corpus", help="write a deterministic synthetic corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n-clips", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rate", type=int, default=24000)
    p.add_argument("--seconds", type=float, default=1.0)
    p.set_defaults(func=cmd_make_corpus)

    for name, func, helptext in (
        ("train-codec", cmd_train_codec, "train the stage-1 codec"),
        ("train-aar", cmd_train_aar, "train the stage-2 generator"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_config_flags(p)
        p.add_argument("--corpus", type=Path, required=True, help="corpus manifest")
        p.add_argument("--resume", type=Path, default=None)
        p.add_argument("--run-root", type=Path, default=None)
        p.add_argument("--name", type=str, default=None)
        if name == "train-aar":
            p.add_argument("--codec", type=Path, required=True, help="codec checkpoint")
        p.set_defaults(func=func)

    p = sub.add_parser("reconstruct", help="round-trip a wav through the codec")
    p.add_argument("--codec", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--report", type=Path, default=None)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("generate", help="sample clips with next-scale decoding")
    p.add_argument("--codec", type=Path, required=True)
    p.add_argument("--aar", type=Path, required=True)
    p.add_argument("--cond-wav", type=Path, default=None,
                   help="clip whose embedding conditions the sample")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sweep-cfg", type=str, default=None, metavar="LO:HI:STEP",
                   help="sweep guidance scale, one row per value")
    p.add_argument("--run-root", type=Path, default=None)
    p.add_argument("--name", type=str, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("bench", help="latency: next-scale vs next-token")
    p.add_argument("--codec", type=Path, required=True)
    p.add_argument("--aar", type=Path, required=True)
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--baseline", choices=("rvq750", "schedule"), default="rvq750",
                   help="token budget: flat 10-stage RVQ raster or the pyramid flattened")
    p.add_argument("--run-root", type=Path, default=None)
    p.add_argument("--name", type=str, default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("eval", help="reconstruction metrics over a corpus")
    p.add_argument("--codec", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--run-root", type=Path, default=None)
    p.add_argument("--name", type=str, default=None)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, AudioFormatError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
