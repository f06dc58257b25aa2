"""Multi-scale residual-quantized audio codec with next-scale autoregressive generation."""

__version__ = "0.1.0"

from .audio import AudioClip, load_wav, reassemble, resample, save_wav, segment
from .codec import SatModel, codebook_utilization
from .condition import Conditioner, StubConditioner
from .config import ExperimentConfig, load_config, preset
from .corpus import CorpusClip, load_corpus, synth_corpus, write_corpus
from .exceptions import AudioFormatError, DivergenceError, ScaleAudioError, ValidationError
from .generate import (
    BenchReport,
    SamplerConfig,
    bench_compare,
    cfg_mix,
    filter_top_k,
    filter_top_p,
    generate_next_scale,
    generate_next_token,
)
from .losses import (
    LossWeights,
    StftDiscriminator,
    disc_forward,
    loss_adversarial,
    loss_freq,
    loss_time,
    loss_vq_commit,
    total_stage1_loss,
)
from .metrics import (
    EmbeddingSet,
    eval_reconstruction,
    frechet_distance,
    mel_distance,
    stft_distance,
)
from .pyramid import TokenPyramid, load_pyramid, save_pyramid
from .quantize import (
    Codebook,
    MultiScaleQuantizer,
    PhiUpsampler,
    interpolate_tokens,
    msrq_decode,
    msrq_encode,
    phi_apply,
    vq_lookup,
)
from .schedule import ScaleSchedule, make_schedule
from .spectral import SpectralConfig, mel_spectrogram, stft
from .train import Stage1Trainer, Stage2Trainer, train_step_stage2
from .transformer import (
    AarConfig,
    ScaleSequence,
    ScaleTransformer,
    TokenConfig,
    TokenTransformer,
    build_block_mask,
    build_teacher_sequence,
)
