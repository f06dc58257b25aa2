import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from scipy.io import wavfile

from scaleaudio.audio import AudioClip, load_wav, reassemble, resample, save_wav, segment
from scaleaudio.corpus import CLASS_NAMES, load_corpus, synth_corpus, write_corpus
from scaleaudio.exceptions import AudioFormatError, ValidationError
from scaleaudio.spectral import (
    SpectralConfig,
    hann_window,
    mel_center_frequency,
    mel_spectrogram,
    spectral_centroid,
    stft,
)


class TestWavIO:
    def test_pcm16_scaling(self, tmp_path):
        path = tmp_path / "x.wav"
        wavfile.write(str(path), 24000, np.array([0, 16384, -16384], dtype=np.int16))
        clip = load_wav(path)
        assert np.allclose(clip.samples, [0.0, 0.5, -0.5], atol=1 / 32768)

    def test_stereo_downmix(self, tmp_path):
        path = tmp_path / "st.wav"
        left = np.round(0.2 * 32768).astype(np.int16)
        right = np.round(0.4 * 32768).astype(np.int16)
        wavfile.write(str(path), 24000, np.stack([np.full(10, left), np.full(10, right)], axis=1))
        clip = load_wav(path)
        assert np.allclose(clip.samples, 0.3, atol=1e-4)

    def test_roundtrip_error_bound(self, tmp_path):
        rng = np.random.default_rng(0)
        original = rng.uniform(-1, 1, 24000).astype(np.float32)
        clip = AudioClip(original, 24000)
        path = tmp_path / "rt.wav"
        save_wav(path, clip)
        back = load_wav(path)
        assert np.abs(back.samples.astype(np.float64) - original).max() <= 1 / 32768

    def test_float32_wav(self, tmp_path):
        path = tmp_path / "f.wav"
        data = np.linspace(-0.5, 0.5, 100, dtype=np.float32)
        wavfile.write(str(path), 24000, data)
        assert np.allclose(load_wav(path).samples, data)

    def test_unsupported_encoding(self, tmp_path):
        path = tmp_path / "i32.wav"
        wavfile.write(str(path), 24000, np.arange(10, dtype=np.int32))
        with pytest.raises(AudioFormatError):
            load_wav(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_wav(tmp_path / "nope.wav")

    def test_clip_validation(self):
        with pytest.raises(ValidationError):
            AudioClip(np.array([np.nan], dtype=np.float32), 24000)
        with pytest.raises(ValidationError):
            AudioClip(np.zeros(0, dtype=np.float32), 24000)
        with pytest.raises(ValidationError):
            AudioClip(np.zeros(10, dtype=np.float32), 12345)


class TestResample:
    def test_identity_rate(self):
        clip = AudioClip(np.random.default_rng(1).uniform(-0.5, 0.5, 1000).astype(np.float32), 24000)
        out = resample(clip, 24000)
        assert np.array_equal(out.samples, clip.samples)

    def test_length_ratio(self):
        clip = AudioClip(np.zeros(24000, dtype=np.float32) + 0.1, 24000)
        assert len(resample(clip, 16000)) == 16000

    def test_tone_peak_preserved(self):
        # FFT-peak oracle: a 440 Hz tone must stay at 440 Hz within one bin
        sr_in, sr_out = 24000, 16000
        t = np.arange(sr_in) / sr_in
        clip = AudioClip((0.5 * np.sin(2 * np.pi * 440 * t)).astype(np.float32), sr_in)
        out = resample(clip, sr_out)
        spec = np.abs(np.fft.rfft(out.samples.astype(np.float64)))
        freqs = np.fft.rfftfreq(len(out), d=1 / sr_out)
        peak = freqs[np.argmax(spec)]
        bin_width = freqs[1] - freqs[0]
        assert abs(peak - 440.0) <= bin_width


class TestSegment:
    def test_ten_second_clip(self):
        clip = AudioClip(np.random.default_rng(0).uniform(-0.5, 0.5, 240000).astype(np.float32), 24000)
        assert len(segment(clip, 1.0)) == 10

    def test_exact_window_identity(self):
        clip = AudioClip(np.random.default_rng(2).uniform(-0.5, 0.5, 24000).astype(np.float32), 24000)
        segs = segment(clip, 1.0)
        assert len(segs) == 1
        assert np.array_equal(segs[0].samples, clip.samples)

    def test_partial_window_zero_padded(self):
        clip = AudioClip(np.ones(60000, dtype=np.float32) * 0.3, 24000)
        segs = segment(clip, 1.0)
        assert len(segs) == 3
        assert np.all(segs[2].samples[12000:] == 0.0)
        assert np.all(segs[2].samples[:12000] == np.float32(0.3))

    @settings(max_examples=25, deadline=None)
    @given(n=st.integers(min_value=1, max_value=70000))
    def test_concat_drops_padding_is_identity(self, n):
        rng = np.random.default_rng(n)
        clip = AudioClip(rng.uniform(-0.9, 0.9, n).astype(np.float32), 24000)
        back = reassemble(segment(clip, 1.0), original_length=n)
        assert np.array_equal(back.samples, clip.samples)


class TestSynthCorpus:
    def test_deterministic(self):
        a = synth_corpus(3, 10, 24000, 0.5)
        b = synth_corpus(3, 10, 24000, 0.5)
        for x, y in zip(a, b):
            assert x.label_id == y.label_id
            assert np.array_equal(x.clip.samples, y.clip.samples)

    def test_shapes_and_bounds(self):
        clips = synth_corpus(0, 32, 24000, 1.0)
        assert len(clips) == 32
        for c in clips:
            assert len(c.clip) == 24000
            assert np.abs(c.clip.samples).max() <= 0.9 + 1e-6

    def test_centroid_ordering(self):
        clips = synth_corpus(11, 40, 24000, 1.0)
        harm = [spectral_centroid(c.clip.samples, 24000) for c in clips
                if c.label == "harmonic_stack"]
        noise = [spectral_centroid(c.clip.samples, 24000) for c in clips
                 if c.label == "low_noise"]
        assert np.mean(harm) > np.mean(noise)

    def test_labels_cover_classes(self):
        clips = synth_corpus(0, 10, 24000, 0.25)
        assert {c.label for c in clips} == set(CLASS_NAMES)

    def test_manifest_roundtrip(self, tmp_path):
        clips = synth_corpus(5, 6, 24000, 0.25)
        manifest = write_corpus(tmp_path, clips)
        loaded = load_corpus(manifest)
        assert len(loaded) == 6
        for a, b in zip(clips, loaded):
            assert a.label_id == b.label_id
            assert np.abs(a.clip.samples - b.clip.samples).max() <= 1 / 32768


class TestMelSpectrogram:
    cfg = SpectralConfig((256, 1024), (16, 80))

    def test_silence_is_zero(self):
        clip = AudioClip(np.full(4096, 1e-20, dtype=np.float32), 24000)
        clip.samples[:] = 0.0
        out = mel_spectrogram(clip, self.cfg, 0)
        assert np.all(out == 0.0)

    def test_frame_arithmetic(self):
        n = 24000
        clip = AudioClip(np.random.default_rng(0).uniform(-0.5, 0.5, n).astype(np.float32), 24000)
        for i, (win, hop, bins) in enumerate(zip(self.cfg.window_sizes, self.cfg.hops, self.cfg.mel_bins)):
            out = mel_spectrogram(clip, self.cfg, i)
            assert out.shape == (bins, 1 + (n - win) // hop)

    def test_tone_at_filter_center_wins_that_bin(self):
        # filterbank oracle: energy at a triangle's center lands in that filter
        sr, win, bins = 24000, 1024, 80
        for target_bin in (20, 40, 60):
            f = mel_center_frequency(sr, win, bins, target_bin)
            t = np.arange(sr) / sr
            clip = AudioClip((0.5 * np.sin(2 * np.pi * f * t)).astype(np.float32), sr)
            out = mel_spectrogram(clip, self.cfg, 1)
            assert int(np.argmax(out.mean(axis=1))) == target_bin

    def test_deterministic(self):
        clip = AudioClip(np.random.default_rng(4).uniform(-0.5, 0.5, 4096).astype(np.float32), 24000)
        a = mel_spectrogram(clip, self.cfg, 0)
        b = mel_spectrogram(clip, self.cfg, 0)
        assert np.array_equal(a, b)

    def test_short_clip_rejected(self):
        clip = AudioClip(np.ones(100, dtype=np.float32) * 0.1, 24000)
        with pytest.raises(ValidationError):
            mel_spectrogram(clip, self.cfg, 1)


class TestStft:
    def test_dc_signal_bin_zero(self):
        c = 0.25
        window = 256
        clip = AudioClip(np.full(2048, c, dtype=np.float32), 24000)
        out = stft(clip, window)
        expected = c * float(hann_window(window).sum())
        assert np.allclose(np.abs(out[0]), expected, rtol=1e-5)

    def test_zero_signal(self):
        clip = AudioClip(np.zeros(2048, dtype=np.float32) + 0.0, 24000)
        clip.samples[0] = 0.0
        assert np.all(stft(clip, 512) == 0)

    def test_parseval_consistency(self):
        # per-frame Parseval oracle: one-sided spectrum energy vs windowed frame
        rng = np.random.default_rng(7)
        x = rng.uniform(-0.9, 0.9, 8192).astype(np.float32)
        clip = AudioClip(x, 24000)
        window, hop = 512, 128
        spec = stft(clip, window, hop)
        win = hann_window(window).numpy()
        mag2 = np.abs(spec.astype(np.complex128)) ** 2
        onesided = mag2[0] + mag2[-1] + 2 * mag2[1:-1].sum(axis=0)
        for frame in range(spec.shape[1]):
            seg = x[frame * hop : frame * hop + window].astype(np.float64) * win
            time_energy = window * np.sum(seg**2)
            assert abs(onesided[frame] - time_energy) <= 0.01 * max(time_energy, 1e-12)

    def test_short_signal_rejected(self):
        clip = AudioClip(np.ones(100, dtype=np.float32) * 0.1, 24000)
        with pytest.raises(ValidationError):
            stft(clip, 512)


class TestSpectralConfig:
    def test_rejects_non_increasing(self):
        with pytest.raises(ValidationError):
            SpectralConfig((512, 256), (8, 8))

    def test_rejects_small_mel(self):
        with pytest.raises(ValidationError):
            SpectralConfig((256, 512), (4, 8))

    def test_hops_are_quarter_window(self):
        cfg = SpectralConfig()
        assert cfg.hops == tuple(w // 4 for w in cfg.window_sizes)
        assert cfg.n_scales == len(cfg.window_sizes)
