import json

import numpy as np
import pytest
import torch

from tsmkit.audio import Waveform, write_wav
from tsmkit.model import ModelConfig
from tsmkit.training import (
    DatasetError,
    NonFiniteLossError,
    SegmentSampler,
    TrainConfig,
    Trainer,
    TrainMetrics,
    detect_divergence,
    ingest_dataset,
)

from conftest import SR, make_tone

TINY_MODEL = dict(
    stride_schedule=(2, 2), base_channels=4, max_channels=8, latent_channels=4
)


def tiny_config(**over):
    defaults = dict(
        model=ModelConfig(**TINY_MODEL),
        steps=4,
        segment_len=1024,
        batch_size=2,
        seed=3,
        disc_base_channels=4,
        disc_max_channels=16,
        checkpoint_every=100,
    )
    defaults.update(over)
    return TrainConfig(**defaults)


def tiny_sampler(cfg, n_files=2):
    waves = [make_tone(200.0 * (i + 1), duration=0.1) for i in range(n_files)]
    return SegmentSampler(waves, cfg.segment_len, cfg.batch_size, seed=cfg.seed)


def metric(step, d_loss=6.0, ar=0.5, nr=0.1):
    return TrainMetrics(step=step, d_loss=d_loss, g_adv=0.0, l_fm=1.0, ar=ar, nr=nr)


class TestSegmentSampler:
    def test_deterministic_given_seed(self):
        waves = [make_tone(440.0, duration=0.2)]
        a = SegmentSampler(waves, 128, 4, seed=9)
        b = SegmentSampler(waves, 128, 4, seed=9)
        for step in (1, 2, 77):
            np.testing.assert_array_equal(a.batch(step), b.batch(step))

    def test_independent_of_history(self):
        waves = [make_tone(440.0, duration=0.2)]
        a = SegmentSampler(waves, 128, 2, seed=9)
        b = SegmentSampler(waves, 128, 2, seed=9)
        a.batch(1)
        a.batch(2)
        np.testing.assert_array_equal(a.batch(50), b.batch(50))

    def test_single_file_segments_are_windows(self):
        w = make_tone(100.0, duration=2.0)
        sampler = SegmentSampler([w], 16384, 3, seed=0)
        batch = sampler.batch(1)
        for row in batch:
            # locate the window by its first samples
            starts = np.flatnonzero(np.isclose(w.samples[: -16384 + 1], row[0], atol=0))
            assert any(np.array_equal(w.samples[s : s + 16384], row) for s in starts)

    def test_short_files_zero_padded(self):
        w = Waveform(np.ones(100) * 0.5, SR)
        sampler = SegmentSampler([w], 256, 1, seed=0)
        row = sampler.batch(1)[0]
        np.testing.assert_array_equal(row[:100], w.samples)
        np.testing.assert_array_equal(row[100:], 0.0)

    def test_offset_uniformity_chi_squared(self):
        n = 1064
        ramp = Waveform(np.arange(n) / n, SR)
        sampler = SegmentSampler([ramp], 64, 1, seed=5)
        draws = 10_000
        offsets = np.array([round(sampler.batch(s)[0, 0] * n) for s in range(draws)])
        n_offsets = n - 64 + 1
        bins = np.histogram(offsets, bins=10, range=(0, n_offsets))[0]
        expected = draws / 10
        chi2 = float(((bins - expected) ** 2 / expected).sum())
        assert chi2 < 28.0  # chi^2_{9, 0.999} = 27.88; deterministic seed

    def test_file_choice_uniform(self):
        waves = [Waveform(np.full(64, 0.1 * (i + 1)), SR) for i in range(4)]
        sampler = SegmentSampler(waves, 64, 1, seed=2)
        draws = 8000
        picks = np.array([round(sampler.batch(s)[0, 0] * 10) for s in range(draws)])
        counts = np.bincount(picks, minlength=5)[1:5]
        expected = draws / 4
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        assert chi2 < 16.3  # chi^2_{3, 0.999}

    def test_empty_rejected(self):
        with pytest.raises(DatasetError):
            SegmentSampler([], 64, 1)

    def test_ingest_dataset_from_dir(self, tmp_path):
        write_wav(make_tone(440.0, duration=0.3), tmp_path / "a.wav")
        write_wav(make_tone(330.0, duration=0.3, sr=44100), tmp_path / "b.wav")
        sampler = ingest_dataset(tmp_path, 256, 2, seed=0)
        assert len(sampler.files) == 2
        # the 44.1 kHz file was resampled to canonical length
        assert abs(sampler.files[1].size - round(0.3 * SR)) <= 1

    def test_ingest_empty_dir(self, tmp_path):
        with pytest.raises(DatasetError):
            ingest_dataset(tmp_path, 256, 1)

    def test_ingest_unreadable_files_only(self, tmp_path):
        (tmp_path / "junk.wav").write_bytes(b"not audio")
        with pytest.raises(DatasetError):
            ingest_dataset(tmp_path, 256, 1)


class TestDivergenceRule:
    def test_healthy_flat_trace(self):
        trace = [metric(i) for i in range(1, 501)]
        assert detect_divergence(trace, window=200) == "healthy"

    def test_fires_on_dominated_discriminator_with_rising_recon(self):
        trace = [metric(i) for i in range(1, 201)]
        trace += [metric(200 + i, d_loss=0.2, ar=0.5 * 1.2, nr=0.1 * 1.2) for i in range(1, 201)]
        assert detect_divergence(trace, window=200) == "diverging"

    def test_low_d_loss_alone_is_healthy(self):
        trace = [metric(i, d_loss=0.2, ar=0.5 - 0.0001 * i) for i in range(1, 501)]
        assert detect_divergence(trace, window=200) == "healthy"

    def test_requires_minimum_history(self):
        with pytest.raises(ValueError):
            detect_divergence([metric(1)], window=200)

    def test_single_window_is_healthy(self):
        trace = [metric(i, d_loss=0.0) for i in range(1, 250)]
        assert detect_divergence(trace, window=200) == "healthy"


class TestTrainer:
    def test_metrics_file_deterministic(self, tmp_path):
        traces = []
        for run in ("a", "b"):
            cfg = tiny_config(run_dir=str(tmp_path / run))
            trainer = Trainer(cfg, sampler=tiny_sampler(cfg))
            trainer.run()
            traces.append((tmp_path / run / "metrics.jsonl").read_bytes())
        assert traces[0] == traces[1]
        lines = [json.loads(l) for l in traces[0].splitlines()]
        assert [l["step"] for l in lines] == [1, 2, 3, 4]
        assert all(l["ar"] >= 0 and l["nr"] >= 0 for l in lines)

    def test_no_cross_network_parameter_leaks(self):
        # with one side's learning rate zeroed, its parameters must stay
        # bit-identical through full training steps
        cfg = tiny_config(lr_discriminator=0.0)
        trainer = Trainer(cfg, sampler=tiny_sampler(cfg))
        before = {k: v.clone() for k, v in trainer.discriminator.state_dict().items()}
        trainer.run()
        for k, v in trainer.discriminator.state_dict().items():
            assert torch.equal(before[k], v), k

        cfg = tiny_config(lr_generator=0.0)
        trainer = Trainer(cfg, sampler=tiny_sampler(cfg))
        before = {k: v.clone() for k, v in trainer.autoencoder.state_dict().items()}
        trainer.run()
        for k, v in trainer.autoencoder.state_dict().items():
            assert torch.equal(before[k], v), k

    def test_monitoring_metrics_do_not_touch_training_state(self, tmp_path):
        # computing AR/NR twice as often must not change a single
        # parameter byte: they carry no gradients
        results = []
        for doubled in (False, True):
            cfg = tiny_config(run_dir=None)
            trainer = Trainer(cfg, sampler=tiny_sampler(cfg))
            if doubled:
                original = trainer.reconstruction_metrics

                def doubled_metrics(x, fake, _orig=original):
                    _orig(x, fake)
                    return _orig(x, fake)

                trainer.reconstruction_metrics = doubled_metrics
            trainer.run()
            results.append({k: v.clone() for k, v in trainer.autoencoder.state_dict().items()})
        for k in results[0]:
            assert torch.equal(results[0][k], results[1][k]), k

    def test_resume_equivalence_bit_exact(self, tmp_path):
        cfg_a = tiny_config(steps=8, run_dir=str(tmp_path / "full"), checkpoint_every=100)
        full = Trainer(cfg_a, sampler=tiny_sampler(cfg_a))
        full.run()

        cfg_b = tiny_config(steps=4, run_dir=str(tmp_path / "half"), checkpoint_every=100)
        half = Trainer(cfg_b, sampler=tiny_sampler(cfg_b))
        half.run()
        ckpt_path = tmp_path / "half" / "step_4.tsmn"
        assert ckpt_path.exists()

        cfg_c = tiny_config(steps=8, run_dir=str(tmp_path / "resumed"), resume_from=str(ckpt_path))
        resumed = Trainer(cfg_c, sampler=tiny_sampler(cfg_c))
        assert resumed.global_step == 4
        resumed.run()

        a = full.autoencoder.state_dict()
        b = resumed.autoencoder.state_dict()
        for k in a:
            assert torch.equal(a[k], b[k]), f"ae {k}"
        da = full.discriminator.state_dict()
        db = resumed.discriminator.state_dict()
        for k in da:
            assert torch.equal(da[k], db[k]), f"disc {k}"

    def test_fresh_discriminator_resets_disc_only(self, tmp_path):
        cfg = tiny_config(steps=3, run_dir=str(tmp_path / "pre"), checkpoint_every=100)
        pre = Trainer(cfg, sampler=tiny_sampler(cfg))
        pre.run()
        ckpt = tmp_path / "pre" / "step_3.tsmn"

        cfg2 = tiny_config(steps=3, resume_from=str(ckpt), fresh_discriminator=True)
        resumed = Trainer(cfg2, sampler=tiny_sampler(cfg2))
        ae_pre = pre.autoencoder.state_dict()
        ae_post = resumed.autoencoder.state_dict()
        for k in ae_pre:
            assert torch.equal(ae_pre[k], ae_post[k])
        d_pre = pre.discriminator.state_dict()
        d_post = resumed.discriminator.state_dict()
        assert any(not torch.equal(d_pre[k], d_post[k]) for k in d_pre)

    def test_nonfinite_generator_loss_aborts_and_restores(self, monkeypatch):
        cfg = tiny_config(steps=1)
        trainer = Trainer(cfg, sampler=tiny_sampler(cfg))
        disc_before = {k: v.clone() for k, v in trainer.discriminator.state_dict().items()}
        ae_before = {k: v.clone() for k, v in trainer.autoencoder.state_dict().items()}

        import tsmkit.training as training_mod

        def poisoned(real, fake, feature_weight=10.0):
            nan = torch.tensor(float("nan"), requires_grad=True)
            return nan, nan, nan

        monkeypatch.setattr(training_mod, "generator_loss", poisoned)
        with pytest.raises(NonFiniteLossError, match="generator"):
            trainer.train_step(trainer.sampler.batch(1), 1)
        for k, v in trainer.discriminator.state_dict().items():
            assert torch.equal(disc_before[k], v), k
        for k, v in trainer.autoencoder.state_dict().items():
            assert torch.equal(ae_before[k], v), k

    def test_nonfinite_discriminator_loss_aborts_before_updates(self, monkeypatch):
        cfg = tiny_config(steps=1)
        trainer = Trainer(cfg, sampler=tiny_sampler(cfg))
        before = {k: v.clone() for k, v in trainer.discriminator.state_dict().items()}

        import tsmkit.training as training_mod

        monkeypatch.setattr(
            training_mod,
            "discriminator_loss",
            lambda real, fake: torch.tensor(float("inf"), requires_grad=True),
        )
        with pytest.raises(NonFiniteLossError, match="discriminator"):
            trainer.train_step(trainer.sampler.batch(1), 1)
        for k, v in trainer.discriminator.state_dict().items():
            assert torch.equal(before[k], v), k

    def test_divergence_warning_flagged(self):
        cfg = tiny_config(divergence_window=2)
        trainer = Trainer(cfg, sampler=tiny_sampler(cfg))
        warnings = []
        trainer.history.extend([metric(i) for i in range(2)])
        trainer.history.extend([metric(i, d_loss=0.1, ar=9.9, nr=9.9) for i in range(2, 4)])
        trainer._check_divergence(warnings.append)
        assert trainer.diverging
        assert len(warnings) == 1
        trainer._check_divergence(warnings.append)  # reported once
        assert len(warnings) == 1

    def test_segment_len_must_divide_cr(self):
        with pytest.raises(ValueError, match="multiple"):
            tiny_config(segment_len=1023)

    def test_perfect_reconstruction_metrics_are_zero(self):
        cfg = tiny_config()
        trainer = Trainer(cfg, sampler=tiny_sampler(cfg))
        x = torch.randn(2, 1, 1024)
        ar, nr = trainer.reconstruction_metrics(x, x.clone())
        assert ar == 0.0
        assert nr == 0.0
