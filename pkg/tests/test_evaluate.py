import csv
import json

import numpy as np
import pytest
import torch

from tsmkit.audio import Waveform
from tsmkit.classical import TsmParams, wsola_stretch
from tsmkit.engine import resample_stretch
from tsmkit.evaluate import (
    CSV_COLUMNS,
    EvalReport,
    bench_inference,
    cr_ablation,
    dominant_frequency,
    duration_error_pct,
    evaluate_methods,
    pitch_error,
    snr_db,
    synthetic_corpus,
)
from tsmkit.model import Autoencoder, ModelConfig

from conftest import SR, make_tone


class TestDominantFrequency:
    def test_pure_tone_recovered_well_below_bin_width(self):
        # bin width is 22050/8192 = 2.69 Hz; quadratic interpolation
        # must land within 0.5 Hz
        for freq in (110.0, 440.0, 1761.0):
            w = make_tone(freq, duration=1.0)
            est = dominant_frequency(w)
            assert est is not None
            assert abs(est - freq) < 0.5

    def test_silence_flagged(self):
        w = Waveform(np.full(SR, 1e-5), SR)
        assert dominant_frequency(w) is None

    def test_short_input_still_estimates(self):
        w = make_tone(440.0, duration=0.1)
        est = dominant_frequency(w)
        assert est is not None and abs(est - 440.0) < 3.0


class TestPitchError:
    def test_zero_on_identical(self, tone440):
        assert pitch_error(tone440, tone440) == pytest.approx(0.0)

    def test_octave_shift_is_100_percent(self):
        a = make_tone(440.0)
        b = make_tone(880.0)
        assert pitch_error(a, b) == pytest.approx(100.0, abs=0.5)

    def test_silent_side_excluded(self, tone440):
        silent = Waveform(np.zeros(SR), SR)
        assert pitch_error(tone440, silent) is None
        assert pitch_error(silent, tone440) is None


class TestScalarMetrics:
    def test_duration_error(self):
        assert duration_error_pct(22050, 11025, 2.0) == pytest.approx(0.0)
        assert duration_error_pct(22050, 11135, 2.0) == pytest.approx(110 / 11025 * 100)

    def test_snr_infinite_on_exact(self, tone440):
        assert snr_db(tone440, tone440) == np.inf

    def test_snr_matches_hand_value(self):
        ref = Waveform(np.ones(1000), SR)
        noisy = Waveform(np.ones(1000) + 0.1, SR)
        assert snr_db(ref, noisy) == pytest.approx(20.0, abs=1e-6)


class TestReport:
    def make_report(self):
        report = EvalReport()
        report.add(method="wsola", sample="a", speed=2.0, duration_error_pct=1.0,
                   pitch_error_pct=0.5, snr_db=None, ms_per_audio_sec=None, flags="")
        report.add(method="wsola", sample="b", speed=2.0, duration_error_pct=3.0,
                   pitch_error_pct=1.5, snr_db=None, ms_per_audio_sec=None, flags="")
        report.add(method="pv", sample="a", speed=2.0, duration_error_pct=0.0,
                   pitch_error_pct=None, snr_db=None, ms_per_audio_sec=None, flags="silent")
        return report

    def test_aggregate_means(self):
        agg = self.make_report().aggregate()
        assert agg["wsola@2.0"]["duration_error_pct"] == pytest.approx(2.0)
        assert agg["wsola@2.0"]["pitch_error_pct"] == pytest.approx(1.0)
        assert "pitch_error_pct" not in agg["pv@2.0"]  # silent row excluded

    def test_csv_columns_fixed(self, tmp_path):
        path = tmp_path / "r.csv"
        self.make_report().write_csv(path)
        with open(path) as f:
            rows = list(csv.reader(f))
        assert rows[0] == CSV_COLUMNS
        assert len(rows) == 4

    def test_json_aggregate(self, tmp_path):
        path = tmp_path / "r.json"
        self.make_report().write_json(path)
        data = json.loads(path.read_text())
        assert data["n_rows"] == 3
        assert "wsola@2.0" in data["aggregates"]

    def test_plot_data(self, tmp_path):
        path = tmp_path / "r.dat"
        self.make_report().write_plot_data(path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# speed")
        assert lines[1].split()[0] == "2.0"


class TestEvaluateMethods:
    def test_rows_and_scores(self):
        corpus = {"tone": make_tone(440.0, duration=0.5)}
        methods = {
            "wsola": lambda w, r: wsola_stretch(w, TsmParams(speed=r)),
            "resample": lambda w, r: resample_stretch(w, r),
        }
        report = evaluate_methods(methods, corpus, [1.5, 2.0])
        assert len(report.rows) == 4
        means = report.method_means("pitch_error_pct")
        assert means["wsola"] < 1.0
        assert means["resample"] > 40.0  # control shifts pitch with speed

    def test_synthetic_corpus_contents(self):
        corpus = synthetic_corpus(SR, duration=0.5)
        assert set(corpus) == {"sine440", "two_tone", "chirp", "noise_bursts"}
        for w in corpus.values():
            assert w.sample_rate == SR
            assert len(w) == round(0.5 * SR)
            assert np.all(np.isfinite(w.samples))


class TestBench:
    def test_unit_conversion(self):
        # 0.5 s of audio processed in ~50 ms must report ~100 ms/sec
        import time as _time

        def slow_identity(w, r):
            _time.sleep(0.05)
            return w

        corpus = {"tone": make_tone(440.0, duration=0.5)}
        report = bench_inference({"slow": slow_identity}, corpus, speeds=[1.0],
                                 repetitions=3, warmup=0)
        val = report.rows[0]["ms_per_audio_sec"]
        assert 80.0 < val < 200.0

    def test_rejects_zero_repetitions(self):
        with pytest.raises(ValueError):
            bench_inference({}, {}, repetitions=0)


class TestCrAblation:
    def test_row_cardinality(self):
        models = {}
        for cr in (256, 512):
            torch.manual_seed(cr)
            models[cr] = Autoencoder(
                ModelConfig.preset(cr, base_channels=4, max_channels=16, latent_channels=8)
            ).eval()
        report = cr_ablation(models, tone_freqs=(110.0, 440.0, 1760.0), speeds=[1.0, 2.0],
                             duration=0.5)
        assert len(report.rows) == 2 * 3 * 2
        methods = {row["method"] for row in report.rows}
        assert methods == {"cr256", "cr512"}
        for row in report.rows:
            assert row["duration_error_pct"] <= 1.0
