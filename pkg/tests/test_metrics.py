"""
Tests for the metric harness, external adapters and report rendering
"""

import io
import os
import shutil
import subprocess
import tempfile
import unittest
from unittest.mock import MagicMock, patch

import numpy as np
import requests
from rich.console import Console

from src.analyzers.external_adapters import (
    CommandMetricAdapter,
    MetricAdapter,
    ServiceMetricAdapter,
    build_adapters,
)
from src.analyzers.metrics import (
    CONVERTED,
    INPUT_SPEAKER,
    WHISPER_INPUT,
    MetricHarness,
    build_harness,
    duration_error,
    evaluate,
    harmonic_to_noise_ratio,
    mel_cepstral_distortion,
    output_path,
    predicted_frames,
    time_normalize,
)
from src.audio.frame_domains import FrameSpec, Waveform, compute_mel
from src.collectors.manifest import load_manifest, pairs
from src.collectors.synthetic_corpus import SynthSpec, write_synthetic_corpus
from src.utils.config_manager import load_run_config
from src.utils.data_manager import DataManager
from src.utils.errors import ArgumentError, ConfigError
from src.visualizers.report_generator import ReportGenerator

SPEC16, SPEC22 = FrameSpec.analysis_16k(), FrameSpec.synthesis_22k()


def harmonic(n_samples, f0=150.0, rate=22050):
    t = np.arange(n_samples) / rate
    return Waveform(0.1 * sum(np.sin(2 * np.pi * k * f0 * t) / k for k in range(1, 6)), rate)


class FixedAdapter(MetricAdapter):
    """Scores every file with its index."""

    def score(self, wav_paths, texts=None):
        self.texts = list(texts or [])
        return {path: float(i) for i, path in enumerate(wav_paths)}


class TestInternalMetrics(unittest.TestCase):
    def test_time_normalize(self):
        frames = np.array([[0.0], [1.0]])
        np.testing.assert_allclose(time_normalize(frames, 3), [[0.0], [0.5], [1.0]])
        self.assertIs(time_normalize(frames, 2), frames)
        self.assertEqual(time_normalize(frames[:1], 4).shape, (4, 1))
        with self.assertRaises(ArgumentError):
            time_normalize(frames, 0)

    def test_mcd_of_identical_mels_is_zero(self):
        mel = compute_mel(harmonic(8192), SPEC22)
        self.assertAlmostEqual(mel_cepstral_distortion(mel, mel), 0.0, places=9)
        other = compute_mel(Waveform(0.1 * np.random.default_rng(0).standard_normal(8192), 22050), SPEC22)
        self.assertGreater(mel_cepstral_distortion(other, mel), 1.0)

    def test_hnr_orders_harmonic_above_noise(self):
        noise = Waveform(0.1 * np.random.default_rng(1).standard_normal(22050), 22050)
        self.assertGreater(harmonic_to_noise_ratio(harmonic(22050)), 10 * harmonic_to_noise_ratio(noise))
        self.assertEqual(harmonic_to_noise_ratio(Waveform(np.zeros(4096), 22050)), 0.0)

    def test_duration_error(self):
        n16 = 31840
        frames = predicted_frames(n16, SPEC16, SPEC22)
        self.assertEqual(frames, 172)
        self.assertEqual(duration_error(Waveform(np.zeros(frames * 256), 22050), n16, SPEC16, SPEC22), 0)
        self.assertEqual(duration_error(Waveform(np.zeros((frames + 3) * 256), 22050), n16, SPEC16, SPEC22), 3)

    def test_harness_validation(self):
        with self.assertRaises(ArgumentError):
            MetricHarness(cosine_reference="target")
        run = load_run_config(preset="desk_test", overrides=["evaluation.cosine_reference=input_speaker"])
        self.assertEqual(build_harness(run).cosine_reference, INPUT_SPEAKER)


class TestEvaluate(unittest.TestCase):
    """Scoring a directory of converted outputs against the manifest."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        manifest = write_synthetic_corpus(SynthSpec(n_speakers=1, utterances_per_speaker=2), self.tmp.name)
        self.records = load_manifest(manifest)
        self.outputs = os.path.join(self.tmp.name, "outputs")
        os.makedirs(self.outputs)
        whisper, normal = pairs(self.records)[0]
        # the normal recording stands in for a perfect conversion
        shutil.copy(normal.path, output_path(self.outputs, normal.pair_id))

    def tearDown(self):
        self.tmp.cleanup()

    def test_self_comparison_and_missing_output(self):
        report = evaluate(self.records, self.outputs, include_input_baseline=True)
        converted = [r for r in report.rows if r.system == CONVERTED]
        self.assertEqual(len(converted), 2)
        perfect, missing = converted
        self.assertAlmostEqual(perfect.mel_cepstral_distortion, 0.0, places=6)
        self.assertAlmostEqual(perfect.speaker_cosine, 1.0, places=6)
        self.assertIsNone(perfect.error)
        self.assertIsNotNone(missing.error)
        self.assertEqual(len(report.errors()), 1)

        summary = report.aggregate()
        self.assertEqual(summary[CONVERTED]["n_utterances"], 1)
        self.assertEqual(summary[WHISPER_INPUT]["n_utterances"], 2)
        self.assertAlmostEqual(summary[CONVERTED]["mel_cepstral_distortion"], 0.0, places=6)
        self.assertNotIn("utmos", summary[CONVERTED])

    def test_unreadable_reference_becomes_error_rows(self):
        whisper, _ = pairs(self.records)[1]
        with open(whisper.path, "wb") as f:
            f.write(b"not a wav")
        report = evaluate(self.records, self.outputs, include_input_baseline=True)
        self.assertEqual(len(report.rows), 4)
        broken = [r for r in report.rows if r.pair_id == whisper.pair_id]
        self.assertEqual({r.system for r in broken}, {CONVERTED, WHISPER_INPUT})
        self.assertTrue(all(r.error for r in broken))
        summary = report.aggregate()
        self.assertEqual(summary[CONVERTED]["n_utterances"], 1)
        self.assertEqual(summary[WHISPER_INPUT]["n_utterances"], 1)

    def test_baseline_is_less_harmonic_than_normal(self):
        report = evaluate(self.records, self.outputs, include_input_baseline=True)
        summary = report.aggregate()
        self.assertGreater(summary[CONVERTED]["hnr_db"], summary[WHISPER_INPUT]["hnr_db"])

    def test_adapters_fill_external_fields(self):
        adapter = FixedAdapter("utmos")
        report = evaluate(self.records, self.outputs, adapters=[adapter])
        perfect = report.rows[0]
        self.assertEqual(perfect.external, {"utmos": 0.0})
        self.assertEqual(report.rows[1].external, {})
        self.assertEqual(adapter.texts, [pairs(self.records)[0][1].text])
        self.assertIn("utmos", report.aggregate()[CONVERTED])

    def test_records_layout(self):
        records = evaluate(self.records, self.outputs).to_records()
        self.assertEqual(records[0]["type"], "header")
        self.assertEqual(records[0]["cosine_reference"], "paired_normal")
        self.assertEqual([r["type"] for r in records[1:3]], ["utterance", "utterance"])
        self.assertEqual(records[-1]["type"], "aggregate")


class TestExternalAdapters(unittest.TestCase):
    def test_command_adapter_parses_stdout(self):
        adapter = CommandMetricAdapter("utmos", ["utmos-score"], text_flag="--text")
        completed = subprocess.CompletedProcess(args=[], returncode=0, stdout="3.1\n\n2.9\n")
        with patch("src.analyzers.external_adapters.subprocess.run", return_value=completed) as run:
            scores = adapter.score(["a.wav", "b.wav"], ["hi", None])
        self.assertEqual(scores, {"a.wav": 3.1, "b.wav": 2.9})
        self.assertEqual(run.call_args[0][0], ["utmos-score", "--text", "hi", "--text", "", "a.wav", "b.wav"])

    def test_command_adapter_failures_give_no_scores(self):
        adapter = CommandMetricAdapter("utmos", ["utmos-score"])
        error = subprocess.CalledProcessError(1, ["utmos-score"])
        with patch("src.analyzers.external_adapters.subprocess.run", side_effect=error):
            self.assertEqual(adapter.score(["a.wav"]), {})
        short = subprocess.CompletedProcess(args=[], returncode=0, stdout="3.1\n")
        with patch("src.analyzers.external_adapters.subprocess.run", return_value=short):
            self.assertEqual(adapter.score(["a.wav", "b.wav"]), {})
        garbled = subprocess.CompletedProcess(args=[], returncode=0, stdout="good\n")
        with patch("src.analyzers.external_adapters.subprocess.run", return_value=garbled):
            self.assertEqual(adapter.score(["a.wav"]), {})
        self.assertEqual(adapter.score([]), {})

    def test_service_adapter(self):
        adapter = ServiceMetricAdapter("cer", "http://localhost:9/cer")
        response = MagicMock()
        response.json.return_value = {"scores": [0.25, 0.5]}
        with patch("src.analyzers.external_adapters.requests.post", return_value=response) as post:
            scores = adapter.score(["a.wav", "b.wav"], ["x", "y"])
        self.assertEqual(scores, {"a.wav": 0.25, "b.wav": 0.5})
        self.assertEqual(post.call_args[1]["json"], {"paths": ["a.wav", "b.wav"], "texts": ["x", "y"]})

        with patch(
            "src.analyzers.external_adapters.requests.post", side_effect=requests.exceptions.ConnectionError("down")
        ):
            self.assertEqual(adapter.score(["a.wav"]), {})
        response.json.return_value = {"detail": "oops"}
        with patch("src.analyzers.external_adapters.requests.post", return_value=response):
            self.assertEqual(adapter.score(["a.wav"]), {})

    def test_build_adapters(self):
        adapters = build_adapters(
            [{"name": "utmos", "command": ["utmos-score"]}, {"name": "cer", "kind": "service", "url": "http://x"}]
        )
        self.assertIsInstance(adapters[0], CommandMetricAdapter)
        self.assertIsInstance(adapters[1], ServiceMetricAdapter)
        self.assertEqual(build_adapters(None), [])
        for bad in ({"kind": "command", "command": ["x"]}, {"name": "a", "kind": "grpc"}, {"name": "a"}):
            with self.assertRaises(ConfigError):
                build_adapters([bad])


class TestReportGenerator(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        manifest = write_synthetic_corpus(SynthSpec(n_speakers=1, utterances_per_speaker=1), self.tmp.name)
        records = load_manifest(manifest)
        whisper, normal = pairs(records)[0]
        shutil.copy(normal.path, output_path(self.tmp.name, normal.pair_id))
        self.report = evaluate(records, self.tmp.name, include_input_baseline=True)
        self.buffer = io.StringIO()
        self.generator = ReportGenerator(Console(file=self.buffer, width=200))

    def tearDown(self):
        self.tmp.cleanup()

    def test_table_has_systems_and_reference_rows(self):
        table = self.generator.metric_table(self.report)
        self.assertEqual(table.row_count, 2 + 3)
        self.generator.print_report(self.report)
        self.assertIn("converted", self.buffer.getvalue())

    def test_write_report(self):
        path = self.generator.write_report(self.report, os.path.join(self.tmp.name, "out", "metrics.jsonl"))
        records = DataManager.read_records(path)
        self.assertEqual(records[0]["type"], "header")
        self.assertEqual(sum(r["type"] == "aggregate" for r in records), 2)

    def test_plot_history(self):
        history = [{"step": i, "total": 1.0 / i, "kl_w": 0.1} for i in range(1, 6)]
        path = self.generator.plot_history(history, "stage1", os.path.join(self.tmp.name, "plots", "s1.png"))
        self.assertTrue(os.path.getsize(path) > 0)


if __name__ == "__main__":
    unittest.main()
