"""
Tests for the whisper2speech command line
"""

import os
import tempfile
import unittest

from click.testing import CliRunner

from whisper2speech import cli


class TestCli(unittest.TestCase):
    """Verbs, exit codes and output files at desk-test scale."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.runner = CliRunner()
        self.checkpoints = os.path.join(self.tmp.name, "checkpoints")
        self.base = [
            "--preset",
            "desk_test",
            "--checkpoint-dir",
            self.checkpoints,
            "--set",
            "corpus.utterances_per_speaker=2",
            "--set",
            "stage1.steps=2",
            "--log-level",
            "WARNING",
        ]

    def tearDown(self):
        self.tmp.cleanup()

    def invoke(self, *args):
        return self.runner.invoke(cli, self.base + list(args))

    def make_corpus(self):
        corpus = os.path.join(self.tmp.name, "corpus")
        result = self.invoke("make-synth-data", "--out", corpus)
        self.assertEqual(result.exit_code, 0, result.output)
        return os.path.join(corpus, "manifest.jsonl")

    def test_status_on_empty_directory(self):
        result = self.invoke("status")
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertIn("missing", result.output)

    def test_invalid_config_exits_with_validation_code(self):
        result = self.invoke("--set", "seed=null", "status")
        self.assertEqual(result.exit_code, 1)

    def test_missing_checkpoint_exits_with_dependency_code(self):
        manifest = self.make_corpus()
        result = self.invoke("convert", "--manifest", manifest, "--out", os.path.join(self.tmp.name, "out"))
        self.assertEqual(result.exit_code, 2)
        self.assertIn("Missing dependency", result.output)

    def test_bad_manifest_exits_with_validation_code(self):
        path = os.path.join(self.tmp.name, "broken.jsonl")
        with open(path, "w", encoding="utf-8") as f:
            f.write('{"utt_id": "a"}\n')
        result = self.invoke("train-stage1", "--manifest", path)
        self.assertEqual(result.exit_code, 1)
        self.assertIn("missing fields", result.output)

    def test_train_stage1_then_export(self):
        manifest = self.make_corpus()
        result = self.invoke("train-stage1", "--manifest", manifest)
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertTrue(os.path.exists(os.path.join(self.checkpoints, "stage1.pt")))

        out = os.path.join(self.tmp.name, "features")
        result = self.invoke("export-features", "--manifest", manifest, "--out", out, "--prosody")
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertEqual(len(os.listdir(os.path.join(out, "content"))), 8)
        self.assertEqual(len(os.listdir(os.path.join(out, "prosody"))), 4)

    def test_eval_reports_missing_outputs(self):
        manifest = self.make_corpus()
        outputs = os.path.join(self.tmp.name, "outputs")
        report = os.path.join(self.tmp.name, "metrics.jsonl")
        result = self.invoke("eval", "--manifest", manifest, "--outputs-dir", outputs, "--out", report, "--no-baseline")
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertTrue(os.path.exists(report))


if __name__ == "__main__":
    unittest.main()
