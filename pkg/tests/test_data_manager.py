"""
Tests for the Data Manager
"""

import tempfile
import unittest

import numpy as np
import torch

from src.audio.frame_domains import PREDICTED, FrameSpec, MelSpectrogram
from src.utils.data_manager import DataManager
from src.utils.errors import DependencyError, FormatError


class TestDataManager(unittest.TestCase):
    """Test cases for DataManager."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.data = DataManager(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_checkpoint_round_trip(self):
        torch.manual_seed(0)
        model = torch.nn.Sequential(torch.nn.Linear(4, 8), torch.nn.Tanh(), torch.nn.Linear(8, 2))
        optimizer = torch.optim.Adam(model.parameters())
        x = torch.randn(3, 4)
        expected = model(x).detach()

        self.data.save_checkpoint("stage1", {"model": model}, {"seed": 7}, step=12, optimizers={"model": optimizer})
        self.assertTrue(self.data.has_checkpoint("stage1"))
        self.assertFalse(self.data.has_checkpoint("stage2"))

        restored = torch.nn.Sequential(torch.nn.Linear(4, 8), torch.nn.Tanh(), torch.nn.Linear(8, 2))
        payload = self.data.load_checkpoint("stage1")
        DataManager.restore(payload, {"model": restored})
        self.assertEqual(payload["step"], 12)
        self.assertEqual(payload["config"], {"seed": 7})
        self.assertLess(float((restored(x) - expected).abs().max()), 1e-6)

    def test_missing_checkpoint(self):
        with self.assertRaises(DependencyError):
            self.data.load_checkpoint("stage2")

    def test_wrong_checkpoint(self):
        model = torch.nn.Linear(2, 2)
        path = self.data.save_checkpoint("stage1", {"model": model}, {})
        with self.assertRaises(FormatError):
            self.data.load_checkpoint("stage2", path=path)
        payload = self.data.load_checkpoint("stage1")
        with self.assertRaises(FormatError):
            DataManager.restore(payload, {"other": model})
        with self.assertRaises(FormatError):
            DataManager.restore(payload, {"model": torch.nn.Linear(3, 2)})

        torch.save({"format_version": 99, "stage": "stage3"}, self.data.checkpoint_path("stage3"))
        with self.assertRaises(FormatError):
            self.data.load_checkpoint("stage3")

        with open(self.data.checkpoint_path("stage2"), "wb") as f:
            f.write(b"garbage")
        with self.assertRaises(FormatError):
            self.data.load_checkpoint("stage2")

    def test_history(self):
        history = [{"step": 1, "total": 2.0}, {"step": 2, "total": 1.5}]
        path = self.data.save_history(history, self.data.history_path("stage1"), "stage1")
        self.assertEqual(DataManager.load_history(path), history)
        with self.assertRaises(FileNotFoundError):
            DataManager.load_history(self.data.history_path("stage2"))

    def test_cached_mel(self):
        spec = FrameSpec.synthesis_22k()
        frames = np.random.default_rng(0).normal(size=(7, 80))
        self.data.save_cached_mel(MelSpectrogram(frames, spec, PREDICTED), "spk00_000_n")
        loaded = self.data.load_cached_mel("spk00_000_n")
        self.assertEqual(loaded.provenance, PREDICTED)
        self.assertEqual(loaded.spec, spec)
        self.assertEqual(loaded.utt_id, "spk00_000_n")
        np.testing.assert_allclose(loaded.frames, frames, atol=1e-6)
        with self.assertRaises(DependencyError):
            self.data.load_cached_mel("spk00_001_n")

    def test_records_and_summary(self):
        path = DataManager.write_records([{"a": 1}, {"b": "x"}], f"{self.tmp.name}/out/records.jsonl")
        self.assertEqual(DataManager.read_records(path), [{"a": 1}, {"b": "x"}])

        self.data.save_checkpoint("stage1", {"model": torch.nn.Linear(2, 2)}, {})
        summary = self.data.get_data_summary()
        self.assertEqual(set(summary["checkpoints"]), {"stage1"})
        self.assertGreater(summary["checkpoints"]["stage1"]["size_bytes"], 0)
        self.assertEqual(summary["cached_mels"], 0)


if __name__ == "__main__":
    unittest.main()
