"""
End-to-end run at toy scale: synthetic corpus, Stages 1-2, Griffin-Lim conversion
of ten held-out whispered utterances
"""

import os
import tempfile
import unittest

import numpy as np

from src.alignment.length_channel_aligner import target_length
from src.analyzers.metrics import harmonic_to_noise_ratio
from src.audio.frame_domains import load_wav, num_frames, resample
from src.collectors.manifest import load_manifest, normal_only, pairs
from src.collectors.synthetic_corpus import write_synthetic_corpus
from src.collectors.utterance_store import UtteranceStore
from src.inference.converter import PipelineModels, convert_utterance
from src.models.content_encoder import encoded_length
from src.trainers.common import build_provider, training_split
from src.trainers.stage1 import train_stage1
from src.trainers.stage2 import train_stage2
from src.utils.config_manager import load_run_config
from src.utils.data_manager import DataManager


class TestEndToEnd(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.run_cfg = load_run_config(preset="toy", overrides=["split.eval_pairs_per_speaker=5"])
        records = load_manifest(write_synthetic_corpus(cls.run_cfg.corpus, os.path.join(cls.tmp.name, "corpus")))
        train, held_out = training_split(cls.run_cfg, records)
        store = UtteranceStore(train, cls.run_cfg.spec16, cls.run_cfg.spec22)
        data = DataManager(os.path.join(cls.tmp.name, "checkpoints"))
        train_stage1(cls.run_cfg, train, data, store)
        train_stage2(cls.run_cfg, normal_only(train), data, store)

        cls.models = PipelineModels.load(cls.run_cfg, data)
        cls.provider = build_provider(cls.run_cfg)
        cls.held_pairs = pairs(held_out)
        cls.results = [convert_utterance(w.path, n, cls.models, cls.provider) for w, n in cls.held_pairs]

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_ten_held_out_pairs(self):
        self.assertEqual(len(self.held_pairs), 10)
        self.assertIsNone(self.models.vocoder)

    def test_output_length_follows_target_length(self):
        for (whisper, _), result in zip(self.held_pairs, self.results):
            n16 = len(resample(load_wav(whisper.path), 16000))
            t_enc = encoded_length(num_frames(n16, self.run_cfg.spec16))
            self.assertEqual(result.t_enc, t_enc)
            self.assertEqual(len(result.waveform), target_length(t_enc, self.run_cfg.spec16, self.run_cfg.spec22) * 256)

    def test_outputs_more_harmonic_than_whispers(self):
        wins = 0
        for (whisper, _), result in zip(self.held_pairs, self.results):
            if harmonic_to_noise_ratio(result.waveform) > harmonic_to_noise_ratio(load_wav(whisper.path)):
                wins += 1
        self.assertGreaterEqual(wins, 7)

    def test_reruns_are_bit_identical(self):
        whisper, normal = self.held_pairs[0]
        again = convert_utterance(whisper.path, normal, self.models, self.provider)
        np.testing.assert_array_equal(again.waveform.samples, self.results[0].waveform.samples)
        np.testing.assert_array_equal(again.mel.frames, self.results[0].mel.frames)


if __name__ == "__main__":
    unittest.main()
