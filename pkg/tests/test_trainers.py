"""
Tests for the stage trainers and the conversion path at desk-test dimensions
"""

import os
import shutil
import tempfile
import unittest

import numpy as np
import torch

from src.alignment.length_channel_aligner import target_length
from src.audio.frame_domains import GROUND_TRUTH, PREDICTED, MelSpectrogram, Waveform, num_frames
from src.collectors.manifest import load_manifest, normal_only, pairs
from src.collectors.synthetic_corpus import write_synthetic_corpus
from src.collectors.utterance_store import UtteranceStore
from src.inference.converter import PipelineModels, convert_utterance, resolve_speaker
from src.models.acoustic_model import SpeakerEmbedding
from src.models.conformer_vae import NORMAL, infer_aligned
from src.models.content_encoder import encode_content, encoded_length
from src.trainers.common import BatchSampler, build_provider, pad_batch, prepare_records, training_split
from src.trainers.stage1 import load_stage1, train_stage1
from src.trainers.stage2 import prepare_item, train_stage2, trained_speakers
from src.trainers.stage3 import audit_provenance, random_segment, train_stage3
from src.utils.config_manager import load_run_config
from src.utils.data_manager import DataManager
from src.utils.errors import ArgumentError, DataPolicyError, DependencyError, ProvenanceError

OVERRIDES = [
    "corpus.utterances_per_speaker=2",
    "stage1.steps=3",
    "stage2.steps=3",
    "stage3.steps=2",
    "stage3.segment_frames=8",
    "evaluation.griffin_lim_iters=2",
]


class TestCommon(unittest.TestCase):
    def test_batch_sampler_covers_each_epoch(self):
        sampler = BatchSampler(5, 2, seed=0)
        seen = []
        for _ in range(2):
            seen += sampler.next_batch()
        self.assertEqual(len(set(seen)), 4)
        self.assertEqual(BatchSampler(3, 8, seed=0).next_batch(), [0, 1, 2])

    def test_pad_batch(self):
        padded, lengths = pad_batch([torch.ones(3, 2), torch.ones(5, 2)])
        self.assertEqual(tuple(padded.shape), (2, 5, 2))
        self.assertEqual(lengths, [3, 5])
        self.assertEqual(float(padded[0, 3:].abs().sum()), 0.0)

    def test_prepare_records_generates_corpus(self):
        with tempfile.TemporaryDirectory() as tmp:
            run = load_run_config(
                preset="desk_test", overrides=[f"paths.data_dir={tmp}", "corpus.utterances_per_speaker=1"]
            )
            records = prepare_records(run)
            self.assertTrue(os.path.exists(os.path.join(tmp, "manifest.jsonl")))
            self.assertEqual(len(pairs(records)), 2)

    def test_training_split(self):
        with tempfile.TemporaryDirectory() as tmp:
            run = load_run_config(preset="desk_test", overrides=OVERRIDES)
            records = load_manifest(write_synthetic_corpus(run.corpus, tmp))
            train, held = training_split(run, records)
            self.assertEqual({r.pair_id for r in held}, {"spk00_001", "spk01_001"})
            self.assertEqual(len(train) + len(held), len(records))

            by_speaker = load_run_config(
                preset="desk_test", overrides=OVERRIDES + ["split.train_speakers=[spk00]", "split.eval_speakers=[spk01]"]
            )
            train, held = training_split(by_speaker, records)
            self.assertEqual({r.speaker for r in held}, {"spk01"})


class TestStageTrainers(unittest.TestCase):
    """All three stages trained once on a two-speaker corpus."""

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.run_cfg = load_run_config(preset="desk_test", overrides=OVERRIDES)
        cls.records = load_manifest(write_synthetic_corpus(cls.run_cfg.corpus, os.path.join(cls.tmp.name, "corpus")))
        cls.normals = normal_only(cls.records)
        cls.store = UtteranceStore(cls.records, cls.run_cfg.spec16, cls.run_cfg.spec22)
        cls.data = DataManager(os.path.join(cls.tmp.name, "a"))
        cls.stage1 = train_stage1(cls.run_cfg, cls.records, cls.data, cls.store)
        cls.stage2 = train_stage2(cls.run_cfg, cls.normals, cls.data, cls.store)
        cls.stage3 = train_stage3(cls.run_cfg, cls.normals, cls.data, cls.store)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_histories_and_checkpoints(self):
        self.assertEqual(len(self.stage1.history), 3)
        self.assertEqual(set(self.stage1.final), {"step", "kl_w", "kl_n", "recon_n", "dtw", "total"})
        self.assertEqual(set(self.stage2.final), {"step", "mel_l1", "mel_l2", "pitch_mse", "energy_mse", "total"})
        self.assertEqual(
            set(self.stage3.final), {"step", "adv_g", "adv_d", "feature_match", "mel_recon", "total_g", "total_d"}
        )
        for stage in ("stage1", "stage2", "stage3"):
            self.assertTrue(self.data.has_checkpoint(stage))
        self.assertEqual(DataManager.load_history(self.stage1.history_path), self.stage1.history)
        for entry in self.stage2.history:
            self.assertTrue(all(np.isfinite(v) for v in entry.values()))

    def test_same_seed_reproduces_final_losses(self):
        data = DataManager(os.path.join(self.tmp.name, "b"))
        store = UtteranceStore(self.records, self.run_cfg.spec16, self.run_cfg.spec22)
        again1 = train_stage1(self.run_cfg, self.records, data, store)
        again2 = train_stage2(self.run_cfg, self.normals, data, store)
        for a, b in ((self.stage1.final, again1.final), (self.stage2.final, again2.final)):
            for key in a:
                self.assertAlmostEqual(a[key], b[key], delta=1e-6, msg=key)

    def test_stage2_rejects_whisper(self):
        with self.assertRaises(DataPolicyError):
            train_stage2(self.run_cfg, self.records, self.data, self.store)

    def test_missing_upstream_checkpoints(self):
        empty = DataManager(os.path.join(self.tmp.name, "empty"))
        with self.assertRaises(DependencyError):
            train_stage2(self.run_cfg, self.normals, empty, self.store)
        stage1_only = DataManager(os.path.join(self.tmp.name, "stage1_only"))
        train_stage1(self.run_cfg, self.records, stage1_only, self.store)
        with self.assertRaises(DependencyError):
            train_stage3(self.run_cfg, self.normals, stage1_only, self.store)

    def test_stage3_caches_predicted_mels(self):
        self.assertEqual(self.data.get_data_summary()["cached_mels"], len(self.normals))
        for record in self.normals:
            mel = self.data.load_cached_mel(record.utt_id)
            self.assertEqual(mel.provenance, PREDICTED)
            self.assertEqual(mel.spec, self.run_cfg.spec22)

    def test_provenance_audit(self):
        spec = self.run_cfg.spec22
        predicted = MelSpectrogram(np.zeros((4, 80)), spec, PREDICTED)
        self.assertEqual(audit_provenance([predicted, predicted]), 2)
        with self.assertRaises(ProvenanceError):
            audit_provenance([predicted, MelSpectrogram(np.zeros((4, 80)), spec, GROUND_TRUTH, utt_id="x")])

    def test_random_segment(self):
        spec = self.run_cfg.spec22
        mel = MelSpectrogram(np.arange(20 * 80, dtype=float).reshape(20, 80), spec, PREDICTED)
        reference = Waveform(np.linspace(-0.5, 0.5, 20 * 256), 22050)
        crop, wave = random_segment(mel, reference, 8, np.random.default_rng(0))
        self.assertEqual(crop.num_frames, 8)
        self.assertEqual(len(wave), 8 * 256)
        start = int(crop.frames[0, 0]) // 80
        np.testing.assert_array_equal(wave.samples, reference.samples[start * 256 : (start + 8) * 256])
        whole, same = random_segment(mel, reference, 32, np.random.default_rng(0))
        self.assertIs(whole, mel)
        self.assertIs(same, reference)

    def test_convert_length_law(self):
        models = PipelineModels.load(self.run_cfg, self.data)
        self.assertIsNotNone(models.vocoder)
        provider = build_provider(self.run_cfg)
        whisper, normal = pairs(self.records)[0]
        result = convert_utterance(whisper.path, normal, models, provider)
        n16 = len(self.store.waveform16(whisper))
        t_enc = encoded_length(num_frames(n16, self.run_cfg.spec16))
        t22 = target_length(t_enc, self.run_cfg.spec16, self.run_cfg.spec22)
        self.assertEqual(result.vocoder, "hifigan")
        self.assertEqual(result.t_enc, t_enc)
        self.assertEqual(result.t22, t22)
        self.assertEqual(len(result.waveform), t22 * 256)
        self.assertEqual(len(result.prosody), t22)

    def test_griffin_lim_fallback(self):
        data = DataManager(os.path.join(self.tmp.name, "no_vocoder"))
        for stage in ("stage1", "stage2"):
            shutil.copy(self.data.checkpoint_path(stage), data.checkpoint_path(stage))
        with self.assertRaises(DependencyError):
            PipelineModels.load(self.run_cfg, data, require_vocoder=True)
        models = PipelineModels.load(self.run_cfg, data)
        self.assertIsNone(models.vocoder)
        whisper, normal = pairs(self.records)[1]
        embedding = build_provider(self.run_cfg).embed(normal)
        a = convert_utterance(whisper.path, embedding, models)
        b = convert_utterance(whisper.path, embedding, models)
        self.assertEqual(a.vocoder, "griffin-lim")
        self.assertEqual(len(a.waveform), a.t22 * 256)
        np.testing.assert_array_equal(a.waveform.samples, b.waveform.samples)

    def test_stage2_trains_on_raw_content(self):
        encoder, vae = load_stage1(self.run_cfg, self.data)
        provider = build_provider(self.run_cfg)
        record = self.normals[0]
        item = prepare_item(record, self.store, encoder, provider)
        content = encode_content(self.store.mel16(record), encoder)
        torch.testing.assert_close(item.content, content.frames.float())
        reconstructed = infer_aligned(content, vae, branch=NORMAL)
        self.assertGreater(float((item.content - reconstructed.frames.float()).abs().max()), 0.0)
        self.assertEqual(item.mel.shape[0], target_length(content.T, self.run_cfg.spec16, self.run_cfg.spec22))

    def test_trained_speakers_gate_lookup(self):
        self.assertEqual(trained_speakers(self.data), ["spk00", "spk01"])
        models = PipelineModels.load(self.run_cfg, self.data)
        self.assertEqual(models.speakers, ["spk00", "spk01"])
        provider = build_provider(self.run_cfg, speakers=models.speakers)
        self.assertEqual(resolve_speaker("spk01", provider).vector.shape, (256,))
        with self.assertRaises(ArgumentError):
            resolve_speaker("spk99", provider)

    def test_resolve_speaker(self):
        vector = np.ones(256)
        self.assertAlmostEqual(float(np.linalg.norm(resolve_speaker(SpeakerEmbedding(vector), None).vector)), 1.0)
        with self.assertRaises(DependencyError):
            resolve_speaker("spk00", None)


if __name__ == "__main__":
    unittest.main()
