"""
Tests for the GAN vocoder and the Griffin-Lim fallback
"""

import unittest

import numpy as np
import torch

from src.audio.frame_domains import FrameSpec, MelSpectrogram, Waveform, compute_mel, mel_basis, mel_to_linear_energy
from src.models.griffin_lim import griffin_lim, griffin_lim_history, mel_to_magnitude
from src.models.vocoder import (
    Vocoder,
    VocoderConfig,
    VocoderLossBreakdown,
    VocoderState,
    discriminator_adv_loss,
    finetune_step,
    generate,
    generator_adv_loss,
    vocoder_losses,
)
from src.utils.errors import ArgumentError, DomainError, PairingError

SPEC22 = FrameSpec.synthesis_22k()


def harmonic(n_samples, f0=140.0, rate=22050, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n_samples) / rate
    x = sum(np.sin(2 * np.pi * k * f0 * t) / k for k in range(1, 8))
    return Waveform(0.2 * x / np.max(np.abs(x)) + 0.005 * rng.standard_normal(n_samples), rate)


class TestVocoderConfig(unittest.TestCase):
    def test_presets_multiply_to_hop(self):
        for builder in (VocoderConfig.toy, VocoderConfig.desk_test, VocoderConfig.full_scale):
            cfg = builder()
            self.assertEqual(int(np.prod(cfg.upsample_factors)), cfg.hop)
            self.assertEqual((cfg.lambda_fm, cfg.lambda_mel), (2.0, 45.0))
            self.assertEqual(cfg.betas, (0.8, 0.99))

    def test_invalid_factors(self):
        with self.assertRaises(ArgumentError):
            VocoderConfig(upsample_factors=[8, 8, 2])
        with self.assertRaises(ArgumentError):
            VocoderConfig.desk_test(resblock_kernels=[3, 5])


class TestGenerate(unittest.TestCase):
    """Output length is always T * hop."""

    def setUp(self):
        torch.manual_seed(0)
        self.vocoder = Vocoder(VocoderConfig.desk_test()).eval()

    def test_length_law(self):
        for t in (1, 2, 17, 172, 511, 512):
            mel = MelSpectrogram(np.full((t, 80), -4.0), SPEC22)
            audio = generate(mel, self.vocoder)
            self.assertEqual(len(audio), t * 256)
            self.assertEqual(audio.sample_rate, 22050)
        self.assertEqual(len(generate(MelSpectrogram(np.zeros((172, 80)), SPEC22), self.vocoder)), 44032)

    def test_output_in_range(self):
        audio = generate(MelSpectrogram(np.random.default_rng(0).normal(size=(20, 80)), SPEC22), self.vocoder)
        self.assertTrue(np.all(np.abs(audio.samples) <= 1.0))

    def test_domain_mismatch(self):
        with self.assertRaises(DomainError):
            generate(MelSpectrogram(np.zeros((5, 80)), FrameSpec.analysis_16k()), self.vocoder)
        with self.assertRaises(DomainError):
            generate(MelSpectrogram(np.zeros((5, 40)), FrameSpec.synthesis_22k(n_mels=40)), self.vocoder)


class TestVocoderLosses(unittest.TestCase):
    def test_least_squares_adversarial(self):
        ones, zeros = [torch.ones(4)], [torch.zeros(4)]
        self.assertEqual(discriminator_adv_loss(ones, zeros).item(), 0.0)
        self.assertEqual(generator_adv_loss(ones).item(), 0.0)
        self.assertEqual(generator_adv_loss(zeros).item(), 1.0)

    def test_breakdown_totals(self):
        torch.manual_seed(0)
        vocoder = Vocoder(VocoderConfig.desk_test())
        real = harmonic(4096)
        fake = Waveform(np.zeros(4096), 22050)
        b = vocoder_losses(real, fake, vocoder)
        expected = b.adv_g + 2.0 * b.feature_match + 45.0 * b.mel_recon
        self.assertAlmostEqual(b.total_g, expected, delta=1e-5 * abs(expected) + 1e-6)
        self.assertEqual(b.total_d, b.adv_d)
        self.assertGreater(b.mel_recon, 0.0)
        self.assertEqual(set(b.as_dict()), set(VocoderLossBreakdown.__dataclass_fields__))

    def test_identical_audio_has_no_mel_error(self):
        torch.manual_seed(0)
        vocoder = Vocoder(VocoderConfig.desk_test())
        real = harmonic(4096)
        b = vocoder_losses(real, real, vocoder)
        self.assertAlmostEqual(b.mel_recon, 0.0, places=6)
        self.assertAlmostEqual(b.feature_match, 0.0, places=6)


class TestFinetune(unittest.TestCase):
    """Stage-3 update steps on a single utterance."""

    def setUp(self):
        torch.manual_seed(0)
        self.vocoder = Vocoder(VocoderConfig.desk_test())
        self.reference = harmonic(32 * 256)
        self.mel = compute_mel(self.reference, SPEC22)
        self.mel = MelSpectrogram(self.mel.frames[:32], SPEC22)

    def test_mel_reconstruction_improves(self):
        state = VocoderState.create(self.vocoder, learning_rate=1e-3)
        history = []
        for _ in range(50):
            state, breakdown = finetune_step(self.mel, self.reference, state)
            history.append(breakdown.mel_recon)
        self.assertEqual(state.step, 50)
        self.assertLess(np.mean(history[-5:]), 0.6 * history[0])

    def test_discriminator_and_generator_both_update(self):
        state = VocoderState.create(self.vocoder)
        before = state.snapshot()
        state, _ = finetune_step(self.mel, self.reference, state)
        after = self.vocoder.state_dict()
        changed = {k.split(".")[0] for k in before if not torch.equal(before[k], after[k])}
        self.assertIn("generator", changed)
        self.assertTrue({"mpd", "msd"} & changed)

    def test_reference_length_checked(self):
        state = VocoderState.create(self.vocoder)
        with self.assertRaises(PairingError):
            finetune_step(self.mel, harmonic(10 * 256), state)
        with self.assertRaises(DomainError):
            finetune_step(self.mel, Waveform(np.zeros(32 * 256), 16000), state)


class TestGriffinLim(unittest.TestCase):
    def setUp(self):
        self.mel = compute_mel(harmonic(40 * 256), SPEC22)

    def test_length_and_determinism(self):
        a = griffin_lim(self.mel, n_iters=8, seed=3)
        b = griffin_lim(self.mel, n_iters=8, seed=3)
        self.assertEqual(len(a), self.mel.num_frames * 256)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_convergence_never_increases(self):
        _, history = griffin_lim_history(self.mel, n_iters=16, seed=0)
        self.assertEqual(len(history), 17)
        for prev, cur in zip(history, history[1:]):
            self.assertLessEqual(cur, prev + 1e-8)
        self.assertLess(history[-1], history[0])

    def test_magnitude_reproduces_mel_energy(self):
        magnitude = mel_to_magnitude(self.mel)
        self.assertEqual(magnitude.shape, (1024 // 2 + 1, self.mel.num_frames))
        self.assertTrue(np.all(magnitude >= 0))
        energy = mel_to_linear_energy(self.mel).T
        refit = mel_basis(SPEC22) @ magnitude**2
        self.assertLess(np.linalg.norm(refit - energy) / np.linalg.norm(energy), 0.1)

    def test_negative_iterations(self):
        with self.assertRaises(ArgumentError):
            griffin_lim(self.mel, n_iters=-1)


if __name__ == "__main__":
    unittest.main()
