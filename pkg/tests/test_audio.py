"""
Tests for frame domains, the W2SF feature container and prosody extraction
"""

import os
import tempfile
import unittest

import numpy as np
import torch

from src.audio.features import ALIGNED_22K, FeatureSequence, read_feature_file, write_feature_file
from src.audio.frame_domains import (
    LOG_FLOOR,
    FrameSpec,
    MelSpectrogram,
    MelTransform,
    Waveform,
    compute_mel,
    load_wav,
    match_length,
    mel_center_frequencies,
    num_frames,
    resample,
    save_wav,
)
from src.audio.prosody import ProsodyTargets, extract_pitch, extract_prosody, load_prosody, save_prosody
from src.utils.errors import ArgumentError, DomainError, FormatError, InputTooShortError, ShapeError


def sine(freq, seconds, rate, amplitude=0.5):
    t = np.arange(int(seconds * rate)) / rate
    return Waveform(amplitude * np.sin(2 * np.pi * freq * t), rate)


class TestFrameSpec(unittest.TestCase):
    def test_defaults(self):
        spec16, spec22 = FrameSpec.analysis_16k(), FrameSpec.synthesis_22k()
        self.assertEqual((spec16.sample_rate, spec16.hop, spec16.win, spec16.n_fft), (16000, 160, 400, 400))
        self.assertEqual((spec22.sample_rate, spec22.hop, spec22.win, spec22.n_fft), (22050, 256, 1024, 1024))
        self.assertAlmostEqual(spec16.frame_period, 0.01)

    def test_validation(self):
        with self.assertRaises(ArgumentError):
            FrameSpec.analysis_16k(hop=0)
        with self.assertRaises(ArgumentError):
            FrameSpec.analysis_16k(win=512)
        with self.assertRaises(ArgumentError):
            FrameSpec.analysis_16k(fmax=9000.0)


class TestMelExtraction(unittest.TestCase):
    """Frame counts, mel shape and the log floor."""

    def test_num_frames(self):
        spec = FrameSpec.analysis_16k()
        self.assertEqual(num_frames(16000, spec), 101)
        self.assertEqual(num_frames(400, spec), 3)
        with self.assertRaises(InputTooShortError):
            num_frames(399, spec)

    def test_one_second_at_16k(self):
        mel = compute_mel(sine(440, 1.0, 16000), FrameSpec.analysis_16k())
        self.assertEqual(mel.frames.shape, (101, 80))

    def test_silence_hits_the_floor(self):
        mel = compute_mel(Waveform(np.zeros(22050), 22050), FrameSpec.synthesis_22k())
        np.testing.assert_allclose(mel.frames, np.log(LOG_FLOOR))

    def test_rate_mismatch(self):
        with self.assertRaises(DomainError):
            compute_mel(sine(440, 1.0, 22050), FrameSpec.analysis_16k())

    def test_sine_energy_in_matching_band(self):
        spec = FrameSpec.synthesis_22k()
        mel = compute_mel(sine(1000, 0.5, 22050), spec)
        peak_bins = np.argmax(mel.frames[5:-5], axis=1)
        centres = mel_center_frequencies(spec)
        self.assertTrue(np.all(np.abs(centres[peak_bins] - 1000) < 150))

    def test_mel_transform_agrees(self):
        spec = FrameSpec.synthesis_22k()
        rng = np.random.default_rng(0)
        wave = Waveform(0.3 * rng.standard_normal(8192), 22050)
        reference = compute_mel(wave, spec).frames
        torch_mel = MelTransform(spec)(torch.from_numpy(wave.samples))[0].numpy()
        self.assertEqual(torch_mel.shape, reference.shape)
        np.testing.assert_allclose(torch_mel, reference, atol=1e-4)

    def test_mel_spectrogram_validation(self):
        spec = FrameSpec.synthesis_22k()
        with self.assertRaises(DomainError):
            MelSpectrogram(np.zeros((4, 40)), spec)
        with self.assertRaises(ArgumentError):
            MelSpectrogram(np.full((4, 80), np.nan), spec)


class TestWaveformUtilities(unittest.TestCase):
    def test_resample_length(self):
        out = resample(sine(200, 1.0, 22050), 16000)
        self.assertEqual(out.sample_rate, 16000)
        self.assertEqual(len(out), 16000)

    def test_resample_identity(self):
        w = sine(200, 0.1, 16000)
        np.testing.assert_array_equal(resample(w, 16000).samples, w.samples)

    def test_match_length(self):
        x = np.arange(6, dtype=float).reshape(3, 2)
        np.testing.assert_array_equal(match_length(x, 2), x[:2])
        padded = match_length(x, 5)
        self.assertEqual(padded.shape, (5, 2))
        np.testing.assert_array_equal(padded[-1], x[-1])
        t = match_length(torch.from_numpy(x), 4)
        self.assertEqual(tuple(t.shape), (4, 2))

    def test_wav_io(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "a.wav")
            w = sine(300, 0.2, 22050)
            save_wav(w, path, subtype="FLOAT")
            loaded = load_wav(path, expected_rate=22050)
            np.testing.assert_allclose(loaded.samples, w.samples, atol=1e-6)
            with self.assertRaises(DomainError):
                load_wav(path, expected_rate=16000)

            bogus = os.path.join(tmp, "bogus.wav")
            with open(bogus, "wb") as f:
                f.write(b"not a wav file at all")
            with self.assertRaises(FormatError):
                load_wav(bogus)
        with self.assertRaises(FileNotFoundError):
            load_wav("/nonexistent/file.wav")


class TestFeatureContainer(unittest.TestCase):
    def test_write_and_read(self):
        matrix = np.arange(12, dtype=np.float32).reshape(4, 3)
        with tempfile.TemporaryDirectory() as tmp:
            path = write_feature_file(matrix, os.path.join(tmp, "f.w2sf"))
            self.assertEqual(os.path.getsize(path), 16 + 4 * 12)
            np.testing.assert_array_equal(read_feature_file(path), matrix)

    def test_corrupt_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "bad.w2sf")
            with open(path, "wb") as f:
                f.write(b"XXXX" + bytes(12))
            with self.assertRaises(FormatError):
                read_feature_file(path)

            path = write_feature_file(np.zeros((4, 3)), os.path.join(tmp, "trunc.w2sf"))
            with open(path, "r+b") as f:
                f.truncate(20)
            with self.assertRaises(FormatError):
                read_feature_file(path)

    def test_feature_sequence(self):
        seq = FeatureSequence(np.zeros((5, 3)), domain=ALIGNED_22K)
        self.assertEqual((seq.T, seq.d), (5, 3))
        with self.assertRaises(ArgumentError):
            FeatureSequence(np.zeros((5, 3)), domain="nowhere")
        with self.assertRaises(ArgumentError):
            FeatureSequence(np.zeros(5))


class TestProsody(unittest.TestCase):
    """Pitch, voicing and energy targets."""

    def setUp(self):
        self.spec = FrameSpec.synthesis_22k()

    def test_sine_pitch(self):
        pitch, voicing = extract_pitch(sine(200, 0.5, 22050), self.spec)
        middle = slice(5, -5)
        self.assertTrue(np.all(voicing[middle]))
        f0 = np.exp(pitch[middle])
        self.assertTrue(np.all(np.abs(f0 - 200) / 200 < 0.03))

    def test_noise_is_unvoiced(self):
        rng = np.random.default_rng(0)
        _, voicing = extract_pitch(Waveform(0.3 * rng.standard_normal(22050), 22050), self.spec)
        self.assertLess(voicing.mean(), 0.3)

    def test_silence(self):
        pitch, voicing = extract_pitch(Waveform(np.zeros(11025), 22050), self.spec)
        self.assertFalse(voicing.any())
        self.assertTrue(np.all(pitch == 0))

    def test_extract_prosody_lengths(self):
        w = sine(150, 0.4, 22050)
        mel = compute_mel(w, self.spec)
        targets = extract_prosody(w, mel)
        self.assertEqual(len(targets), mel.num_frames)
        self.assertTrue(np.all(targets.energy >= 0))

    def test_crop_or_pad_and_file_round_trip(self):
        targets = ProsodyTargets(pitch=[5.0, 5.1, 0.0], energy=[1.0, 2.0, 0.5], voicing=[True, True, False])
        padded = targets.crop_or_pad(5)
        self.assertEqual(len(padded), 5)
        self.assertFalse(padded.voicing[-1])
        with tempfile.TemporaryDirectory() as tmp:
            loaded = load_prosody(save_prosody(targets, os.path.join(tmp, "p.w2sf")))
        np.testing.assert_allclose(loaded.pitch, targets.pitch)
        np.testing.assert_array_equal(loaded.voicing, targets.voicing)

    def test_validation(self):
        with self.assertRaises(ShapeError):
            ProsodyTargets(pitch=[1.0, 2.0], energy=[1.0], voicing=[True, False])
        with self.assertRaises(ShapeError):
            ProsodyTargets(pitch=[1.0], energy=[-1.0], voicing=[True])


if __name__ == "__main__":
    unittest.main()
