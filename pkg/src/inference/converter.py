"""
Whisper-to-Speech Converter
End-to-end conversion: 16 kHz log-mel -> content encoder -> whisper-branch VAE
reconstruction -> Length-Channel Aligner -> acoustic model -> vocoder. Without a
Stage-3 checkpoint the waveform comes from Griffin-Lim.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import torch

from src.alignment.length_channel_aligner import LengthChannelAligner, align, target_length
from src.audio.frame_domains import MelSpectrogram, Waveform, compute_mel, load_wav, resample
from src.audio.prosody import ProsodyTargets
from src.collectors.manifest import UtteranceRecord
from src.collectors.speaker_embedding import SpeakerEmbeddingProvider
from src.models.acoustic_model import INFER, AcousticModel, SpeakerEmbedding, acoustic_forward
from src.models.conformer_vae import WHISPER, ConformerVAE, infer_aligned
from src.models.content_encoder import ContentEncoder, encode_content
from src.models.griffin_lim import griffin_lim
from src.models.vocoder import Vocoder, generate
from src.trainers.stage1 import load_stage1
from src.trainers.stage2 import load_stage2, trained_speakers
from src.utils.config_manager import RunConfig
from src.utils.data_manager import DataManager
from src.utils.errors import DependencyError, FormatError

logger = logging.getLogger(__name__)

AudioSource = Union[Waveform, str, Path]
SpeakerSource = Union[SpeakerEmbedding, UtteranceRecord, Waveform, str]


@dataclass
class PipelineModels:
    """Every trained module the conversion path needs; vocoder is None for the Griffin-Lim fallback."""

    run: RunConfig
    encoder: ContentEncoder
    vae: ConformerVAE
    aligner: LengthChannelAligner
    acoustic: AcousticModel
    vocoder: Optional[Vocoder] = None
    speakers: Optional[List[str]] = None

    @classmethod
    def load(cls, run: RunConfig, data: DataManager, require_vocoder: bool = False) -> "PipelineModels":
        encoder, vae = load_stage1(run, data)
        aligner, acoustic = load_stage2(run, data)
        vocoder = None
        if data.has_checkpoint("stage3"):
            vocoder = Vocoder(run.vocoder)
            data.restore(data.load_checkpoint("stage3"), {"vocoder": vocoder})
            vocoder.eval()
        elif require_vocoder:
            raise DependencyError(f"stage3 checkpoint not found in {data.checkpoint_dir}")
        else:
            logger.info("no stage3 checkpoint; using the Griffin-Lim fallback vocoder")
        return cls(run, encoder, vae, aligner, acoustic, vocoder, trained_speakers(data))


@dataclass
class ConversionResult:
    waveform: Waveform
    mel: MelSpectrogram
    prosody: ProsodyTargets
    t_enc: int
    vocoder: str

    @property
    def t22(self) -> int:
        return self.mel.num_frames


def _as_waveform(audio: AudioSource) -> Waveform:
    if isinstance(audio, Waveform):
        return audio
    if isinstance(audio, (str, Path)):
        return load_wav(audio)
    raise FormatError(f"expected a waveform or a WAV path, got {type(audio).__name__}")


@torch.no_grad()
def predict_mel(
    mel16: MelSpectrogram, speaker: SpeakerEmbedding, models: PipelineModels, branch: Optional[str] = WHISPER
):
    """Stages 1-2 on one utterance: returns (predicted 22.05 kHz mel, predicted prosody, T_enc).

    branch=None skips the VAE and feeds raw content features to the aligner,
    which is how Stage 2 was trained on normal speech.
    """
    content = encode_content(mel16, models.encoder)
    features = content if branch is None else infer_aligned(content, models.vae, branch=branch)
    aligned = align(features, models.aligner)
    mel, prosody = acoustic_forward(aligned, speaker, models.acoustic, mode=INFER)
    expected = target_length(content.T, models.run.spec16, models.run.spec22)
    assert mel.num_frames == expected, (mel.num_frames, expected)
    return mel, prosody, content.T


def resolve_speaker(speaker_ref: SpeakerSource, provider: Optional[SpeakerEmbeddingProvider]) -> SpeakerEmbedding:
    if isinstance(speaker_ref, SpeakerEmbedding):
        return speaker_ref.normalized()
    if provider is None:
        raise DependencyError("a speaker embedding provider is needed to embed the speaker reference")
    return provider.embed(speaker_ref)


def convert_utterance(
    whisper: AudioSource,
    speaker_ref: SpeakerSource,
    models: PipelineModels,
    provider: Optional[SpeakerEmbeddingProvider] = None,
    griffin_lim_iters: Optional[int] = None,
) -> ConversionResult:
    """
    Convert one whispered utterance.

    Args:
        whisper: whispered waveform (any rate, resampled to 16 kHz) or WAV path
        speaker_ref: target speaker as an embedding, record, waveform or speaker id
        models: loaded pipeline
        provider: embeds speaker_ref when it is not already an embedding
        griffin_lim_iters: fallback vocoder iterations (evaluation.griffin_lim_iters when omitted)

    Returns:
        ConversionResult whose waveform has target_length(T_enc) * hop samples at 22.05 kHz
    """
    wave = _as_waveform(whisper)
    run = models.run
    if wave.sample_rate != run.spec16.sample_rate:
        wave = resample(wave, run.spec16.sample_rate)
    mel16 = compute_mel(wave, run.spec16)
    speaker = resolve_speaker(speaker_ref, provider)
    mel22, prosody, t_enc = predict_mel(mel16, speaker, models)
    if models.vocoder is not None:
        audio, used = generate(mel22, models.vocoder), "hifigan"
    else:
        if griffin_lim_iters is None:
            griffin_lim_iters = int(run.section("evaluation").get("griffin_lim_iters", 32))
        audio, used = griffin_lim(mel22, n_iters=griffin_lim_iters, seed=run.seed), "griffin-lim"
    return ConversionResult(audio, mel22, prosody, t_enc, used)


def convert(
    whisper: AudioSource,
    speaker_ref: SpeakerSource,
    models: PipelineModels,
    provider: Optional[SpeakerEmbeddingProvider] = None,
) -> Waveform:
    return convert_utterance(whisper, speaker_ref, models, provider).waveform
