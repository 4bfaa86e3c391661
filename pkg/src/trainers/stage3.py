"""
Stage 3 Trainer
Runs every normal training utterance through the trained Stages 1-2, caches the
predicted mels, and fine-tunes the GAN vocoder on (predicted mel, recorded
waveform) pairs.
"""

import logging
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from src.audio.frame_domains import PREDICTED, MelSpectrogram, Waveform, match_length
from src.collectors.manifest import UtteranceRecord, assert_normal_only
from src.collectors.speaker_embedding import SpeakerEmbeddingProvider
from src.collectors.utterance_store import UtteranceStore
from src.inference.converter import PipelineModels, predict_mel
from src.models.vocoder import Vocoder, VocoderState, finetune_step
from src.trainers.common import TrainingResult, build_provider, log_progress, seed_everything
from src.trainers.stage1 import load_stage1
from src.trainers.stage2 import load_stage2, trained_speakers
from src.utils.config_manager import RunConfig
from src.utils.data_manager import DataManager
from src.utils.errors import ArgumentError, ProvenanceError

logger = logging.getLogger(__name__)

STAGE = "stage3"


def audit_provenance(mels: Iterable[MelSpectrogram]) -> int:
    """Every vocoder training input must be a predicted mel; returns how many were checked."""
    count = 0
    for mel in mels:
        if mel.provenance != PREDICTED:
            raise ProvenanceError(
                f"mel for {mel.utt_id or '<unnamed>'} is tagged {mel.provenance!r}; "
                f"stage 3 fine-tunes on {PREDICTED!r} mels only"
            )
        count += 1
    return count


def cache_predicted_mels(
    records: Sequence[UtteranceRecord],
    models: PipelineModels,
    store: UtteranceStore,
    provider: SpeakerEmbeddingProvider,
    data: DataManager,
) -> List[MelSpectrogram]:
    """Predict, persist and reload a mel for each record from its raw content features."""
    mels = []
    for record in records:
        mel, _, _ = predict_mel(store.mel16(record), provider.embed(record), models, branch=None)
        data.save_cached_mel(mel, record.utt_id)
        mels.append(data.load_cached_mel(record.utt_id))
    return mels


def random_segment(
    mel: MelSpectrogram, reference: Waveform, segment_frames: int, rng: np.random.Generator
) -> Tuple[MelSpectrogram, Waveform]:
    """Matching crops of a mel and its T * hop reference; whole utterance when shorter than the segment."""
    hop = mel.spec.hop
    if segment_frames <= 0 or mel.num_frames <= segment_frames:
        return mel, reference
    start = int(rng.integers(0, mel.num_frames - segment_frames + 1))
    frames = mel.frames[start : start + segment_frames]
    samples = reference.samples[start * hop : (start + segment_frames) * hop]
    return MelSpectrogram(frames, mel.spec, mel.provenance, utt_id=mel.utt_id), Waveform(samples, reference.sample_rate)


def train_stage3(
    run: RunConfig,
    records: Sequence[UtteranceRecord],
    data: DataManager,
    store: Optional[UtteranceStore] = None,
    provider: Optional[SpeakerEmbeddingProvider] = None,
    show_progress: bool = False,
) -> TrainingResult:
    """
    Fine-tune the vocoder on Stage-2 predictions.

    Args:
        run: typed run configuration
        records: normal-style training records
        data: persistence; must hold the Stage-1 and Stage-2 checkpoints
        store: optional feature cache
        provider: speaker embedding provider; built from the config when omitted

    Returns:
        TrainingResult with the vocoder checkpoint and per-step loss breakdowns
    """
    records = list(records)
    assert_normal_only(records)
    if not records:
        raise ArgumentError("stage 3 needs at least one normal utterance")
    section = run.section(STAGE)
    opt_cfg = run.optimizer(STAGE)
    encoder, vae = load_stage1(run, data)
    aligner, acoustic = load_stage2(run, data)
    models = PipelineModels(run, encoder, vae, aligner, acoustic)
    store = store or UtteranceStore(records, run.spec16, run.spec22)
    provider = provider or build_provider(run, speakers=trained_speakers(data))

    mels = cache_predicted_mels(records, models, store, provider, data)
    checked = audit_provenance(mels)
    logger.info("stage 3: %d predicted mels cached and audited", checked)
    references = [
        Waveform(match_length(store.waveform22(r).samples, mel.num_frames * mel.spec.hop), run.spec22.sample_rate)
        for r, mel in zip(records, mels)
    ]

    seed_everything(run.seed)
    vocoder = Vocoder(run.vocoder)
    init_checkpoint = section.get("init_checkpoint")
    if init_checkpoint:
        data.restore(data.load_checkpoint(STAGE, init_checkpoint), {"vocoder": vocoder})
        logger.info("stage 3: starting from %s", init_checkpoint)
    state = VocoderState.create(vocoder)
    rng = np.random.default_rng(run.seed)
    segment_frames = int(section.get("segment_frames", 0))

    history = []
    for step in tqdm(range(1, opt_cfg.steps + 1), desc="stage 3", disable=not show_progress):
        i = int(rng.integers(0, len(mels)))
        mel, reference = random_segment(mels[i], references[i], segment_frames, rng)
        state, breakdown = finetune_step(mel, reference, state)
        losses = {"step": step, **breakdown.as_dict()}
        history.append(losses)
        if step % opt_cfg.log_interval == 0 or step == opt_cfg.steps:
            log_progress(STAGE, step, opt_cfg.steps, losses)

    vocoder.eval()
    checkpoint = data.save_checkpoint(
        STAGE,
        {"vocoder": vocoder},
        run.tree,
        step=opt_cfg.steps,
        optimizers={"generator": state.opt_g, "discriminator": state.opt_d},
    )
    history_path = data.save_history(history, data.history_path(STAGE), STAGE)
    return TrainingResult(STAGE, checkpoint, history, history_path)
