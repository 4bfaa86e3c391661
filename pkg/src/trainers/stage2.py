"""
Stage 2 Trainer
Trains the Length-Channel Aligner and the acoustic model on normal speech only.
Inputs are raw content-encoder features of normal speech (16 kHz mel ->
frozen Stage-1 content encoder); the VAE is not on this path.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch
from tqdm import tqdm

from src.alignment.length_channel_aligner import LengthChannelAligner, lengths_to_mask, target_length
from src.audio.frame_domains import match_length
from src.collectors.manifest import UtteranceRecord, assert_normal_only
from src.collectors.speaker_embedding import SpeakerEmbeddingProvider
from src.collectors.utterance_store import UtteranceStore
from src.models.acoustic_model import TRAIN, AcousticModel, ProsodyBatch, stage2_loss
from src.models.content_encoder import ContentEncoder, encode_content
from src.trainers.common import (
    BatchSampler,
    TrainingResult,
    build_provider,
    clipped_step,
    log_progress,
    make_optimizer,
    pad_batch,
    seed_everything,
)
from src.trainers.stage1 import load_stage1
from src.utils.config_manager import RunConfig
from src.utils.data_manager import DataManager
from src.utils.errors import ArgumentError

logger = logging.getLogger(__name__)

STAGE = "stage2"


@dataclass
class Stage2Item:
    """One normal utterance with inputs and targets already at its target length."""

    utt_id: str
    content: torch.Tensor
    mel: torch.Tensor
    prosody: ProsodyBatch
    speaker: torch.Tensor


def build_stage2(run: RunConfig) -> Tuple[LengthChannelAligner, AcousticModel]:
    return LengthChannelAligner(run.aligner), AcousticModel(run.acoustic)


def load_stage2(run: RunConfig, data: DataManager) -> Tuple[LengthChannelAligner, AcousticModel]:
    payload = data.load_checkpoint(STAGE)
    aligner, acoustic = build_stage2(run)
    data.restore(payload, {"aligner": aligner, "acoustic": acoustic})
    for module in (aligner, acoustic):
        module.eval()
        module.requires_grad_(False)
    return aligner, acoustic


def trained_speakers(data: DataManager) -> Optional[List[str]]:
    """Speaker ids Stage 2 was trained on; None for checkpoints that predate the record."""
    speakers = data.load_checkpoint(STAGE).get("metadata", {}).get("speakers")
    return None if speakers is None else list(speakers)


@torch.no_grad()
def prepare_item(
    record: UtteranceRecord,
    store: UtteranceStore,
    encoder: ContentEncoder,
    provider: SpeakerEmbeddingProvider,
) -> Stage2Item:
    content = encode_content(store.mel16(record), encoder)
    t22 = target_length(content.T, store.spec16, store.spec22)
    mel = match_length(store.mel22(record).frames, t22)
    prosody = store.prosody(record).crop_or_pad(t22)
    speaker = provider.embed(record)
    return Stage2Item(
        utt_id=record.utt_id,
        content=content.frames.float(),
        mel=torch.as_tensor(mel, dtype=torch.float32),
        prosody=ProsodyBatch.from_targets(prosody),
        speaker=speaker.tensor(content.frames.float()),
    )


def collate(items: List[Stage2Item]):
    """Pad a list of items; returns (content, enc_lengths, mel, ProsodyBatch, speaker)."""
    content, enc_lengths = pad_batch([it.content for it in items])
    mel, _ = pad_batch([it.mel for it in items])
    pitch, _ = pad_batch([it.prosody.pitch for it in items])
    log_energy, _ = pad_batch([it.prosody.log_energy for it in items])
    voicing, _ = pad_batch([it.prosody.voicing.float() for it in items])
    speaker = torch.stack([it.speaker.reshape(-1) for it in items])
    return content, enc_lengths, mel, ProsodyBatch(pitch, log_energy, voicing > 0.5), speaker


def train_stage2(
    run: RunConfig,
    records: Sequence[UtteranceRecord],
    data: DataManager,
    store: Optional[UtteranceStore] = None,
    provider: Optional[SpeakerEmbeddingProvider] = None,
    show_progress: bool = False,
) -> TrainingResult:
    """
    Fit aligner + acoustic model on normal utterances.

    Args:
        run: typed run configuration
        records: normal-style records; any whisper record is rejected
        data: checkpoint/history persistence (must hold the Stage-1 checkpoint)
        store: optional feature cache
        provider: speaker embedding provider; built from the config when omitted

    Returns:
        TrainingResult with the checkpoint path and per-step loss breakdowns
    """
    records = list(records)
    assert_normal_only(records)
    if not records:
        raise ArgumentError("stage 2 needs at least one normal utterance")
    opt_cfg = run.optimizer(STAGE)
    store = store or UtteranceStore(records, run.spec16, run.spec22)
    speakers = sorted({r.speaker for r in records})
    provider = provider or build_provider(run, speakers=speakers)
    encoder, _ = load_stage1(run, data)

    items = [prepare_item(r, store, encoder, provider) for r in records]
    logger.info("stage 2: %d normal utterances, %d steps", len(items), opt_cfg.steps)

    seed_everything(run.seed)
    aligner, acoustic = build_stage2(run)
    aligner.train()
    acoustic.train()
    optimizer = make_optimizer([aligner, acoustic], opt_cfg)
    sampler = BatchSampler(len(items), opt_cfg.batch_size, run.seed)

    history = []
    for step in tqdm(range(1, opt_cfg.steps + 1), desc="stage 2", disable=not show_progress):
        content, enc_lengths, target_mel, targets, speaker = collate([items[i] for i in sampler.next_batch()])
        aligned, t22s = aligner(content, enc_lengths)
        mask = lengths_to_mask(t22s, aligned.shape[1], aligned.device)
        pred_mel, pred_prosody = acoustic(aligned, speaker, mask, targets, mode=TRAIN)
        total, breakdown = stage2_loss(pred_mel, target_mel, pred_prosody, targets, run.acoustic, mask)
        clipped_step(optimizer, total, opt_cfg.grad_clip)
        losses = {"step": step, **breakdown.as_dict()}
        history.append(losses)
        if step % opt_cfg.log_interval == 0 or step == opt_cfg.steps:
            log_progress(STAGE, step, opt_cfg.steps, losses)

    checkpoint = data.save_checkpoint(
        STAGE,
        {"aligner": aligner, "acoustic": acoustic},
        run.tree,
        step=opt_cfg.steps,
        optimizers={"adam": optimizer},
        metadata={"speakers": speakers},
    )
    history_path = data.save_history(history, data.history_path(STAGE), STAGE)
    return TrainingResult(STAGE, checkpoint, history, history_path)
